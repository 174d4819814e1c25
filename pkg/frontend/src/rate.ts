// Outbound message pacing. Commands are capped per-channel (keyboard holds
// stream at <= 20 msg/s) and the socket enforces an aggregate cap.

export class RateLimiter {
  private lastSent = -Infinity;
  private readonly minInterval: number;

  constructor(maxPerSecond: number) {
    this.minInterval = 1000 / maxPerSecond;
  }

  tryAcquire(now: number): boolean {
    if (now - this.lastSent >= this.minInterval) {
      this.lastSent = now;
      return true;
    }
    return false;
  }
}

export class AggregateLimiter {
  private stamps: number[] = [];

  constructor(private maxPerSecond: number) {}

  tryAcquire(now: number): boolean {
    const cutoff = now - 1000;
    while (this.stamps.length > 0 && this.stamps[0] <= cutoff) {
      this.stamps.shift();
    }
    if (this.stamps.length >= this.maxPerSecond) return false;
    this.stamps.push(now);
    return true;
  }
}
