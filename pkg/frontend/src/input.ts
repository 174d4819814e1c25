// Keyboard steering: arrows / WASD map to heading and speed commands,
// streamed at a bounded rate while keys are held; releasing everything
// emits exactly one stop command.

import { RateLimiter } from "./rate.js";
import type { SetCommand } from "./protocol.js";

export interface CommandState {
  heading: number;
  speed: number;
  gait: string;
}

const TURN_STEP = Math.PI / 48; // per emitted command while turning

export class KeyboardController {
  private held = new Set<string>();
  private heading = 0;
  private gait: string;
  private limiter: RateLimiter;
  private stopPending = false;

  constructor(gait = "sway", maxPerSecond = 20) {
    this.gait = gait;
    this.limiter = new RateLimiter(maxPerSecond);
  }

  setGait(gait: string): void {
    this.gait = gait;
  }

  keyDown(code: string): void {
    if (RELEVANT.has(code)) this.held.add(code);
  }

  keyUp(code: string): void {
    if (!RELEVANT.has(code)) return;
    this.held.delete(code);
    if (!this.anyMotionKey()) this.stopPending = true;
  }

  private anyMotionKey(): boolean {
    for (const k of this.held) if (RELEVANT.has(k)) return true;
    return false;
  }

  current(): CommandState {
    let speed = 0;
    if (this.held.has("ArrowUp") || this.held.has("KeyW")) speed = 1.0;
    if (this.held.has("ArrowDown") || this.held.has("KeyS")) speed = 0.5;
    if (this.held.has("ShiftLeft") && speed > 0) speed *= 1.5;
    if (this.held.has("ArrowLeft") || this.held.has("KeyA")) this.heading += TURN_STEP;
    if (this.held.has("ArrowRight") || this.held.has("KeyD")) this.heading -= TURN_STEP;
    return { heading: this.heading, speed, gait: this.gait };
  }

  // Called every animation tick; returns at most one rate-limited command.
  poll(now: number, nextSeq: () => number): SetCommand | null {
    if (this.stopPending) {
      this.stopPending = false;
      const cmd = this.current();
      return { type: "set_command", seq: nextSeq(), heading: cmd.heading, speed: 0, gait: this.gait };
    }
    if (!this.anyMotionKey()) return null;
    if (!this.limiter.tryAcquire(now)) return null;
    const cmd = this.current();
    return {
      type: "set_command",
      seq: nextSeq(),
      heading: cmd.heading,
      speed: cmd.speed,
      gait: cmd.gait,
    };
  }
}

const RELEVANT = new Set([
  "ArrowUp", "ArrowDown", "ArrowLeft", "ArrowRight",
  "KeyW", "KeyA", "KeyS", "KeyD", "ShiftLeft",
]);
