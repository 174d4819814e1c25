// WebSocket wrapper: decode incoming lines, cap outbound rate, reconnect
// with backoff. The server replays hello and the clip library on every
// connection, so reconnects resume rendering without a page reload.

import { AggregateLimiter } from "./rate.js";
import { decode, encode, type ClientMessage, type ServerMessage } from "./protocol.js";

export interface NetCallbacks {
  onMessage(msg: ServerMessage): void;
  onOpen(): void;
  onClose(): void;
}

export class Connection {
  private ws: WebSocket | null = null;
  private aggregate = new AggregateLimiter(30);
  private seq = 1;
  private closed = false;
  private backoffMs = 500;

  constructor(private url: string, private callbacks: NetCallbacks) {}

  nextSeq = (): number => this.seq++;

  connect(): void {
    if (this.closed) return;
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = 500;
      this.callbacks.onOpen();
    };
    ws.onmessage = (ev) => {
      try {
        this.callbacks.onMessage(decode(String(ev.data)));
      } catch (e) {
        console.warn("bad server message", e);
      }
    };
    ws.onclose = () => {
      this.callbacks.onClose();
      this.ws = null;
      if (!this.closed) {
        setTimeout(() => this.connect(), this.backoffMs);
        this.backoffMs = Math.min(this.backoffMs * 2, 5000);
      }
    };
  }

  send(msg: ClientMessage, now: number): boolean {
    if (this.ws === null || this.ws.readyState !== WebSocket.OPEN) return false;
    if (!this.aggregate.tryAcquire(now)) return false;
    this.ws.send(encode(msg));
    return true;
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
