// Client session state: a pure function of server messages plus local input.
// The renderer reads this store every animation frame; socket callbacks only
// mutate it through applyServerMessage.

import type { ClipEntry, ServerMessage, StateFrame } from "./protocol.js";

export const STALE_AFTER_MS = 250;

export interface PendingEntry {
  kind: string;
  sentAt: number;
}

export interface Toast {
  text: string;
  at: number;
}

export interface ClientStore {
  connected: boolean;
  modelName: string;
  numJoints: number;
  jointParents: number[];
  bodyNames: string[];
  clips: ClipEntry[];
  lastFrame: StateFrame | null;
  lastFrameAt: number; // local clock ms
  framesReceived: number;
  pending: Map<number, PendingEntry>;
  acked: number;
  toasts: Toast[];
  hitIndicatorUntil: number;
}

export function createStore(): ClientStore {
  return {
    connected: false,
    modelName: "",
    numJoints: 0,
    jointParents: [],
    bodyNames: [],
    clips: [],
    lastFrame: null,
    lastFrameAt: 0,
    framesReceived: 0,
    pending: new Map(),
    acked: 0,
    toasts: [],
    hitIndicatorUntil: 0,
  };
}

export function markPending(store: ClientStore, seq: number, kind: string, now: number): void {
  store.pending.set(seq, { kind, sentAt: now });
}

export function applyServerMessage(store: ClientStore, msg: ServerMessage, now: number): void {
  switch (msg.type) {
    case "hello":
      store.modelName = msg.model_name;
      store.numJoints = msg.num_joints;
      store.jointParents = msg.joint_parents ?? [];
      store.bodyNames = msg.body_names ?? [];
      break;
    case "clip_library":
      store.clips = msg.clips;
      break;
    case "state_frame":
      store.lastFrame = msg;
      store.lastFrameAt = now;
      store.framesReceived += 1;
      break;
    case "ack": {
      const entry = store.pending.get(msg.seq);
      store.pending.delete(msg.seq);
      store.acked += 1;
      if (entry?.kind === "apply_impulse") {
        store.hitIndicatorUntil = now + 400;
      }
      break;
    }
    case "error":
      store.pending.delete(msg.seq);
      store.toasts.push({ text: `${msg.code}: ${msg.message}`, at: now });
      if (store.toasts.length > 5) store.toasts.shift();
      break;
  }
}

// A dropped frame keeps rendering; after STALE_AFTER_MS the view is flagged.
export function isStale(store: ClientStore, now: number): boolean {
  if (store.lastFrame === null) return true;
  return now - store.lastFrameAt > STALE_AFTER_MS;
}

export function onDisconnect(store: ClientStore): void {
  store.connected = false;
  store.pending.clear();
}

export function onConnect(store: ClientStore): void {
  // the server replays hello + clip library on every connection, so the
  // store just resumes; no page reload needed
  store.connected = true;
}
