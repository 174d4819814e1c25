import { describe, expect, it } from "vitest";

import type { StateFrame } from "../src/protocol.js";
import {
  applyServerMessage,
  createStore,
  isStale,
  markPending,
  onConnect,
  onDisconnect,
  STALE_AFTER_MS,
} from "../src/store.js";

function frame(tick: number): StateFrame {
  return {
    type: "state_frame",
    tick,
    actual: {
      root_pos: [0, 0, 1],
      root_quat: [1, 0, 0, 0],
      joint_pos: [0.3, 0, 1],
      joint_quats: [1, 0, 0, 0],
      root_vel: [0, 0, 0],
      root_angvel: [0, 0, 0],
    },
    target: null,
    reward_terms: {},
    reward_total: 1,
    buffer_len: 0,
    status: "running",
  };
}

describe("store", () => {
  it("applies hello and clip library", () => {
    const s = createStore();
    applyServerMessage(
      s,
      {
        type: "hello", version: 1, model_name: "chain3", num_joints: 3,
        joint_parents: [-1, 0, 1], body_names: ["link0", "link1"],
      },
      0,
    );
    applyServerMessage(
      s,
      { type: "clip_library", clips: [{ id: "sway", label_path: ["root"], frames: 241, fps: 60 }] },
      0,
    );
    expect(s.modelName).toBe("chain3");
    expect(s.jointParents).toEqual([-1, 0, 1]);
    expect(s.clips).toHaveLength(1);
  });

  it("tracks frames and staleness", () => {
    const s = createStore();
    expect(isStale(s, 0)).toBe(true); // nothing yet
    applyServerMessage(s, frame(1), 1000);
    expect(isStale(s, 1000 + STALE_AFTER_MS - 1)).toBe(false);
    expect(isStale(s, 1000 + STALE_AFTER_MS + 1)).toBe(true);
    // last frame persists for rendering even when stale
    expect(s.lastFrame?.tick).toBe(1);
  });

  it("resolves pending seqs on ack", () => {
    const s = createStore();
    markPending(s, 5, "enqueue_clip", 0);
    expect(s.pending.size).toBe(1);
    applyServerMessage(s, { type: "ack", seq: 5 }, 1);
    expect(s.pending.size).toBe(0);
    expect(s.acked).toBe(1);
  });

  it("ack of an impulse lights the hit indicator", () => {
    const s = createStore();
    markPending(s, 6, "apply_impulse", 0);
    applyServerMessage(s, { type: "ack", seq: 6 }, 100);
    expect(s.hitIndicatorUntil).toBeGreaterThan(100);
  });

  it("errors surface as toasts with the server code", () => {
    const s = createStore();
    markPending(s, 7, "enqueue_clip", 0);
    applyServerMessage(
      s, { type: "error", seq: 7, code: "unknown_clip", message: "nope" }, 5,
    );
    expect(s.pending.size).toBe(0);
    expect(s.toasts[0].text).toContain("unknown_clip");
  });

  it("reconnect keeps the library, clears pending", () => {
    const s = createStore();
    applyServerMessage(
      s,
      { type: "clip_library", clips: [{ id: "a", label_path: [], frames: 2, fps: 60 }] },
      0,
    );
    markPending(s, 9, "enqueue_clip", 0);
    onDisconnect(s);
    expect(s.connected).toBe(false);
    expect(s.pending.size).toBe(0);
    onConnect(s);
    expect(s.connected).toBe(true);
    expect(s.clips).toHaveLength(1); // resumes without reload
  });
});
