// Line-skeleton geometry from a wire state: one segment per joint, running
// to its parent joint (or to the root for first-level joints).

import type { WireState } from "./protocol.js";

export type Point3 = [number, number, number];

export interface Segment {
  from: Point3;
  to: Point3;
}

export function jointPoint(state: WireState, index: number): Point3 {
  return [
    state.joint_pos[3 * index],
    state.joint_pos[3 * index + 1],
    state.joint_pos[3 * index + 2],
  ];
}

export function rootPoint(state: WireState): Point3 {
  return [state.root_pos[0], state.root_pos[1], state.root_pos[2]];
}

export function buildSegments(state: WireState, parents: number[]): Segment[] {
  const n = state.joint_pos.length / 3;
  const root = rootPoint(state);
  const segments: Segment[] = [];
  for (let j = 0; j < n; j++) {
    // parents index into the joint list; -1 hangs off the root link
    const p = parents.length > j ? parents[j] : j - 1;
    const from = p >= 0 ? jointPoint(state, p) : root;
    segments.push({ from, to: jointPoint(state, j) });
  }
  return segments;
}
