// Canvas drawing: actual skeleton in color, ghost target in white, reward
// readouts and a staleness flag.

import { project, type Camera } from "./camera.js";
import { buildSegments, rootPoint, jointPoint } from "./skeleton.js";
import { isStale, type ClientStore } from "./store.js";

const ACTUAL_COLOR = "#3fb950";
const TARGET_COLOR = "#e6e6e6";
const GROUND_COLOR = "#30363d";

export interface RenderOptions {
  showTarget: boolean;
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  store: ClientStore,
  cam: Camera,
  now: number,
  opts: RenderOptions,
): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.save();
  ctx.translate(width / 2, height / 2);
  drawGround(ctx, cam);
  const frame = store.lastFrame;
  if (frame !== null) {
    if (opts.showTarget && frame.target !== null) {
      drawSkeleton(ctx, frame.target, store.jointParents, cam, TARGET_COLOR, 2);
    }
    drawSkeleton(ctx, frame.actual, store.jointParents, cam, ACTUAL_COLOR, 3);
  }
  ctx.restore();
  drawHud(ctx, store, now);
}

function drawGround(ctx: CanvasRenderingContext2D, cam: Camera): void {
  ctx.strokeStyle = GROUND_COLOR;
  ctx.lineWidth = 1;
  for (let i = -5; i <= 5; i++) {
    line(ctx, project([i * 0.5, -2.5, 0], cam), project([i * 0.5, 2.5, 0], cam));
    line(ctx, project([-2.5, i * 0.5, 0], cam), project([2.5, i * 0.5, 0], cam));
  }
}

function drawSkeleton(
  ctx: CanvasRenderingContext2D,
  state: import("./protocol.js").WireState,
  parents: number[],
  cam: Camera,
  color: string,
  width: number,
): void {
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  ctx.lineWidth = width;
  for (const seg of buildSegments(state, parents)) {
    line(ctx, project(seg.from, cam), project(seg.to, cam));
  }
  const joints = state.joint_pos.length / 3;
  dot(ctx, project(rootPoint(state), cam), width + 2);
  for (let j = 0; j < joints; j++) {
    dot(ctx, project(jointPoint(state, j), cam), width + 1);
  }
}

function line(ctx: CanvasRenderingContext2D, a: [number, number], b: [number, number]): void {
  ctx.beginPath();
  ctx.moveTo(a[0], a[1]);
  ctx.lineTo(b[0], b[1]);
  ctx.stroke();
}

function dot(ctx: CanvasRenderingContext2D, p: [number, number], r: number): void {
  ctx.beginPath();
  ctx.arc(p[0], p[1], r, 0, 2 * Math.PI);
  ctx.fill();
}

function drawHud(ctx: CanvasRenderingContext2D, store: ClientStore, now: number): void {
  ctx.font = "12px monospace";
  ctx.fillStyle = "#c9d1d9";
  const frame = store.lastFrame;
  let y = 18;
  const put = (text: string) => {
    ctx.fillText(text, 10, y);
    y += 16;
  };
  put(`${store.modelName || "(no model)"}  ${store.connected ? "connected" : "offline"}`);
  if (frame !== null) {
    put(`tick ${frame.tick}  buffer ${frame.buffer_len}  ${frame.status}`);
    put(`reward ${frame.reward_total.toFixed(3)}`);
    const terms = Object.entries(frame.reward_terms)
      .map(([k, v]) => `${k} ${v.toFixed(2)}`)
      .join("  ");
    put(terms);
  }
  if (isStale(store, now)) {
    ctx.fillStyle = "#f0883e";
    put("STALE: no fresh frames");
  }
  if (now < store.hitIndicatorUntil) {
    ctx.fillStyle = "#ff7b72";
    put("impact!");
  }
  for (const toast of store.toasts.slice(-3)) {
    ctx.fillStyle = "#f85149";
    put(toast.text);
  }
}
