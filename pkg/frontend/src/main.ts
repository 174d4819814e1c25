// Entry point: wires socket, store, input, and render loop together.

import { defaultCamera, orbit } from "./camera.js";
import { KeyboardController } from "./input.js";
import { Connection } from "./net.js";
import { drawScene } from "./render.js";
import {
  applyServerMessage,
  createStore,
  markPending,
  onConnect,
  onDisconnect,
} from "./store.js";

const store = createStore();
let cam = defaultCamera();
const keyboard = new KeyboardController();
const url = `ws://${location.hostname || "127.0.0.1"}:${
  new URLSearchParams(location.search).get("port") ?? "8765"
}`;

const conn = new Connection(url, {
  onMessage: (msg) => {
    applyServerMessage(store, msg, performance.now());
    if (msg.type === "clip_library") renderClipList();
    if (msg.type === "hello") fillBodySelect();
  },
  onOpen: () => onConnect(store),
  onClose: () => onDisconnect(store),
});
conn.connect();

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const showTargetBox = document.getElementById("show-target") as HTMLInputElement;

function renderClipList(): void {
  const list = document.getElementById("clips")!;
  list.innerHTML = "";
  for (const clip of store.clips) {
    const btn = document.createElement("button");
    btn.textContent = `${clip.id} (${clip.frames}f @ ${clip.fps}fps)`;
    btn.title = clip.label_path.join(" / ");
    btn.onclick = () => {
      const seq = conn.nextSeq();
      if (conn.send({ type: "enqueue_clip", seq, clip_id: clip.id }, performance.now())) {
        markPending(store, seq, "enqueue_clip", performance.now());
      }
    };
    list.appendChild(btn);
  }
}

function fillBodySelect(): void {
  const sel = document.getElementById("impulse-body") as HTMLSelectElement;
  sel.innerHTML = "";
  for (const name of store.bodyNames) {
    const opt = document.createElement("option");
    opt.value = name;
    opt.textContent = name;
    sel.appendChild(opt);
  }
}

(document.getElementById("perturb") as HTMLButtonElement).onclick = () => {
  const sel = document.getElementById("impulse-body") as HTMLSelectElement;
  const slider = document.getElementById("impulse-mag") as HTMLInputElement;
  // slider bounds are enforced client-side; the server clamps again
  const mag = Math.min(Math.max(Number(slider.value), 0), 10);
  const angle = Math.random() * 2 * Math.PI;
  const seq = conn.nextSeq();
  const sent = conn.send(
    {
      type: "apply_impulse",
      seq,
      body: sel.value || "link0",
      impulse: [mag * Math.cos(angle), mag * Math.sin(angle), 0],
    },
    performance.now(),
  );
  if (sent) markPending(store, seq, "apply_impulse", performance.now());
};

for (const [id, kind] of [
  ["sched-stitch", "stitch"],
  ["sched-command", "command"],
  ["sched-stream", "stream"],
] as const) {
  (document.getElementById(id) as HTMLButtonElement).onclick = () => {
    conn.send(
      { type: "select_scheduler", seq: conn.nextSeq(), kind, clip_id: null },
      performance.now(),
    );
  };
}

(document.getElementById("pause") as HTMLButtonElement).onclick = () => {
  conn.send({ type: "pause", seq: conn.nextSeq() }, performance.now());
};
(document.getElementById("resume") as HTMLButtonElement).onclick = () => {
  conn.send({ type: "resume", seq: conn.nextSeq() }, performance.now());
};

window.addEventListener("keydown", (e) => {
  if ((e.target as HTMLElement).tagName !== "INPUT") keyboard.keyDown(e.code);
});
window.addEventListener("keyup", (e) => keyboard.keyUp(e.code));

let dragging = false;
canvas.addEventListener("mousedown", () => (dragging = true));
window.addEventListener("mouseup", () => (dragging = false));
window.addEventListener("mousemove", (e) => {
  if (dragging) cam = orbit(cam, -e.movementX * 0.01, e.movementY * 0.01);
});

function loop(): void {
  const now = performance.now();
  const cmd = keyboard.poll(now, conn.nextSeq);
  if (cmd !== null) conn.send(cmd, now);
  drawScene(ctx, store, cam, now, { showTarget: showTargetBox.checked });
  requestAnimationFrame(loop);
}
requestAnimationFrame(loop);
