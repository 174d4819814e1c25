// Line-delimited JSON protocol shared with the session server.
// Field names mirror the server wire schema exactly.

export const WIRE_VERSION = 1;

export interface WireState {
  root_pos: number[];
  root_quat: number[];
  joint_pos: number[]; // 3J flat
  joint_quats: number[]; // 4J flat
  root_vel: number[];
  root_angvel: number[];
}

export interface StateFrame {
  type: "state_frame";
  tick: number;
  actual: WireState;
  target: WireState | null;
  reward_terms: Record<string, number>;
  reward_total: number;
  buffer_len: number;
  status: string;
}

export interface Hello {
  type: "hello";
  version: number;
  model_name: string;
  num_joints: number;
  joint_parents: number[] | null;
  body_names: string[] | null;
}

export interface ClipEntry {
  id: string;
  label_path: string[];
  frames: number;
  fps: number;
}

export interface ClipLibrary {
  type: "clip_library";
  clips: ClipEntry[];
}

export interface Ack {
  type: "ack";
  seq: number;
}

export interface ErrorMsg {
  type: "error";
  seq: number;
  code: string;
  message: string;
}

export type ServerMessage = StateFrame | Hello | ClipLibrary | Ack | ErrorMsg;

export interface EnqueueClip {
  type: "enqueue_clip";
  seq: number;
  clip_id: string;
}

export interface SetCommand {
  type: "set_command";
  seq: number;
  heading: number;
  speed: number;
  gait: string;
}

export interface ApplyImpulse {
  type: "apply_impulse";
  seq: number;
  body: string;
  impulse: number[];
}

export interface SetSpeedRatio {
  type: "set_speed_ratio";
  seq: number;
  ratio: number;
}

export interface PauseMsg {
  type: "pause";
  seq: number;
}

export interface ResumeMsg {
  type: "resume";
  seq: number;
}

export interface SelectScheduler {
  type: "select_scheduler";
  seq: number;
  kind: "dataset" | "stitch" | "command" | "stream";
  clip_id: string | null;
}

export type ClientMessage =
  | EnqueueClip
  | SetCommand
  | ApplyImpulse
  | SetSpeedRatio
  | PauseMsg
  | ResumeMsg
  | SelectScheduler;

export class ProtocolError extends Error {
  constructor(public code: string, detail = "") {
    super(detail ? `${code}: ${detail}` : code);
  }
}

const SERVER_TYPES = new Set(["state_frame", "hello", "clip_library", "ack", "error"]);

export function encode(msg: ClientMessage): string {
  const { type, ...rest } = msg;
  return JSON.stringify({ v: WIRE_VERSION, type, ...rest }) + "\n";
}

export function decode(line: string): ServerMessage {
  let doc: unknown;
  try {
    doc = JSON.parse(line);
  } catch (e) {
    throw new ProtocolError("parse_error", String(e));
  }
  if (typeof doc !== "object" || doc === null) {
    throw new ProtocolError("parse_error", "message must be an object");
  }
  const obj = doc as Record<string, unknown>;
  if (obj.v !== WIRE_VERSION) {
    throw new ProtocolError("version_mismatch", `got ${String(obj.v)}`);
  }
  const tag = obj.type;
  if (typeof tag !== "string" || !SERVER_TYPES.has(tag)) {
    throw new ProtocolError("unknown_tag", String(tag));
  }
  return obj as unknown as ServerMessage;
}
