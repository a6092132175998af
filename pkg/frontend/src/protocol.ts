/**
 * Wire types for the teleoperation websocket: JSON text frames from the
 * server each tick, and the five client message kinds. Every message the
 * cockpit emits goes through the constructors here so nothing non-finite
 * or out-of-range ever reaches the socket.
 */

export interface Frame {
  type: "frame";
  seq: number;
  /** base64 PNG of the car's current camera observation */
  image: string;
  speed: number;
  collision: boolean;
  recording: boolean;
  lap_progress: number;
}

export interface ActionMsg {
  type: "action";
  steering: number;
  throttle: number;
}

export interface EstopMsg {
  type: "estop";
}

export interface ResetMsg {
  type: "reset";
}

export interface RecordMsg {
  type: "record";
  on: boolean;
}

export interface ConfigMsg {
  type: "config";
  task: "easy" | "hard";
  seed: number;
}

export type ClientMsg = ActionMsg | EstopMsg | ResetMsg | RecordMsg | ConfigMsg;

const isFiniteNumber = (v: unknown): v is number =>
  typeof v === "number" && Number.isFinite(v);

/** Parse one server message; null for anything that is not a valid frame. */
export function parseFrame(raw: string): Frame | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) return null;
  const m = msg as Record<string, unknown>;
  if (m.type !== "frame") return null;
  if (!isFiniteNumber(m.seq) || !Number.isInteger(m.seq) || m.seq < 0) return null;
  if (typeof m.image !== "string") return null;
  if (!isFiniteNumber(m.speed)) return null;
  if (typeof m.collision !== "boolean") return null;
  if (typeof m.recording !== "boolean") return null;
  if (!isFiniteNumber(m.lap_progress)) return null;
  return {
    type: "frame",
    seq: m.seq,
    image: m.image,
    speed: m.speed,
    collision: m.collision,
    recording: m.recording,
    lap_progress: m.lap_progress,
  };
}

const clamp = (v: number, lo: number, hi: number): number =>
  Math.min(hi, Math.max(lo, v));

/** Build an action message; NaN/infinite inputs become 0, range is [-1, 1]. */
export function makeAction(steering: number, throttle: number): ActionMsg {
  const safe = (v: number) => (Number.isFinite(v) ? clamp(v, -1, 1) : 0);
  return { type: "action", steering: safe(steering), throttle: safe(throttle) };
}

export function makeEstop(): EstopMsg {
  return { type: "estop" };
}

export function makeReset(): ResetMsg {
  return { type: "reset" };
}

export function makeRecord(on: boolean): RecordMsg {
  return { type: "record", on: Boolean(on) };
}

export function makeConfig(task: "easy" | "hard", seed: number): ConfigMsg {
  if (task !== "easy" && task !== "hard") {
    throw new Error(`unknown task: ${task}`);
  }
  if (!Number.isInteger(seed) || seed < 0) {
    throw new Error(`seed must be a non-negative integer, got ${seed}`);
  }
  return { type: "config", task, seed };
}

/** Final gate before the socket: true iff the message is schema-valid. */
export function validateOutbound(msg: ClientMsg): boolean {
  switch (msg.type) {
    case "action":
      return (
        isFiniteNumber(msg.steering) &&
        isFiniteNumber(msg.throttle) &&
        Math.abs(msg.steering) <= 1 &&
        Math.abs(msg.throttle) <= 1
      );
    case "estop":
    case "reset":
      return true;
    case "record":
      return typeof msg.on === "boolean";
    case "config":
      return (
        (msg.task === "easy" || msg.task === "hard") &&
        Number.isInteger(msg.seed) &&
        msg.seed >= 0
      );
    default:
      return false;
  }
}
