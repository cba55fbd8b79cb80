// Wire protocol for the session service: JSON envelopes over WebSocket.
// Mirrors the server's schema; version must match.

export const PROTOCOL_VERSION = 1;

export interface Envelope {
  v: number;
  type: string;
  seq: number;
  t: number;
  payload: Record<string, unknown>;
}

export interface HandPosePayload {
  pose: {
    pos: [number, number, number];
    quat: [number, number, number, number];
    q: number[]; // 20 joint angles, finger-major (abd, mcp, pip, dip)
  };
  steps?: number;
}

export interface StatePayload {
  session: string;
  gripper: string;
  condition: string;
  time: number;
  base: { pos: [number, number, number]; quat: [number, number, number, number] };
  joints: number[];
  fingertips: [number, number, number][];
  duck: { pos: [number, number, number]; radius: number };
  tray: { min: [number, number, number]; max: [number, number, number] };
  attached: boolean;
  recording: boolean;
}

export interface FeedbackPayload {
  condition: string;
  forces: number[]; // per demonstrator finger, N
  duties: number[]; // per demonstrator finger, %
  palm: { force: [number, number, number]; torque: [number, number, number] };
}

export interface EventPayload {
  kind: string;
  t: number;
}

export interface RecordStopPayload {
  file: string;
  samples: number;
  success: boolean;
  exec_time: number;
}

export function encode(type: string, seq: number, payload: Record<string, unknown>, t = 0): string {
  const envelope: Envelope = { v: PROTOCOL_VERSION, type, seq, t, payload };
  return JSON.stringify(envelope);
}

export function decode(raw: string): Envelope {
  const data = JSON.parse(raw) as Envelope;
  if (data.v !== PROTOCOL_VERSION) {
    throw new Error(`unsupported protocol version ${data.v}`);
  }
  if (typeof data.type !== "string" || typeof data.seq !== "number") {
    throw new Error("malformed envelope");
  }
  if (!data.payload) {
    data.payload = {};
  }
  return data;
}

// Finger flexion synergy used when turning one closure value into the full
// 20-angle hand pose (matches the demonstrator convention server-side).
export const PIP_RATIO = 0.6;
export const DIP_RATIO = 0.3;

export function handJoints(closure: number): number[] {
  const joints = new Array<number>(20).fill(0);
  for (let finger = 0; finger < 5; finger++) {
    joints[4 * finger + 1] = closure;
    joints[4 * finger + 2] = PIP_RATIO * closure;
    joints[4 * finger + 3] = DIP_RATIO * closure;
  }
  return joints;
}

export function posePayload(
  pos: [number, number, number],
  yaw: number,
  closure: number,
  steps?: number,
): HandPosePayload {
  const half = yaw / 2;
  const quat: [number, number, number, number] = [0, 0, Math.sin(half), Math.cos(half)];
  const payload: HandPosePayload = { pose: { pos, quat, q: handJoints(closure) } };
  if (steps !== undefined) {
    payload.steps = steps;
  }
  return payload;
}
