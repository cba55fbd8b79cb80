// Connection-and-session model of the teleoperation console.
//
// Holds everything the UI shows: force gauges mirroring the last feedback
// payload verbatim (no client-side scaling), the latest scene snapshot, the
// recording indicator and finished-episode results. Transport-free so it is
// testable headless: callers push decoded envelopes in and read state out.

import {
  decode,
  encode,
  Envelope,
  EventPayload,
  FeedbackPayload,
  RecordStopPayload,
  StatePayload,
} from "./protocol.js";

export type ConnectionStatus = "disconnected" | "connected" | "awaiting_config" | "ready" | "recording";

export interface EpisodeResult {
  file: string;
  success: boolean;
  execTime: number;
  samples: number;
}

export interface Gauges {
  forces: number[];
  duties: number[];
  palmForce: [number, number, number];
  palmTorque: [number, number, number];
  condition: string;
}

export interface SocketLike {
  send(data: string): void;
}

const ZERO_GAUGES: Gauges = {
  forces: [0, 0, 0, 0, 0],
  duties: [0, 0, 0, 0, 0],
  palmForce: [0, 0, 0],
  palmTorque: [0, 0, 0],
  condition: "nff",
};

export class ConsoleModel {
  status: ConnectionStatus = "disconnected";
  gripper = "";
  condition = "";
  gauges: Gauges = structuredClone(ZERO_GAUGES);
  scene: StatePayload | null = null;
  lastStateAt = 0; // ms timestamp for staleness detection
  episodes: EpisodeResult[] = [];
  toasts: string[] = [];
  serverInfo: { grippers: string[]; conditions: string[] } | null = null;
  errors: string[] = [];

  private seq = 0;
  private socket: SocketLike | null = null;

  attach(socket: SocketLike): void {
    this.socket = socket;
    this.status = "connected";
  }

  detach(): void {
    this.socket = null;
    this.status = "disconnected";
  }

  private send(type: string, payload: Record<string, unknown>): void {
    if (this.socket === null) {
      throw new Error("not connected");
    }
    this.seq += 1;
    this.socket.send(encode(type, this.seq, payload));
  }

  hello(): void {
    this.send("hello", {});
    this.status = "awaiting_config";
  }

  configure(gripper: string, condition: string, seed: number): void {
    if (this.status === "disconnected") {
      throw new Error("not connected");
    }
    this.send("configure", { gripper, condition, seed });
    this.gripper = gripper;
    this.condition = condition;
  }

  // Protocol ordering: input is only legal once the configure ack (a state
  // message) has arrived and flipped the model to ready/recording.
  canSendInput(): boolean {
    return this.status === "ready" || this.status === "recording";
  }

  sendInput(payload: Record<string, unknown>): void {
    if (!this.canSendInput()) {
      throw new Error(`input is not allowed while ${this.status}`);
    }
    this.send("input", payload);
  }

  recordStart(participant = "console"): void {
    if (this.status !== "ready") {
      throw new Error("record_start requires a configured, idle session");
    }
    this.send("record_start", { participant });
  }

  recordStop(): void {
    if (this.status !== "recording") {
      throw new Error("record_stop without recording");
    }
    this.send("record_stop", {});
  }

  handleRaw(raw: string, nowMs = Date.now()): Envelope {
    const envelope = decode(raw);
    this.handle(envelope, nowMs);
    return envelope;
  }

  handle(envelope: Envelope, nowMs = Date.now()): void {
    switch (envelope.type) {
      case "hello": {
        const p = envelope.payload as { grippers?: string[]; conditions?: string[] };
        this.serverInfo = { grippers: p.grippers ?? [], conditions: p.conditions ?? [] };
        break;
      }
      case "state": {
        const state = envelope.payload as unknown as StatePayload;
        this.scene = state;
        this.lastStateAt = nowMs;
        // session phase mirrors the service after every ack
        this.status = state.recording ? "recording" : "ready";
        this.gripper = state.gripper;
        this.condition = state.condition;
        break;
      }
      case "feedback": {
        const fb = envelope.payload as unknown as FeedbackPayload;
        // verbatim mirror: the gauges show exactly what the service sent
        this.gauges = {
          forces: [...fb.forces],
          duties: [...fb.duties],
          palmForce: [...fb.palm.force],
          palmTorque: [...fb.palm.torque],
          condition: fb.condition,
        };
        break;
      }
      case "event": {
        const event = envelope.payload as unknown as EventPayload;
        this.toasts.push(`${event.kind} @ ${event.t.toFixed(2)}s`);
        break;
      }
      case "record_start": {
        this.status = "recording";
        break;
      }
      case "record_stop": {
        const p = envelope.payload as unknown as RecordStopPayload;
        this.episodes.push({ file: p.file, success: p.success, execTime: p.exec_time, samples: p.samples });
        this.status = "ready";
        break;
      }
      case "error": {
        const p = envelope.payload as { code?: string; message?: string };
        this.errors.push(`${p.code}: ${p.message}`);
        if (p.code === "protocol") {
          this.status = "awaiting_config";
        }
        break;
      }
      default:
        this.errors.push(`unknown message type ${envelope.type}`);
    }
  }

  isStale(nowMs = Date.now()): boolean {
    return this.scene !== null && nowMs - this.lastStateAt > 1000;
  }
}
