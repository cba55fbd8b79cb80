// Fixed-camera scene renderer. The viewpoint is deliberately locked (the
// teleoperation screen shows one perspective, occlusions included); an
// unlock flag exists for debugging only.

import { StatePayload } from "./protocol.js";

const DESK_COLOR = "#8a7356";
const TRAY_COLOR = "#4a6b8a";
const DUCK_COLOR = "#e6c229";
const GRIP_COLOR = "#333333";
const ATTACH_COLOR = "#c0392b";

export interface Camera {
  yawDeg: number;
  pitchDeg: number;
  scale: number; // pixels per meter
  center: [number, number, number];
}

export const FIXED_CAMERA: Camera = {
  yawDeg: -35,
  pitchDeg: 28,
  scale: 900,
  center: [0.5, 0.0, 0.1],
};

export class Renderer {
  private unlocked = false;
  camera: Camera = { ...FIXED_CAMERA };

  constructor(
    private canvas: HTMLCanvasElement,
    private ctx = canvas.getContext("2d")!,
  ) {}

  // debugging aid only; the study camera stays fixed
  unlockCamera(): void {
    this.unlocked = true;
  }

  setCamera(camera: Camera): void {
    if (!this.unlocked) {
      return;
    }
    this.camera = camera;
  }

  project(p: [number, number, number]): [number, number] {
    const { yawDeg, pitchDeg, scale, center } = this.camera;
    const yaw = (yawDeg * Math.PI) / 180;
    const pitch = (pitchDeg * Math.PI) / 180;
    const x = p[0] - center[0];
    const y = p[1] - center[1];
    const z = p[2] - center[2];
    const rx = x * Math.cos(yaw) - y * Math.sin(yaw);
    const ry = x * Math.sin(yaw) + y * Math.cos(yaw);
    const sy = ry;
    const sz = z * Math.cos(pitch) - rx * Math.sin(pitch);
    return [this.canvas.width / 2 + sy * scale, this.canvas.height / 2 - sz * scale];
  }

  draw(state: StatePayload | null, stale: boolean): void {
    const ctx = this.ctx;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (state === null) {
      ctx.fillStyle = "#666";
      ctx.font = "16px sans-serif";
      ctx.fillText("waiting for session...", 20, 30);
      return;
    }
    this.drawDesk(state);
    this.drawTray(state);
    this.drawDuck(state);
    this.drawGripper(state);
    if (stale) {
      ctx.fillStyle = "rgba(180, 30, 30, 0.85)";
      ctx.fillRect(0, 0, this.canvas.width, 28);
      ctx.fillStyle = "#fff";
      ctx.font = "14px sans-serif";
      ctx.fillText("state stale (>1 s without updates)", 12, 19);
    }
  }

  private polygon(points: [number, number, number][], fill: string, alpha = 1.0): void {
    const ctx = this.ctx;
    ctx.globalAlpha = alpha;
    ctx.fillStyle = fill;
    ctx.beginPath();
    points.forEach((p, i) => {
      const [sx, sy] = this.project(p);
      if (i === 0) ctx.moveTo(sx, sy);
      else ctx.lineTo(sx, sy);
    });
    ctx.closePath();
    ctx.fill();
    ctx.globalAlpha = 1.0;
  }

  private drawDesk(state: StatePayload): void {
    const z = 0;
    this.polygon(
      [
        [0.2, -0.3, z],
        [0.85, -0.3, z],
        [0.85, 0.3, z],
        [0.2, 0.3, z],
      ],
      DESK_COLOR,
      0.9,
    );
  }

  private drawTray(state: StatePayload): void {
    const { min, max } = state.tray;
    this.polygon(
      [
        [min[0], min[1], 0.001],
        [max[0], min[1], 0.001],
        [max[0], max[1], 0.001],
        [min[0], max[1], 0.001],
      ],
      TRAY_COLOR,
      0.8,
    );
  }

  private drawDuck(state: StatePayload): void {
    const [sx, sy] = this.project(state.duck.pos);
    const r = state.duck.radius * this.camera.scale;
    this.ctx.fillStyle = DUCK_COLOR;
    this.ctx.beginPath();
    this.ctx.arc(sx, sy, r, 0, 2 * Math.PI);
    this.ctx.fill();
  }

  private drawGripper(state: StatePayload): void {
    const ctx = this.ctx;
    const palm = this.project(state.base.pos);
    ctx.strokeStyle = state.attached ? ATTACH_COLOR : GRIP_COLOR;
    ctx.lineWidth = 3;
    for (const tip of state.fingertips) {
      const [tx, ty] = this.project(tip);
      ctx.beginPath();
      ctx.moveTo(palm[0], palm[1]);
      ctx.lineTo(tx, ty);
      ctx.stroke();
      ctx.beginPath();
      ctx.arc(tx, ty, 4, 0, 2 * Math.PI);
      ctx.fillStyle = GRIP_COLOR;
      ctx.fill();
    }
    ctx.fillStyle = state.attached ? ATTACH_COLOR : "#555";
    ctx.beginPath();
    ctx.arc(palm[0], palm[1], 7, 0, 2 * Math.PI);
    ctx.fill();
  }
}
