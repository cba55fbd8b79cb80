// Keyboard/pointer input rig: integrates key state into a palm pose target
// plus one closure value, emitted at a fixed 30 Hz tick with zero-order hold
// (the same pose is re-sent when nothing changed).

import { HandPosePayload, posePayload } from "./protocol.js";

export const TICK_HZ = 30;
export const CLOSURE_RATE = 0.8; // rad/s while a closure key is held
export const MOVE_RATE = 0.15; // m/s for keyboard nudges
export const YAW_RATE = 0.8; // rad/s for bracket keys

export interface ControlConfig {
  workspaceMin: [number, number, number];
  workspaceMax: [number, number, number];
  closureMax: number;
}

export const DEFAULT_CONTROL: ControlConfig = {
  workspaceMin: [0.2, -0.25, 0.02],
  workspaceMax: [0.8, 0.25, 0.4],
  closureMax: 1.6,
};

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(Math.max(v, lo), hi);
}

export class InputRig {
  palm: [number, number, number];
  yaw = 0;
  closure = 0;
  private held = new Set<string>();

  constructor(
    home: [number, number, number] = [0.4, 0, 0.25],
    private config: ControlConfig = DEFAULT_CONTROL,
  ) {
    this.palm = [...home];
  }

  keyDown(key: string): void {
    this.held.add(key);
  }

  keyUp(key: string): void {
    this.held.delete(key);
  }

  // planar pointer drag: dx/dy in pixels, scale chosen by the renderer
  pointerDrag(dxMeters: number, dyMeters: number): void {
    this.palm[0] = clamp(this.palm[0] + dxMeters, this.config.workspaceMin[0], this.config.workspaceMax[0]);
    this.palm[1] = clamp(this.palm[1] + dyMeters, this.config.workspaceMin[1], this.config.workspaceMax[1]);
  }

  // scroll wheel: height
  wheel(dzMeters: number): void {
    this.palm[2] = clamp(this.palm[2] + dzMeters, this.config.workspaceMin[2], this.config.workspaceMax[2]);
  }

  setClosure(value: number): void {
    this.closure = clamp(value, 0, this.config.closureMax);
  }

  // advance held-key integrations by dt seconds
  tick(dt: number): void {
    const move = MOVE_RATE * dt;
    if (this.held.has("w")) this.palm[0] += move;
    if (this.held.has("s")) this.palm[0] -= move;
    if (this.held.has("a")) this.palm[1] += move;
    if (this.held.has("d")) this.palm[1] -= move;
    if (this.held.has("r")) this.palm[2] += move;
    if (this.held.has("f")) this.palm[2] -= move;
    if (this.held.has("[")) this.yaw += YAW_RATE * dt;
    if (this.held.has("]")) this.yaw -= YAW_RATE * dt;
    if (this.held.has("g")) this.closure += CLOSURE_RATE * dt;
    if (this.held.has("h")) this.closure -= CLOSURE_RATE * dt;
    for (let axis = 0; axis < 3; axis++) {
      this.palm[axis] = clamp(this.palm[axis], this.config.workspaceMin[axis], this.config.workspaceMax[axis]);
    }
    this.closure = clamp(this.closure, 0, this.config.closureMax);
  }

  payload(steps?: number): HandPosePayload {
    return posePayload([...this.palm] as [number, number, number], this.yaw, this.closure, steps);
  }
}
