// Browser entry point: wires the socket, console model, input rig,
// renderer and gauge DOM together.

import { ConsoleModel } from "./console.js";
import { InputRig, TICK_HZ } from "./control.js";
import { Renderer } from "./renderer.js";

const SERVICE_URL = (window as unknown as { HAPTICLOOP_URL?: string }).HAPTICLOOP_URL ?? "ws://127.0.0.1:8765";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function fmt(values: number[], digits = 2): string {
  return values.map((v) => v.toFixed(digits)).join("  ");
}

export function boot(): void {
  const model = new ConsoleModel();
  const rig = new InputRig();
  const renderer = new Renderer(el<HTMLCanvasElement>("scene"));

  const status = el<HTMLSpanElement>("status");
  const forceGauge = el<HTMLSpanElement>("gauge-forces");
  const dutyGauge = el<HTMLSpanElement>("gauge-duties");
  const palmGauge = el<HTMLSpanElement>("gauge-palm");
  const recordBadge = el<HTMLSpanElement>("record-badge");
  const results = el<HTMLUListElement>("results");
  const toasts = el<HTMLDivElement>("toasts");

  let socket: WebSocket | null = null;

  function connect(): void {
    socket = new WebSocket(SERVICE_URL);
    socket.onopen = () => {
      model.attach({ send: (data) => socket!.send(data) });
      model.hello();
      const gripper = el<HTMLSelectElement>("gripper").value;
      const condition = el<HTMLSelectElement>("condition").value;
      model.configure(gripper, condition, Number(el<HTMLInputElement>("seed").value));
    };
    socket.onmessage = (msg) => model.handleRaw(String(msg.data));
    socket.onclose = () => {
      model.detach();
      setTimeout(connect, 1000); // reconnect; buffered inputs are dropped
    };
  }

  el<HTMLButtonElement>("btn-record").onclick = () => {
    if (model.status === "recording") model.recordStop();
    else if (model.status === "ready") model.recordStart();
  };

  window.addEventListener("keydown", (e) => rig.keyDown(e.key));
  window.addEventListener("keyup", (e) => rig.keyUp(e.key));
  const canvas = el<HTMLCanvasElement>("scene");
  let dragging = false;
  canvas.addEventListener("pointerdown", () => (dragging = true));
  window.addEventListener("pointerup", () => (dragging = false));
  canvas.addEventListener("pointermove", (e) => {
    if (dragging) rig.pointerDrag(-e.movementY / 900, -e.movementX / 900);
  });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    rig.wheel(-e.deltaY / 5000);
  });

  // fixed 30 Hz input tick; the service holds the last pose between inputs
  setInterval(() => {
    rig.tick(1 / TICK_HZ);
    if (model.canSendInput()) {
      model.sendInput(rig.payload() as unknown as Record<string, unknown>);
    }
  }, 1000 / TICK_HZ);

  function paint(): void {
    renderer.draw(model.scene, model.isStale());
    status.textContent = `${model.status} ${model.gripper}/${model.condition}`;
    forceGauge.textContent = fmt(model.gauges.forces) + " N";
    dutyGauge.textContent = fmt(model.gauges.duties, 0) + " %";
    palmGauge.textContent =
      `F ${fmt(model.gauges.palmForce)} N  T ${fmt(model.gauges.palmTorque)} N*m (${model.gauges.condition})`;
    recordBadge.textContent = model.status === "recording" ? "REC" : "idle";
    recordBadge.className = model.status === "recording" ? "rec-on" : "rec-off";
    results.innerHTML = model.episodes
      .map((r) => `<li>${r.success ? "success" : "failure"} in ${r.execTime.toFixed(2)}s (${r.samples} samples)</li>`)
      .join("");
    toasts.textContent = model.toasts.slice(-3).join(" | ");
    requestAnimationFrame(paint);
  }

  connect();
  requestAnimationFrame(paint);
}

boot();
