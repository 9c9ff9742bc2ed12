/**
 * Browser wiring: drag pad for the virtual master handle (wheel adjusts z),
 * mode toggle and haptic-gain slider, rolling telemetry charts and the
 * workspace sketch.  Inputs stream at 50 Hz while the handle is engaged;
 * rendering runs on animation frames with a stale watermark once frames
 * stop for half a second.
 */

import { drawSeries, drawStaleWatermark } from "./charts.js";
import { HandleState, handleToDevice } from "./input.js";
import { MasterMode } from "./protocol.js";
import { SessionClient } from "./session.js";
import { drawSketch } from "./sketch.js";
import { connectWebSocket } from "./transport.js";

const INPUT_HZ = 50;
const HANDLE_SCALE = 0.001;     // pixels -> metres
const WORKSPACE_RADIUS = 0.10;  // metres, clamp before sending

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setup() {
  const urlBox = el<HTMLInputElement>("server-url");
  const connectBtn = el<HTMLButtonElement>("connect");
  const finishBtn = el<HTMLButtonElement>("finish");
  const exportBtn = el<HTMLButtonElement>("export");
  const modeSel = el<HTMLSelectElement>("mode");
  const gain = el<HTMLInputElement>("gain");
  const banner = el<HTMLDivElement>("banner");
  const status = el<HTMLSpanElement>("status");
  const pad = el<HTMLCanvasElement>("pad");
  const charts = el<HTMLCanvasElement>("charts");
  const sketch = el<HTMLCanvasElement>("sketch");

  const session = new SessionClient(() => connectWebSocket(urlBox.value));
  const handle: HandleState = { x: 0, y: 0, z: 0, engaged: false };
  let sessionStart = 0;

  connectBtn.onclick = () => {
    sessionStart = performance.now();
    void session.connect();
  };
  finishBtn.onclick = () => session.control("finish");
  exportBtn.onclick = () => {
    const blob = new Blob([session.exportCsv()], { type: "text/csv" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "console_session.csv";
    a.click();
  };

  // drag pad: displacement from the pad centre, wheel moves z
  pad.addEventListener("pointerdown", (ev) => {
    handle.engaged = true;
    pad.setPointerCapture(ev.pointerId);
  });
  pad.addEventListener("pointerup", () => {
    handle.engaged = false;
    handle.x = 0;
    handle.y = 0;
  });
  pad.addEventListener("pointermove", (ev) => {
    if (!handle.engaged) return;
    const rect = pad.getBoundingClientRect();
    handle.x = ev.clientX - rect.left - rect.width / 2;
    handle.y = -(ev.clientY - rect.top - rect.height / 2);
  });
  pad.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    handle.z -= ev.deltaY * 0.2;
  });

  setInterval(() => {
    if (session.state !== "connected") return;
    const t = (performance.now() - sessionStart) / 1000;
    const xM = handleToDevice(handle, HANDLE_SCALE, WORKSPACE_RADIUS);
    session.sendInput(t, xM, modeSel.value as MasterMode, Number(gain.value));
  }, 1000 / INPUT_HZ);

  const render = () => {
    status.textContent = session.state + (session.tracePath ? ` (${session.tracePath})` : "");
    banner.style.display = session.banner ? "block" : "none";
    banner.textContent = session.banner ?? "";

    const cctx = charts.getContext("2d")!;
    cctx.clearRect(0, 0, charts.width, charts.height);
    const third = charts.height / 3;
    session.forceNorm.forEach((s, i) =>
      drawSeries(cctx, s, charts.width, third, i ? "#ba5b2b" : "#2b7bba"));
    cctx.save();
    cctx.translate(0, third);
    session.stiffnessNorm.forEach((s, i) =>
      drawSeries(cctx, s, charts.width, third, i ? "#8a2bba" : "#2bba7b"));
    cctx.translate(0, third);
    session.trackingError.forEach((s, i) =>
      drawSeries(cctx, s, charts.width, third, i ? "#bab02b" : "#ba2b63"));
    cctx.restore();
    if (session.isStale()) drawStaleWatermark(cctx, charts.width, charts.height);

    const sctx = sketch.getContext("2d")!;
    sctx.clearRect(0, 0, sketch.width, sketch.height);
    drawSketch(sctx, session.frames, session.forceNorm.length || 1, "xy", {
      scale: 220,
      centerX: sketch.width / 2,
      centerY: sketch.height / 2,
    });

    const pctx = pad.getContext("2d")!;
    pctx.clearRect(0, 0, pad.width, pad.height);
    pctx.strokeStyle = "#888";
    pctx.strokeRect(0.5, 0.5, pad.width - 1, pad.height - 1);
    pctx.fillStyle = handle.engaged ? "#2b7bba" : "#aaa";
    pctx.beginPath();
    pctx.arc(pad.width / 2 + handle.x, pad.height / 2 - handle.y, 9, 0, 2 * Math.PI);
    pctx.fill();

    requestAnimationFrame(render);
  };
  requestAnimationFrame(render);
}

if (typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", setup);
}
