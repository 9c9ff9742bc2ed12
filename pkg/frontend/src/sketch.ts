/**
 * Workspace sketch: tool positions, commanded targets and the master
 * command projected onto a 2D plane, with short motion trails.  Pure
 * projection helpers separated from canvas drawing.
 */

import { StepMsg } from "./protocol.js";

export type Plane = "xy" | "xz";

export interface SketchPoint {
  x: number;
  y: number;
}

export function projectPose(frame: StepMsg, prefix: string,
                            plane: Plane): SketchPoint | null {
  const px = frame[`${prefix}4`];
  const py = frame[`${prefix}5`];
  const pz = frame[`${prefix}6`];
  if (typeof px !== "number") return null;
  return plane === "xy"
    ? { x: px, y: py as number }
    : { x: px, y: pz as number };
}

export interface SketchView {
  scale: number;       // pixels per metre
  centerX: number;
  centerY: number;
}

export function toCanvas(p: SketchPoint, view: SketchView): [number, number] {
  return [view.centerX + p.x * view.scale, view.centerY - p.y * view.scale];
}

export function drawSketch(ctx: CanvasRenderingContext2D, frames: StepMsg[],
                           nArms: number, plane: Plane, view: SketchView) {
  const recent = frames.slice(-400);
  const colors = ["#2b7bba", "#ba5b2b"];
  for (let i = 0; i < nArms; i++) {
    ctx.strokeStyle = colors[i % colors.length];
    ctx.lineWidth = 1;
    ctx.beginPath();
    let started = false;
    for (const frame of recent) {
      const p = projectPose(frame, `a${i}_x`, plane);
      if (!p) continue;
      const [cx, cy] = toCanvas(p, view);
      if (!started) {
        ctx.moveTo(cx, cy);
        started = true;
      } else {
        ctx.lineTo(cx, cy);
      }
    }
    ctx.stroke();

    const last = recent[recent.length - 1];
    if (!last) continue;
    const tool = projectPose(last, `a${i}_x`, plane);
    const target = projectPose(last, `a${i}_xd`, plane);
    if (tool) {
      const [cx, cy] = toCanvas(tool, view);
      ctx.fillStyle = colors[i % colors.length];
      ctx.beginPath();
      ctx.arc(cx, cy, 5, 0, 2 * Math.PI);
      ctx.fill();
    }
    if (target) {
      const [cx, cy] = toCanvas(target, view);
      ctx.strokeStyle = colors[i % colors.length];
      ctx.beginPath();
      ctx.arc(cx, cy, 8, 0, 2 * Math.PI);
      ctx.stroke();
    }
  }
}
