/**
 * Rolling-chart geometry and drawing.  The polyline layout is a pure
 * function so it can be tested without a DOM; drawing wraps it.
 */

import { RollingSeries, SamplePoint } from "./session.js";

export interface ChartLayout {
  points: Array<[number, number]>;
  yMax: number;
}

export function layoutSeries(points: SamplePoint[], width: number,
                             height: number, windowSeconds: number,
                             yMax?: number): ChartLayout {
  if (points.length === 0) return { points: [], yMax: yMax ?? 1 };
  const tEnd = points[points.length - 1].t;
  const t0 = tEnd - windowSeconds;
  const top = yMax ?? Math.max(1e-9, ...points.map((p) => Math.abs(p.value)));
  const xy: Array<[number, number]> = points.map((p) => [
    ((p.t - t0) / windowSeconds) * width,
    height - (Math.min(Math.abs(p.value), top) / top) * height,
  ]);
  return { points: xy, yMax: top };
}

export function drawSeries(ctx: CanvasRenderingContext2D, series: RollingSeries,
                           width: number, height: number, color: string,
                           yMax?: number) {
  const layout = layoutSeries(series.points, width, height,
                              series.windowSeconds, yMax);
  if (layout.points.length < 2) return layout;
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  ctx.moveTo(layout.points[0][0], layout.points[0][1]);
  for (const [x, y] of layout.points) ctx.lineTo(x, y);
  ctx.stroke();
  return layout;
}

export function drawStaleWatermark(ctx: CanvasRenderingContext2D,
                                   width: number, height: number) {
  ctx.save();
  ctx.fillStyle = "rgba(180, 30, 30, 0.15)";
  ctx.fillRect(0, 0, width, height);
  ctx.fillStyle = "rgba(180, 30, 30, 0.9)";
  ctx.font = "16px sans-serif";
  ctx.textAlign = "center";
  ctx.fillText("STALE DATA", width / 2, height / 2);
  ctx.restore();
}
