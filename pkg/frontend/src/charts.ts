// Hand-rolled canvas time-series plot: traces, reference band, axes.
// No charting dependency; full-rate data arrives decimated by the caller.

import { decimateMinMax } from "./viewmodel.js";

export interface Trace {
  label: string;
  color: string;
  points: { t: number; v: number }[];
}

export interface Band {
  lo: number;
  hi: number;
  color: string;
}

export function drawTimeSeries(
  canvas: HTMLCanvasElement,
  traces: Trace[],
  band: Band | null,
  windowS: number,
  yLabel: string,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  const pad = { left: 42, right: 8, top: 8, bottom: 20 };
  const plotW = width - pad.left - pad.right;
  const plotH = height - pad.top - pad.bottom;

  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#11161d";
  ctx.fillRect(0, 0, width, height);

  const tMax = Math.max(windowS, ...traces.flatMap((tr) => tr.points.map((p) => p.t)));
  const tMin = tMax - windowS;
  let vMax = band ? band.hi : 1;
  let vMin = band ? band.lo : 0;
  for (const tr of traces) {
    for (const p of tr.points) {
      if (p.t < tMin) continue;
      if (p.v > vMax) vMax = p.v;
      if (p.v < vMin) vMin = p.v;
    }
  }
  const spread = vMax - vMin || 1;
  vMax += 0.08 * spread;
  vMin -= 0.08 * spread;

  const x = (t: number) => pad.left + ((t - tMin) / windowS) * plotW;
  const y = (v: number) => pad.top + (1 - (v - vMin) / (vMax - vMin)) * plotH;

  if (band) {
    ctx.fillStyle = band.color;
    ctx.fillRect(pad.left, y(band.hi), plotW, Math.max(1, y(band.lo) - y(band.hi)));
  }

  ctx.strokeStyle = "#3a4656";
  ctx.lineWidth = 1;
  ctx.strokeRect(pad.left, pad.top, plotW, plotH);
  ctx.fillStyle = "#8b98a9";
  ctx.font = "10px sans-serif";
  for (let i = 0; i <= 4; i++) {
    const v = vMin + ((vMax - vMin) * i) / 4;
    ctx.fillText(v.toFixed(1), 4, y(v) + 3);
  }
  ctx.fillText(yLabel, 4, pad.top - 1);
  for (let i = 0; i <= 3; i++) {
    const t = tMin + (windowS * i) / 3;
    ctx.fillText(`${t.toFixed(0)}s`, x(t) - 8, height - 6);
  }

  for (const tr of traces) {
    const visible = tr.points.filter((p) => p.t >= tMin);
    const pts = decimateMinMax(visible, plotW);
    if (pts.length === 0) continue;
    ctx.strokeStyle = tr.color;
    ctx.lineWidth = 1.4;
    ctx.beginPath();
    pts.forEach((p, i) => (i === 0 ? ctx.moveTo(x(p.t), y(p.v)) : ctx.lineTo(x(p.t), y(p.v))));
    ctx.stroke();
  }

  let lx = pad.left + 6;
  for (const tr of traces) {
    ctx.fillStyle = tr.color;
    ctx.fillText(tr.label, lx, pad.top + 12);
    lx += ctx.measureText(tr.label).width + 14;
  }
}
