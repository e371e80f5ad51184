/** Pure geometry helpers for the trajectory panels.
 *
 * Everything here maps trajectory payloads to drawable primitives without
 * touching the DOM, so the same pair payload always produces the same
 * geometry (and the logic is testable without a canvas).
 */

import type { TrajectoryPayload } from "./api.js";

export interface Point {
  x: number;
  y: number;
}

export interface PathGeometry {
  points: Point[]; // scaled into the viewport
  start: Point;
  end: Point;
}

export interface Viewport {
  width: number;
  height: number;
  margin: number;
}

/** Bounding box of both trajectories so the two panels share one scale. */
export function sharedBounds(trajs: TrajectoryPayload[]): {
  minX: number;
  maxX: number;
  minY: number;
  maxY: number;
} {
  let minX = Infinity;
  let maxX = -Infinity;
  let minY = Infinity;
  let maxY = -Infinity;
  for (const traj of trajs) {
    for (const [x, y] of traj.render ?? []) {
      minX = Math.min(minX, x);
      maxX = Math.max(maxX, x);
      minY = Math.min(minY, y);
      maxY = Math.max(maxY, y);
    }
  }
  if (!isFinite(minX)) {
    minX = 0;
    maxX = 1;
    minY = 0;
    maxY = 1;
  }
  if (maxX === minX) maxX = minX + 1;
  if (maxY === minY) maxY = minY + 1;
  return { minX, maxX, minY, maxY };
}

export function pathGeometry(
  traj: TrajectoryPayload,
  bounds: ReturnType<typeof sharedBounds>,
  view: Viewport,
): PathGeometry {
  const raw = traj.render ?? traj.states.map((row, i) => [row[0] ?? i, row[1] ?? 0]);
  const sx = (view.width - 2 * view.margin) / (bounds.maxX - bounds.minX);
  const sy = (view.height - 2 * view.margin) / (bounds.maxY - bounds.minY);
  const points = raw.map(([x, y]) => ({
    x: view.margin + (x - bounds.minX) * sx,
    y: view.margin + (y - bounds.minY) * sy,
  }));
  return { points, start: points[0], end: points[points.length - 1] };
}

/** Per-timestep action magnitude (euclidean norm). */
export function actionMagnitudes(traj: TrajectoryPayload): number[] {
  return traj.actions.map((row) => Math.sqrt(row.reduce((acc, v) => acc + v * v, 0)));
}

/** Scale a series into [0, 1] for sparkline drawing; constant series map to 0.5. */
export function normalizeSeries(series: number[]): number[] {
  const lo = Math.min(...series);
  const hi = Math.max(...series);
  if (!isFinite(lo) || hi === lo) return series.map(() => 0.5);
  return series.map((v) => (v - lo) / (hi - lo));
}

/** One normalized polyline per state feature column. */
export function stateTraces(traj: TrajectoryPayload): number[][] {
  const dims = traj.states[0]?.length ?? 0;
  const traces: number[][] = [];
  for (let j = 0; j < dims; j++) {
    traces.push(normalizeSeries(traj.states.map((row) => row[j])));
  }
  return traces;
}

export function sparklinePath(series: number[], width: number, height: number): Point[] {
  const n = series.length;
  if (n === 0) return [];
  const dx = n > 1 ? width / (n - 1) : 0;
  return series.map((v, i) => ({ x: i * dx, y: height - v * height }));
}
