import type { TrainEvent } from "./types.js";

export interface ChartPoint {
  x: number;
  y: number;
  epoch: number;
  value: number;
}

export interface ChartGeometry {
  width: number;
  height: number;
  train: ChartPoint[];
  validation: ChartPoint[];
  trainPath: string;
  validationPath: string;
  yTicks: { y: number; label: string }[];
  xTicks: { x: number; label: string }[];
}

const PAD = { left: 46, right: 12, top: 10, bottom: 24 };

function path(points: ChartPoint[]): string {
  return points
    .map((p, i) => `${i === 0 ? "M" : "L"}${p.x.toFixed(1)},${p.y.toFixed(1)}`)
    .join(" ");
}

/** Chart geometry is a pure function of the received events: one point per
 * event per series, in arrival order, no interpolation of missing epochs.
 * A replayed epoch (after a reset) plots as its own point at the same x. */
export function chartGeometry(
  events: TrainEvent[],
  width = 640,
  height = 320,
): ChartGeometry {
  const innerW = width - PAD.left - PAD.right;
  const innerH = height - PAD.top - PAD.bottom;
  const losses = events.flatMap((e) => [e.train_loss, e.validation_loss]);
  const epochs = events.map((e) => e.epoch);
  const yMax = losses.length ? Math.max(...losses) : 1;
  const xMax = epochs.length ? Math.max(...epochs) : 1;
  const xMin = 1;
  const xSpan = Math.max(xMax - xMin, 1);
  const ySpan = yMax > 0 ? yMax : 1;

  const toX = (epoch: number) => PAD.left + ((epoch - xMin) / xSpan) * innerW;
  const toY = (loss: number) => PAD.top + (1 - loss / ySpan) * innerH;

  const mk = (value: (e: TrainEvent) => number): ChartPoint[] =>
    events.map((e) => ({
      x: toX(e.epoch),
      y: toY(value(e)),
      epoch: e.epoch,
      value: value(e),
    }));

  const train = mk((e) => e.train_loss);
  const validation = mk((e) => e.validation_loss);

  const yTicks = [0, 0.25, 0.5, 0.75, 1].map((f) => ({
    y: toY(f * ySpan),
    label: (f * ySpan).toPrecision(3),
  }));
  const xTicks = Array.from(new Set(epochs)).map((epoch) => ({
    x: toX(epoch),
    label: String(epoch),
  }));

  return { width, height, train, validation, trainPath: path(train),
           validationPath: path(validation), yTicks, xTicks };
}
