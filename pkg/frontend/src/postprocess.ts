import type { Grid } from "./types.js";

/** Client-side mirror of the service post-processing (threshold then 5x5
 *  Gaussian, reflect padding) so the raw/processed toggle needs no round trip. */

export function threshold(grid: Grid, t = 0.5): Grid {
  return grid.map((row) => row.map((v) => (v > t ? 1 : 0)));
}

export function gaussianKernel1d(size: number, sigma: number): number[] {
  if (size < 1 || size % 2 === 0) {
    throw new Error(`kernel size must be odd and >= 1, got ${size}`);
  }
  const half = Math.floor(size / 2);
  const weights: number[] = [];
  let total = 0;
  for (let i = -half; i <= half; i++) {
    const w = Math.exp(-0.5 * (i / sigma) ** 2);
    weights.push(w);
    total += w;
  }
  return weights.map((w) => w / total);
}

function reflectIndex(i: number, n: number): number {
  // numpy-style "reflect": edge value not repeated
  if (n === 1) return 0;
  const period = 2 * n - 2;
  let j = Math.abs(i) % period;
  if (j >= n) j = period - j;
  return j;
}

export function gaussianSmooth(grid: Grid, size = 5, sigma = 1.0): Grid {
  const w = gaussianKernel1d(size, sigma);
  const half = Math.floor(size / 2);
  const rows = grid.length;
  const cols = grid[0]?.length ?? 0;
  const horizontal: Grid = [];
  for (let y = 0; y < rows; y++) {
    const out: number[] = [];
    for (let x = 0; x < cols; x++) {
      let acc = 0;
      for (let k = -half; k <= half; k++) {
        acc += w[k + half]! * grid[y]![reflectIndex(x + k, cols)]!;
      }
      out.push(acc);
    }
    horizontal.push(out);
  }
  const final: Grid = [];
  for (let y = 0; y < rows; y++) {
    const out: number[] = [];
    for (let x = 0; x < cols; x++) {
      let acc = 0;
      for (let k = -half; k <= half; k++) {
        acc += w[k + half]! * horizontal[reflectIndex(y + k, rows)]![x]!;
      }
      out.push(acc);
    }
    final.push(out);
  }
  return final;
}

export function postprocess(grid: Grid): Grid {
  return gaussianSmooth(threshold(grid));
}
