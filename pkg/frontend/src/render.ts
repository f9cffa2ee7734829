import type { Grid } from "./types.js";

export class RaggedGridError extends Error {}

/** Structural slice of CanvasRenderingContext2D so tests can fake it. */
export interface Raster2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  fillRect(x: number, y: number, w: number, h: number): void;
}

export function gridDims(grid: Grid): { rows: number; cols: number } {
  if (grid.length === 0 || !grid[0] || grid[0].length === 0) {
    throw new RaggedGridError("grid is empty");
  }
  const cols = grid[0].length;
  for (const row of grid) {
    if (row.length !== cols) {
      throw new RaggedGridError(`ragged grid: expected ${cols} columns, found ${row.length}`);
    }
  }
  return { rows: grid.length, cols };
}

/** Grayscale raster: one density cell becomes cellPx x cellPx screen pixels,
 *  density 0 renders white (void), 1 renders black (material). */
export function renderDensity(ctx: Raster2D, grid: Grid, cellPx: number): void {
  const { rows, cols } = gridDims(grid);
  ctx.fillStyle = "#ffffff";
  ctx.fillRect(0, 0, cols * cellPx, rows * cellPx);
  for (let y = 0; y < rows; y++) {
    const row = grid[y]!;
    for (let x = 0; x < cols; x++) {
      const v = Math.min(1, Math.max(0, row[x]!));
      const shade = Math.round((1 - v) * 255);
      if (shade === 255) {
        continue; // white background already painted
      }
      ctx.fillStyle = `rgb(${shade},${shade},${shade})`;
      ctx.fillRect(x * cellPx, y * cellPx, cellPx, cellPx);
    }
  }
}

export function rasterSize(grid: Grid, cellPx: number): { width: number; height: number } {
  const { rows, cols } = gridDims(grid);
  return { width: cols * cellPx, height: rows * cellPx };
}
