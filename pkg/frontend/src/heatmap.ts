// Field-of-view coverage model: per-cell counts of how often the sensor
// footprint covered each cell, plus the monotone blue shading used to draw it.

import { WorldSnapshot } from "./protocol.js";

export interface CoverageArtifact {
  bounds: { min: number[]; max: number[] };
  cell_size: number;
  nx: number;
  ny: number;
  counts: number[][];
  path: { x: number; y: number; z?: number; yaw: number }[];
}

export class CoverageModel {
  nx: number;
  ny: number;
  cellSize: number;
  minX: number;
  minY: number;
  counts: number[][]; // [ix][iy]

  constructor(minX: number, minY: number, maxX: number, maxY: number, cellSize: number) {
    this.minX = minX;
    this.minY = minY;
    this.cellSize = cellSize;
    this.nx = Math.ceil((maxX - minX) / cellSize);
    this.ny = Math.ceil((maxY - minY) / cellSize);
    this.counts = Array.from({ length: this.nx }, () => new Array(this.ny).fill(0));
  }

  static fromArtifact(doc: CoverageArtifact): CoverageModel {
    const model = new CoverageModel(
      doc.bounds.min[0],
      doc.bounds.min[1],
      doc.bounds.max[0],
      doc.bounds.max[1],
      doc.cell_size,
    );
    if (doc.counts.length !== model.nx) {
      throw new Error(`artifact grid is ${doc.counts.length} columns, expected ${model.nx}`);
    }
    model.counts = doc.counts.map((column) => [...column]);
    return model;
  }

  static forSnapshot(snapshot: WorldSnapshot, cellSize = 1.0): CoverageModel {
    return new CoverageModel(
      snapshot.bounds.min[0],
      snapshot.bounds.min[1],
      snapshot.bounds.max[0],
      snapshot.bounds.max[1],
      cellSize,
    );
  }

  cellCenter(ix: number, iy: number): [number, number] {
    return [this.minX + (ix + 0.5) * this.cellSize, this.minY + (iy + 0.5) * this.cellSize];
  }

  /** Increment every cell whose center lies in the sector: range and bearing
   * boundaries inclusive, matching the simulation's visibility rule. */
  addPose(x: number, y: number, yawDeg: number, halfAngleDeg: number, rangeM: number): number {
    let incremented = 0;
    for (let ix = 0; ix < this.nx; ix++) {
      for (let iy = 0; iy < this.ny; iy++) {
        const [cx, cy] = this.cellCenter(ix, iy);
        const dx = cx - x;
        const dy = cy - y;
        if (Math.hypot(dx, dy) > rangeM) continue;
        let bearing = (Math.atan2(dy, dx) * 180) / Math.PI - yawDeg;
        bearing = ((bearing % 360) + 540) % 360 - 180;
        if (Math.abs(bearing) > halfAngleDeg) continue;
        this.counts[ix][iy] += 1;
        incremented += 1;
      }
    }
    return incremented;
  }

  maxCount(): number {
    let max = 0;
    for (const column of this.counts) {
      for (const count of column) if (count > max) max = count;
    }
    return max;
  }

  total(): number {
    let total = 0;
    for (const column of this.counts) for (const count of column) total += count;
    return total;
  }
}

/** Opacity of a cell: 0 for never covered, then strictly increasing with the
 * count (deeper blue = covered more often). */
export function shadeAlpha(count: number, maxCount: number): number {
  if (count <= 0 || maxCount <= 0) return 0;
  return 0.15 + 0.75 * (count / maxCount);
}

export function shadeColor(count: number, maxCount: number): string {
  return `rgba(30, 80, 200, ${shadeAlpha(count, maxCount).toFixed(4)})`;
}
