// Top-down 2D canvas rendering of a world snapshot: bounds, entities, the
// robot with its yaw arrow, the traveled path, and an optional coverage layer.

import { CoverageModel, shadeColor } from "./heatmap.js";
import { WorldSnapshot } from "./protocol.js";
import { PathPoint } from "./state.js";

const CLASS_COLORS: Record<string, string> = {
  bottle: "#2f9e44",
  spot: "#e8590c",
  chair: "#845ef7",
  lamp: "#fab005",
  person: "#e64980",
  pavilion: "#1098ad",
  building: "#868e96",
  tree: "#40c057",
  trash_can: "#5f3dc4",
};

function colorFor(classLabel: string): string {
  const known = CLASS_COLORS[classLabel];
  if (known) return known;
  let hash = 0;
  for (const ch of classLabel) hash = (hash * 31 + ch.charCodeAt(0)) % 360;
  return `hsl(${hash}, 60%, 45%)`;
}

interface Transform {
  scale: number;
  toX(x: number): number;
  toY(y: number): number;
}

function fitTransform(snapshot: WorldSnapshot, width: number, height: number): Transform {
  const [minX, minY] = snapshot.bounds.min;
  const [maxX, maxY] = snapshot.bounds.max;
  const margin = 14;
  const scale = Math.min(
    (width - 2 * margin) / (maxX - minX),
    (height - 2 * margin) / (maxY - minY),
  );
  return {
    scale,
    toX: (x) => margin + (x - minX) * scale,
    // Canvas y grows downward; world y grows upward.
    toY: (y) => height - margin - (y - minY) * scale,
  };
}

export interface WorldViewOptions {
  coverage?: CoverageModel | null;
  path?: PathPoint[];
  showLabels?: boolean;
}

export function drawWorld(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  snapshot: WorldSnapshot,
  options: WorldViewOptions = {},
): void {
  ctx.clearRect(0, 0, width, height);
  const t = fitTransform(snapshot, width, height);

  if (options.coverage) {
    const grid = options.coverage;
    const max = grid.maxCount();
    const cell = grid.cellSize * t.scale;
    for (let ix = 0; ix < grid.nx; ix++) {
      for (let iy = 0; iy < grid.ny; iy++) {
        const count = grid.counts[ix][iy];
        if (count <= 0) continue;
        const [cx, cy] = grid.cellCenter(ix, iy);
        ctx.fillStyle = shadeColor(count, max);
        ctx.fillRect(t.toX(cx) - cell / 2, t.toY(cy) - cell / 2, cell, cell);
      }
    }
  }

  // Scene boundary.
  ctx.strokeStyle = "#222";
  ctx.lineWidth = 2;
  ctx.strokeRect(
    t.toX(snapshot.bounds.min[0]),
    t.toY(snapshot.bounds.max[1]),
    (snapshot.bounds.max[0] - snapshot.bounds.min[0]) * t.scale,
    (snapshot.bounds.max[1] - snapshot.bounds.min[1]) * t.scale,
  );

  // Traveled path.
  const path = options.path ?? [];
  if (path.length > 1) {
    ctx.strokeStyle = "rgba(25, 113, 194, 0.8)";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(t.toX(path[0].x), t.toY(path[0].y));
    for (const point of path.slice(1)) ctx.lineTo(t.toX(point.x), t.toY(point.y));
    ctx.stroke();
    for (const point of path) {
      ctx.fillStyle = "rgba(25, 113, 194, 0.55)";
      ctx.beginPath();
      ctx.arc(t.toX(point.x), t.toY(point.y), 2.2, 0, 2 * Math.PI);
      ctx.fill();
    }
  }

  // Origin marker.
  const [ox, oy] = snapshot.origin;
  ctx.strokeStyle = "#999";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.arc(t.toX(ox), t.toY(oy), 6, 0, 2 * Math.PI);
  ctx.stroke();

  // Entities.
  for (const entity of snapshot.entities) {
    const x = t.toX(entity.x);
    const y = t.toY(entity.y);
    ctx.fillStyle = colorFor(entity.class);
    ctx.beginPath();
    if (entity.graspable) {
      ctx.arc(x, y, 4.5, 0, 2 * Math.PI);
    } else {
      ctx.rect(x - 4, y - 4, 8, 8);
    }
    ctx.fill();
    if (entity.id === snapshot.held_entity) {
      ctx.strokeStyle = "#e03131";
      ctx.lineWidth = 2;
      ctx.stroke();
    }
    if (options.showLabels !== false) {
      ctx.fillStyle = "#444";
      ctx.font = "10px system-ui, sans-serif";
      ctx.fillText(entity.id, x + 6, y - 4);
    }
  }

  // The robot: a heading triangle plus a yaw arrow.
  const [rx, ry, , yaw] = snapshot.robot.pose;
  const cx = t.toX(rx);
  const cy = t.toY(ry);
  const rad = (-yaw * Math.PI) / 180; // canvas y is flipped
  ctx.save();
  ctx.translate(cx, cy);
  ctx.rotate(rad);
  ctx.fillStyle = snapshot.robot.kind === "uav" ? "#1971c2" : "#0b7285";
  ctx.beginPath();
  ctx.moveTo(9, 0);
  ctx.lineTo(-6, 5.5);
  ctx.lineTo(-6, -5.5);
  ctx.closePath();
  ctx.fill();
  ctx.strokeStyle = "#1971c2";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  ctx.moveTo(0, 0);
  ctx.lineTo(20, 0);
  ctx.stroke();
  ctx.restore();
}
