/** Scene rendering split in two: computeLayers builds a plain description of
 * everything visible this frame, drawLayers paints it. All condition gating
 * lives in computeLayers so tests can assert on the layer list without a
 * canvas. The server decides what may be shown (the packet's visibility
 * flags); this module only mirrors those flags.
 */

import type { FramePacket, ObstaclePayload, TrialInfo } from "./protocol.js";

export const GOAL_RADIUS = 0.3;
export const ROBOT_RADIUS = 0.2;

export type Vec2 = [number, number];

export type Layer =
  | { kind: "arena"; bounds: [number, number, number, number] }
  | { kind: "rays"; origin: Vec2; endpoints: Vec2[]; hits: boolean[] }
  | { kind: "obstacle"; obstacle: ObstaclePayload }
  | { kind: "outline"; obstacle: ObstaclePayload; width: number }
  | { kind: "goal"; center: Vec2; radius: number }
  | { kind: "guide"; from: Vec2; to: Vec2 }
  | { kind: "robot"; x: number; y: number; heading: number; radius: number }
  | { kind: "stop"; at: Vec2 }
  | { kind: "rank-label"; id: string; rank: number; at: Vec2 };

function labelAnchor(ob: ObstaclePayload): Vec2 {
  // nudge the label toward the obstacle's upper edge so it reads as attached
  const [cx, cy] = ob.center;
  const dy = ob.shape === "circle" ? ob.radius : ob.half_extents[1];
  return [cx, cy + dy + 0.15];
}

/** Build the draw list for one frame under the packet's condition flags.
 *
 * selection is the partial ranking in click order; each picked object gets
 * a numeric rank label next to it.
 */
export function computeLayers(
  trial: TrialInfo,
  packet: FramePacket,
  selection: readonly string[] = [],
): Layer[] {
  const layers: Layer[] = [];
  const scene = trial.scene;
  layers.push({ kind: "arena", bounds: scene.bounds });
  if (packet.lidar_visible) {
    layers.push({
      kind: "rays",
      origin: [packet.pose.x, packet.pose.y],
      endpoints: packet.ray_endpoints,
      hits: packet.ray_hits,
    });
  }
  for (const ob of scene.obstacles) {
    layers.push({ kind: "obstacle", obstacle: ob });
  }
  if (packet.xai_visible) {
    for (const ob of scene.obstacles) {
      const width = packet.outline_widths[ob.id];
      if (width !== undefined) {
        layers.push({ kind: "outline", obstacle: ob, width });
      }
    }
  }
  layers.push({ kind: "goal", center: scene.goal, radius: GOAL_RADIUS });
  layers.push({
    kind: "guide",
    from: [packet.pose.x, packet.pose.y],
    to: scene.goal,
  });
  layers.push({
    kind: "robot",
    x: packet.pose.x,
    y: packet.pose.y,
    heading: packet.pose.heading,
    radius: ROBOT_RADIUS,
  });
  if (packet.phase === "linger") {
    layers.push({ kind: "stop", at: [packet.pose.x, packet.pose.y] });
  }
  const byId = new Map(scene.obstacles.map((ob) => [ob.id, ob]));
  selection.forEach((id, i) => {
    const ob = byId.get(id);
    if (ob) layers.push({ kind: "rank-label", id, rank: i + 1, at: labelAnchor(ob) });
  });
  return layers;
}

// ---------------------------------------------------------------------------
// canvas painter

export interface Viewport {
  width: number;
  height: number;
}

interface Transform {
  sx: (x: number) => number;
  sy: (y: number) => number;
  sd: (d: number) => number;
}

function fit(bounds: [number, number, number, number], view: Viewport): Transform {
  const [xmin, ymin, xmax, ymax] = bounds;
  const margin = 10;
  const scale = Math.min(
    (view.width - 2 * margin) / (xmax - xmin),
    (view.height - 2 * margin) / (ymax - ymin),
  );
  const ox = (view.width - scale * (xmax - xmin)) / 2;
  const oy = (view.height - scale * (ymax - ymin)) / 2;
  return {
    sx: (x) => ox + scale * (x - xmin),
    // canvas y grows downward; world y grows upward
    sy: (y) => view.height - oy - scale * (y - ymin),
    sd: (d) => scale * d,
  };
}

function tracePath(ctx: CanvasRenderingContext2D, t: Transform, ob: ObstaclePayload): void {
  ctx.beginPath();
  if (ob.shape === "circle") {
    ctx.arc(t.sx(ob.center[0]), t.sy(ob.center[1]), t.sd(ob.radius), 0, 2 * Math.PI);
  } else {
    const [hx, hy] = ob.half_extents;
    ctx.rect(
      t.sx(ob.center[0] - hx),
      t.sy(ob.center[1] + hy),
      t.sd(2 * hx),
      t.sd(2 * hy),
    );
  }
}

export function drawLayers(
  ctx: CanvasRenderingContext2D,
  layers: Layer[],
  view: Viewport,
): void {
  const arena = layers.find((l) => l.kind === "arena");
  if (!arena || arena.kind !== "arena") return;
  const t = fit(arena.bounds, view);
  ctx.clearRect(0, 0, view.width, view.height);
  for (const layer of layers) {
    switch (layer.kind) {
      case "arena": {
        const [xmin, ymin, xmax, ymax] = layer.bounds;
        ctx.fillStyle = "#1c1f24";
        ctx.fillRect(0, 0, view.width, view.height);
        ctx.strokeStyle = "#555";
        ctx.lineWidth = 2;
        ctx.strokeRect(
          t.sx(xmin),
          t.sy(ymax),
          t.sd(xmax - xmin),
          t.sd(ymax - ymin),
        );
        break;
      }
      case "rays": {
        ctx.lineWidth = 1;
        const [ox, oy] = layer.origin;
        layer.endpoints.forEach(([ex, ey], i) => {
          ctx.strokeStyle = layer.hits[i] ? "#e5484d" : "#46a758";
          ctx.globalAlpha = 0.45;
          ctx.beginPath();
          ctx.moveTo(t.sx(ox), t.sy(oy));
          ctx.lineTo(t.sx(ex), t.sy(ey));
          ctx.stroke();
        });
        ctx.globalAlpha = 1;
        break;
      }
      case "obstacle": {
        tracePath(ctx, t, layer.obstacle);
        ctx.fillStyle = "#6e7681";
        ctx.fill();
        break;
      }
      case "outline": {
        tracePath(ctx, t, layer.obstacle);
        ctx.strokeStyle = "#ffffff";
        ctx.lineWidth = Math.max(1, t.sd(0.02) * layer.width);
        ctx.stroke();
        break;
      }
      case "goal": {
        ctx.beginPath();
        ctx.arc(t.sx(layer.center[0]), t.sy(layer.center[1]), t.sd(layer.radius), 0, 2 * Math.PI);
        ctx.fillStyle = "rgba(70, 167, 88, 0.7)";
        ctx.fill();
        break;
      }
      case "guide": {
        ctx.strokeStyle = "#46a758";
        ctx.lineWidth = 1.5;
        ctx.setLineDash([6, 6]);
        ctx.beginPath();
        ctx.moveTo(t.sx(layer.from[0]), t.sy(layer.from[1]));
        ctx.lineTo(t.sx(layer.to[0]), t.sy(layer.to[1]));
        ctx.stroke();
        ctx.setLineDash([]);
        break;
      }
      case "robot": {
        const { x, y, heading, radius } = layer;
        ctx.beginPath();
        ctx.arc(t.sx(x), t.sy(y), t.sd(radius), 0, 2 * Math.PI);
        ctx.fillStyle = "#4493f8";
        ctx.fill();
        ctx.strokeStyle = "#dce3ea";
        ctx.lineWidth = 2;
        ctx.beginPath();
        ctx.moveTo(t.sx(x), t.sy(y));
        ctx.lineTo(t.sx(x + 1.6 * radius * Math.cos(heading)), t.sy(y + 1.6 * radius * Math.sin(heading)));
        ctx.stroke();
        break;
      }
      case "stop": {
        const [x, y] = layer.at;
        ctx.font = "bold 22px system-ui";
        ctx.textAlign = "center";
        ctx.fillStyle = "#e5484d";
        ctx.fillText("STOP", t.sx(x), t.sy(y) - 18);
        break;
      }
      case "rank-label": {
        const [x, y] = layer.at;
        ctx.font = "bold 16px system-ui";
        ctx.textAlign = "center";
        ctx.fillStyle = "#f0b429";
        ctx.fillText(String(layer.rank), t.sx(x), t.sy(y));
        break;
      }
    }
  }
}

/** Hit test in world coordinates: which obstacle contains the point, if any. */
export function obstacleAt(
  obstacles: readonly ObstaclePayload[],
  x: number,
  y: number,
): string | null {
  for (const ob of obstacles) {
    const dx = x - ob.center[0];
    const dy = y - ob.center[1];
    if (ob.shape === "circle") {
      if (dx * dx + dy * dy <= ob.radius * ob.radius) return ob.id;
    } else if (Math.abs(dx) <= ob.half_extents[0] && Math.abs(dy) <= ob.half_extents[1]) {
      return ob.id;
    }
  }
  return null;
}

/** Inverse of the canvas fit: screen pixel to world point. */
export function screenToWorld(
  bounds: [number, number, number, number],
  view: Viewport,
  px: number,
  py: number,
): Vec2 {
  const [xmin, ymin, xmax, ymax] = bounds;
  const margin = 10;
  const scale = Math.min(
    (view.width - 2 * margin) / (xmax - xmin),
    (view.height - 2 * margin) / (ymax - ymin),
  );
  const ox = (view.width - scale * (xmax - xmin)) / 2;
  const oy = (view.height - scale * (ymax - ymin)) / 2;
  return [xmin + (px - ox) / scale, ymin + (view.height - oy - py) / scale];
}
