/**
 * Canvas rendering split into a pure draw-list builder (testable in node)
 * and a thin applier that executes the list on a 2D context.
 *
 * Colors follow the annotation display convention: red for derived
 * shading-only edges, dark green for reflectance-only edges, a rotating
 * palette for regions.
 */

import { Pixel } from "./document.js";
import { UiSession } from "./session.js";

export const COLOR_SHADING_EDGE = "#e82020";
export const COLOR_REFLECTANCE_EDGE = "#1c6b1c";
export const REGION_PALETTE = [
  "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#bfef45",
  "#fabed4", "#469990", "#dcbeff", "#9a6324", "#fffac8",
];
export const COLOR_CANNY = "#c0c0c0";

export type DrawOp =
  | { kind: "image"; png: string; zoom: number }
  | { kind: "pixels"; color: string; alpha: number; zoom: number; pixels: Pixel[] }
  | { kind: "outline"; color: string; zoom: number; loop: Pixel[] };

export function regionColor(id: number): string {
  return REGION_PALETTE[(id - 1 + REGION_PALETTE.length * 64) % REGION_PALETTE.length];
}

/** Deterministic draw list for the current session state. */
export function buildDrawList(session: UiSession, zoom: number): DrawOp[] {
  const ops: DrawOp[] = [];
  if (session.imagePng) {
    ops.push({ kind: "image", png: session.imagePng, zoom });
  }
  if (session.cannyPixels.length) {
    ops.push({ kind: "pixels", color: COLOR_CANNY, alpha: 0.5, zoom, pixels: session.cannyPixels });
  }
  for (const region of session.regionList) {
    for (const loop of region.polygons) {
      ops.push({ kind: "outline", color: regionColor(region.id), zoom, loop });
    }
    if (region.points.length) {
      ops.push({ kind: "pixels", color: regionColor(region.id), alpha: 0.35, zoom, pixels: region.points });
    }
  }
  const shading = session.shadingEdgesPreview;
  if (shading.length) {
    ops.push({ kind: "pixels", color: COLOR_SHADING_EDGE, alpha: 0.9, zoom, pixels: shading });
  }
  const reflectance = session.reflectanceEdges;
  if (reflectance.length) {
    ops.push({ kind: "pixels", color: COLOR_REFLECTANCE_EDGE, alpha: 0.9, zoom, pixels: reflectance });
  }
  return ops;
}

/** Execute a draw list on a canvas context (browser only). */
export function applyDrawList(
  ctx: CanvasRenderingContext2D,
  ops: DrawOp[],
  imageBitmap: ImageBitmap | null
): void {
  ctx.imageSmoothingEnabled = false;
  for (const op of ops) {
    if (op.kind === "image") {
      if (imageBitmap) {
        ctx.drawImage(imageBitmap, 0, 0, imageBitmap.width * op.zoom, imageBitmap.height * op.zoom);
      }
    } else if (op.kind === "pixels") {
      ctx.globalAlpha = op.alpha;
      ctx.fillStyle = op.color;
      for (const [x, y] of op.pixels) {
        ctx.fillRect(x * op.zoom, y * op.zoom, op.zoom, op.zoom);
      }
      ctx.globalAlpha = 1.0;
    } else {
      ctx.strokeStyle = op.color;
      ctx.lineWidth = Math.max(1, op.zoom / 4);
      ctx.beginPath();
      op.loop.forEach(([x, y], i) => {
        if (i === 0) ctx.moveTo((x + 0.5) * op.zoom, (y + 0.5) * op.zoom);
        else ctx.lineTo((x + 0.5) * op.zoom, (y + 0.5) * op.zoom);
      });
      ctx.closePath();
      ctx.stroke();
    }
  }
}
