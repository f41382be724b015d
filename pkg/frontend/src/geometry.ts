import type { MaskRaster } from "./mask.js";

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

/**
 * Bounding box of the mask support, expanded by `margin` pixels and clamped
 * to the raster. Returns null for an empty mask.
 */
export function boundingBox(mask: MaskRaster, margin = 0): Box | null {
  let minX = mask.width;
  let minY = mask.height;
  let maxX = -1;
  let maxY = -1;
  for (let y = 0; y < mask.height; y++) {
    for (let x = 0; x < mask.width; x++) {
      if (mask.at(x, y)) {
        if (x < minX) minX = x;
        if (x > maxX) maxX = x;
        if (y < minY) minY = y;
        if (y > maxY) maxY = y;
      }
    }
  }
  if (maxX < 0) return null;
  const x = Math.max(0, minX - margin);
  const y = Math.max(0, minY - margin);
  return {
    x,
    y,
    w: Math.min(mask.width - 1, maxX + margin) - x + 1,
    h: Math.min(mask.height - 1, maxY + margin) - y + 1,
  };
}
