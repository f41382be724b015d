/**
 * Client-side binary mask raster with brush, polygon and whole-image tools.
 *
 * Values are 0 or 1 at native image resolution; PNG export maps 1 -> 255.
 * Every mutating tool pushes the prior state onto an undo stack.
 */

export interface Point {
  x: number;
  y: number;
}

export const UNDO_DEPTH = 20;

export class MaskRaster {
  readonly width: number;
  readonly height: number;
  data: Uint8Array;
  private undoStack: Uint8Array[] = [];

  constructor(width: number, height: number) {
    if (width < 1 || height < 1 || !Number.isInteger(width) || !Number.isInteger(height)) {
      throw new Error(`invalid mask dimensions ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.data = new Uint8Array(width * height);
  }

  at(x: number, y: number): number {
    return this.data[y * this.width + x];
  }

  isEmpty(): boolean {
    return !this.data.some((v) => v !== 0);
  }

  count(): number {
    let n = 0;
    for (const v of this.data) n += v;
    return n;
  }

  private snapshot(): void {
    this.undoStack.push(this.data.slice());
    if (this.undoStack.length > UNDO_DEPTH) this.undoStack.shift();
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.data = prev;
    return true;
  }

  clear(): void {
    this.snapshot();
    this.data.fill(0);
  }

  fillAll(): void {
    this.snapshot();
    this.data.fill(1);
  }

  /** Circular brush along a polyline; value 1 paints, 0 erases. */
  brushStroke(points: Point[], radius: number, value: 0 | 1 = 1): void {
    if (points.length === 0) return;
    this.snapshot();
    const r2 = radius * radius;
    const stamp = (cx: number, cy: number) => {
      const x0 = Math.max(0, Math.floor(cx - radius));
      const x1 = Math.min(this.width - 1, Math.ceil(cx + radius));
      const y0 = Math.max(0, Math.floor(cy - radius));
      const y1 = Math.min(this.height - 1, Math.ceil(cy + radius));
      for (let y = y0; y <= y1; y++) {
        for (let x = x0; x <= x1; x++) {
          const dx = x - cx;
          const dy = y - cy;
          if (dx * dx + dy * dy <= r2) this.data[y * this.width + x] = value;
        }
      }
    };
    stamp(points[0].x, points[0].y);
    for (let i = 1; i < points.length; i++) {
      const a = points[i - 1];
      const b = points[i];
      const steps = Math.max(1, Math.ceil(Math.hypot(b.x - a.x, b.y - a.y)));
      for (let s = 1; s <= steps; s++) {
        stamp(a.x + ((b.x - a.x) * s) / steps, a.y + ((b.y - a.y) * s) / steps);
      }
    }
  }

  /** Even-odd scanline fill of a closed polygon (pixel centers tested). */
  fillPolygon(points: Point[], value: 0 | 1 = 1): void {
    if (points.length < 3) throw new Error("polygon needs at least 3 points");
    this.snapshot();
    const n = points.length;
    for (let y = 0; y < this.height; y++) {
      const cy = y + 0.5;
      const xs: number[] = [];
      for (let i = 0; i < n; i++) {
        const a = points[i];
        const b = points[(i + 1) % n];
        if (a.y <= cy !== b.y <= cy) {
          xs.push(a.x + ((cy - a.y) / (b.y - a.y)) * (b.x - a.x));
        }
      }
      xs.sort((u, v) => u - v);
      for (let k = 0; k + 1 < xs.length; k += 2) {
        const x0 = Math.max(0, Math.ceil(xs[k] - 0.5));
        const x1 = Math.min(this.width - 1, Math.floor(xs[k + 1] - 0.5));
        for (let x = x0; x <= x1; x++) this.data[y * this.width + x] = value;
      }
    }
  }

  /** Axis-aligned filled rectangle, clamped to the raster. */
  fillRect(x: number, y: number, w: number, h: number, value: 0 | 1 = 1): void {
    this.snapshot();
    const x1 = Math.min(this.width, x + w);
    const y1 = Math.min(this.height, y + h);
    for (let yy = Math.max(0, y); yy < y1; yy++) {
      for (let xx = Math.max(0, x); xx < x1; xx++) this.data[yy * this.width + xx] = value;
    }
  }

  /** 0/255 grayscale bytes, row-major — the PNG export payload. */
  toGray(): Uint8Array {
    return this.data.map((v) => (v ? 255 : 0));
  }

  static fromGray(gray: Uint8Array, width: number, height: number, threshold = 128): MaskRaster {
    if (gray.length !== width * height) {
      throw new Error(`expected ${width * height} bytes, got ${gray.length}`);
    }
    const m = new MaskRaster(width, height);
    for (let i = 0; i < gray.length; i++) m.data[i] = gray[i] >= threshold ? 1 : 0;
    return m;
  }

  equals(other: MaskRaster): boolean {
    return (
      this.width === other.width &&
      this.height === other.height &&
      this.data.every((v, i) => v === other.data[i])
    );
  }
}

/** Strided subsampling to latent resolution, mirroring the trainer's rule. */
export function downsampleMask(mask: MaskRaster, factor: number): MaskRaster {
  if (factor < 1 || !Number.isInteger(factor)) throw new Error(`bad factor ${factor}`);
  if (mask.width % factor || mask.height % factor) {
    throw new Error(`mask dims ${mask.width}x${mask.height} not divisible by ${factor}`);
  }
  const out = new MaskRaster(mask.width / factor, mask.height / factor);
  for (let y = 0; y < out.height; y++) {
    for (let x = 0; x < out.width; x++) {
      out.data[y * out.width + x] = mask.at(x * factor, y * factor);
    }
  }
  return out;
}
