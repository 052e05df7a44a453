/**
 * Scribble canvas model: a ternary label buffer painted with hard-edged
 * disk strokes, with exact whole-stroke undo and deterministic PNG export.
 */

import { encodeGrayPng } from "./png.js";

export const BACKGROUND = 0;
export const UNLABELED = 128;
export const FOREGROUND = 255;

export type Polarity = "foreground" | "background" | "eraser";

export interface StrokePoint {
  x: number;
  y: number;
}

export interface Stroke {
  polarity: Polarity;
  radius: number;
  points: StrokePoint[];
}

export function polarityValue(polarity: Polarity): number {
  if (polarity === "foreground") return FOREGROUND;
  if (polarity === "background") return BACKGROUND;
  return UNLABELED;
}

/** Pixel centers within `radius` of the segment from a to b (hard edge). */
function rasterSegment(
  width: number,
  height: number,
  a: StrokePoint,
  b: StrokePoint,
  radius: number,
  hit: (index: number) => void,
): void {
  const minX = Math.max(0, Math.floor(Math.min(a.x, b.x) - radius));
  const maxX = Math.min(width - 1, Math.ceil(Math.max(a.x, b.x) + radius));
  const minY = Math.max(0, Math.floor(Math.min(a.y, b.y) - radius));
  const maxY = Math.min(height - 1, Math.ceil(Math.max(a.y, b.y) + radius));
  const dx = b.x - a.x;
  const dy = b.y - a.y;
  const lenSq = dx * dx + dy * dy;
  const rSq = radius * radius;
  for (let y = minY; y <= maxY; y++) {
    for (let x = minX; x <= maxX; x++) {
      let t = 0;
      if (lenSq > 0) {
        t = Math.max(0, Math.min(1, ((x - a.x) * dx + (y - a.y) * dy) / lenSq));
      }
      const ex = x - (a.x + t * dx);
      const ey = y - (a.y + t * dy);
      if (ex * ex + ey * ey <= rSq) {
        hit(y * width + x);
      }
    }
  }
}

/** Rasterize one stroke onto a label buffer in place. */
export function applyStroke(
  labels: Uint8Array,
  width: number,
  height: number,
  stroke: Stroke,
): void {
  if (stroke.points.length === 0) return;
  const value = polarityValue(stroke.polarity);
  const pts = stroke.points;
  for (let i = 0; i < Math.max(1, pts.length - 1); i++) {
    const a = pts[i];
    const b = pts[Math.min(i + 1, pts.length - 1)];
    rasterSegment(width, height, a, b, stroke.radius, (index) => {
      labels[index] = value;
    });
  }
}

/** Rasterize a whole stroke list onto a fresh all-Unlabeled buffer. */
export function rasterizeStrokes(
  width: number,
  height: number,
  strokes: Stroke[],
): Uint8Array {
  const labels = new Uint8Array(width * height).fill(UNLABELED);
  for (const stroke of strokes) {
    applyStroke(labels, width, height, stroke);
  }
  return labels;
}

interface UndoEntry {
  indices: Uint32Array;
  previous: Uint8Array;
}

export class ScribbleCanvas {
  readonly width: number;
  readonly height: number;
  readonly labels: Uint8Array;
  dirty = false;
  private undoStack: UndoEntry[] = [];

  constructor(width: number, height: number, initial?: Uint8Array) {
    if (width <= 0 || height <= 0) {
      throw new Error("canvas dimensions must be positive");
    }
    this.width = width;
    this.height = height;
    this.labels = new Uint8Array(width * height).fill(UNLABELED);
    if (initial) {
      if (initial.length !== width * height) {
        throw new Error("initial labels do not match canvas size");
      }
      for (const v of initial) {
        if (v !== BACKGROUND && v !== UNLABELED && v !== FOREGROUND) {
          throw new Error(`invalid scribble value ${v}`);
        }
      }
      this.labels.set(initial);
    }
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /** Apply a stroke, recording the exact pixels it overwrote. */
  stroke(stroke: Stroke): void {
    const touched = new Map<number, number>();
    const value = polarityValue(stroke.polarity);
    const pts = stroke.points;
    for (let i = 0; i < Math.max(1, pts.length - 1); i++) {
      const a = pts[i];
      const b = pts[Math.min(i + 1, pts.length - 1)];
      rasterSegment(this.width, this.height, a, b, stroke.radius, (index) => {
        if (!touched.has(index)) {
          touched.set(index, this.labels[index]);
        }
        this.labels[index] = value;
      });
    }
    const indices = new Uint32Array(touched.size);
    const previous = new Uint8Array(touched.size);
    let at = 0;
    for (const [index, old] of touched) {
      indices[at] = index;
      previous[at] = old;
      at++;
    }
    this.undoStack.push({ indices, previous });
    this.dirty = true;
  }

  /** Revert the most recent stroke exactly; returns false when empty. */
  undo(): boolean {
    const entry = this.undoStack.pop();
    if (!entry) return false;
    for (let i = 0; i < entry.indices.length; i++) {
      this.labels[entry.indices[i]] = entry.previous[i];
    }
    this.dirty = true;
    return true;
  }

  /** Deterministic grayscale PNG of the current labels. */
  exportPng(): Uint8Array {
    return encodeGrayPng(this.labels, this.width, this.height);
  }

  markSaved(): void {
    this.dirty = false;
  }
}
