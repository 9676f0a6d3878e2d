/**
 * Editing session state: the loaded image, the Canny overlay, in-progress
 * reflectance-edge scribbles, region shapes, undo/redo, and the last solve
 * previews.
 *
 * Scribbles never create edge pixels, they select from the Canny set; the
 * shading edges are display-only, derived as Canny pixels inside region
 * previews. All numeric results (the real rasterization, the solve, the
 * metrics) come from the service.
 */

import {
  AnnotationDoc,
  CannyParams,
  ImageRef,
  Pixel,
  RegionData,
  SCHEMA_VERSION,
  emptyDoc,
  exportDoc,
  importDoc,
  pixelKey,
  regionPixels,
  sortedUniquePixels,
} from "./document.js";

export interface Stroke {
  points: Pixel[];
  radius: number;
}

export interface SolvePreview {
  reflectancePng: string; // base64
  shadingPng: string;
  residual: number;
  elapsedMs: number;
}

interface Snapshot {
  edgesR: Pixel[];
  regions: RegionData[];
  annotator: string;
  notes: string;
}

const UNDO_DEPTH = 50;

function distToSegmentSq(p: Pixel, a: Pixel, b: Pixel): number {
  const dx = b[0] - a[0];
  const dy = b[1] - a[1];
  const l2 = dx * dx + dy * dy;
  let t = 0;
  if (l2 > 0) {
    t = Math.max(0, Math.min(1, ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2));
  }
  const cx = a[0] + t * dx;
  const cy = a[1] + t * dy;
  return (p[0] - cx) ** 2 + (p[1] - cy) ** 2;
}

export class UiSession {
  image: ImageRef | null = null;
  imagePng: string | null = null; // base64 payload sent to the service
  cannyParams: CannyParams = { sigma: 1.4, low: 0.05, high: 0.15 };
  cannyPixels: Pixel[] = [];
  lastSolve: SolvePreview | null = null;
  dirty = false;

  private edgesR = new Map<string, Pixel>();
  private regions: RegionData[] = [];
  private annotator = "";
  private notes = "";
  private undoStack: Snapshot[] = [];
  private redoStack: Snapshot[] = [];

  loadImage(image: ImageRef, pngBase64: string): void {
    this.image = { ...image };
    this.imagePng = pngBase64;
    this.cannyPixels = [];
    this.edgesR.clear();
    this.regions = [];
    this.undoStack = [];
    this.redoStack = [];
    this.lastSolve = null;
    this.dirty = false;
  }

  setCanny(params: CannyParams, pixels: Pixel[]): void {
    this.cannyParams = { ...params };
    this.cannyPixels = sortedUniquePixels(pixels);
    // selections from an older Canny set are no longer valid
    this.edgesR.clear();
    this.undoStack = [];
    this.redoStack = [];
  }

  get reflectanceEdges(): Pixel[] {
    return sortedUniquePixels(this.edgesR.values());
  }

  get regionList(): RegionData[] {
    return this.regions.map((r) => ({
      id: r.id,
      polygons: r.polygons.map((loop) => loop.map((p): Pixel => [p[0], p[1]])),
      points: [...r.points],
    }));
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /** Canny pixels inside region previews; display-only, never editable. */
  get shadingEdgesPreview(): Pixel[] {
    if (!this.image) return [];
    const inside = new Set<string>();
    for (const region of this.regions) {
      for (const p of regionPixels(region, this.image.width, this.image.height)) {
        inside.add(pixelKey(p));
      }
    }
    return this.cannyPixels.filter((p) => inside.has(pixelKey(p)));
  }

  private snapshot(): Snapshot {
    return {
      edgesR: this.reflectanceEdges,
      regions: this.regionList,
      annotator: this.annotator,
      notes: this.notes,
    };
  }

  private restore(snap: Snapshot): void {
    this.edgesR = new Map(snap.edgesR.map((p) => [pixelKey(p), p]));
    this.regions = snap.regions.map((r) => ({
      id: r.id,
      polygons: r.polygons.map((loop) => loop.map((p): Pixel => [p[0], p[1]])),
      points: [...r.points],
    }));
    this.annotator = snap.annotator;
    this.notes = snap.notes;
  }

  private beginMutation(): void {
    this.undoStack.push(this.snapshot());
    if (this.undoStack.length > UNDO_DEPTH) {
      this.undoStack.shift();
    }
    this.redoStack = [];
    this.dirty = true;
  }

  /** Select Canny pixels within the brush radius of the stroke polyline. */
  scribble(stroke: Stroke): number {
    if (stroke.radius < 0.5 || stroke.points.length === 0) return 0;
    this.beginMutation();
    const segs: Array<[Pixel, Pixel]> = [];
    if (stroke.points.length === 1) {
      segs.push([stroke.points[0], stroke.points[0]]);
    } else {
      for (let i = 0; i + 1 < stroke.points.length; i++) {
        segs.push([stroke.points[i], stroke.points[i + 1]]);
      }
    }
    const r2 = stroke.radius * stroke.radius;
    let added = 0;
    for (const p of this.cannyPixels) {
      const key = pixelKey(p);
      if (this.edgesR.has(key)) continue;
      for (const [a, b] of segs) {
        if (distToSegmentSq(p, a, b) <= r2) {
          this.edgesR.set(key, p);
          added++;
          break;
        }
      }
    }
    return added;
  }

  /** Remove selected edge pixels within the brush radius (eraser). */
  eraseScribble(stroke: Stroke): number {
    if (stroke.radius < 0.5 || stroke.points.length === 0) return 0;
    this.beginMutation();
    const r2 = stroke.radius * stroke.radius;
    let removed = 0;
    for (const [key, p] of [...this.edgesR]) {
      for (let i = 0; i < stroke.points.length; i++) {
        const a = stroke.points[i];
        const b = stroke.points[Math.min(i + 1, stroke.points.length - 1)];
        if (distToSegmentSq(p, a, b) <= r2) {
          this.edgesR.delete(key);
          removed++;
          break;
        }
      }
    }
    return removed;
  }

  private nextRegionId(): number {
    return this.regions.reduce((m, r) => Math.max(m, r.id), 0) + 1;
  }

  addRegionPolygon(loop: Pixel[]): number {
    this.beginMutation();
    const id = this.nextRegionId();
    this.regions.push({ id, polygons: [loop.map((p): Pixel => [p[0], p[1]])], points: [] });
    return id;
  }

  addRegionPoints(points: Pixel[]): number {
    this.beginMutation();
    const id = this.nextRegionId();
    this.regions.push({ id, polygons: [], points: sortedUniquePixels(points) });
    return id;
  }

  removeRegion(id: number): boolean {
    const idx = this.regions.findIndex((r) => r.id === id);
    if (idx < 0) return false;
    this.beginMutation();
    this.regions.splice(idx, 1);
    return true;
  }

  setAnnotator(name: string): void {
    this.beginMutation();
    this.annotator = name;
  }

  setNotes(text: string): void {
    this.beginMutation();
    this.notes = text;
  }

  undo(): boolean {
    const snap = this.undoStack.pop();
    if (!snap) return false;
    this.redoStack.push(this.snapshot());
    this.restore(snap);
    this.dirty = true;
    return true;
  }

  redo(): boolean {
    const snap = this.redoStack.pop();
    if (!snap) return false;
    this.undoStack.push(this.snapshot());
    this.restore(snap);
    this.dirty = true;
    return true;
  }

  recordSolve(preview: SolvePreview): void {
    this.lastSolve = preview;
  }

  toDoc(): AnnotationDoc {
    if (!this.image) {
      throw new Error("no image loaded");
    }
    const doc = emptyDoc(this.image, this.cannyParams, this.annotator);
    doc.regions = this.regionList;
    doc.edges_r = this.reflectanceEdges;
    doc.notes = this.notes;
    return doc;
  }

  exportJson(): string {
    const text = exportDoc(this.toDoc());
    this.dirty = false;
    return text;
  }

  importJson(text: string): void {
    const doc = importDoc(text);
    if (this.image && (doc.image.width !== this.image.width || doc.image.height !== this.image.height)) {
      throw new Error(
        `document is for a ${doc.image.width}x${doc.image.height} image, ` +
          `session has ${this.image.width}x${this.image.height}`
      );
    }
    if (doc.schema_version !== SCHEMA_VERSION) {
      throw new Error(`unsupported schema version ${doc.schema_version}`);
    }
    this.beginMutation();
    this.cannyParams = { ...doc.canny };
    this.edgesR = new Map(doc.edges_r.map((p) => [pixelKey(p), p]));
    this.regions = doc.regions.map((r) => ({
      id: r.id,
      polygons: r.polygons.map((loop) => loop.map((p): Pixel => [p[0], p[1]])),
      points: [...r.points],
    }));
    this.annotator = doc.annotator;
    this.notes = doc.notes;
  }
}
