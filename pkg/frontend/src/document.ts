/**
 * Annotation document model, schema version 1.
 *
 * The export format matches the toolkit's canonical serialization byte
 * for byte on re-export: fixed key order, integer coordinates, region
 * points and reflectance-edge pixels sorted in raster order (y, then x),
 * and shading edges never stored (they are always derived server-side
 * from the Canny set and the regions).
 */

export type Pixel = [number, number];

export interface RegionData {
  id: number;
  polygons: Pixel[][];
  points: Pixel[];
}

export interface CannyParams {
  sigma: number;
  low: number;
  high: number;
}

export interface ImageRef {
  file: string;
  width: number;
  height: number;
  sha256: string;
}

export interface AnnotationDoc {
  schema_version: string;
  image: ImageRef;
  canny: CannyParams;
  regions: RegionData[];
  edges_r: Pixel[];
  annotator: string;
  notes: string;
}

export const SCHEMA_VERSION = "1";

export function pixelKey(p: Pixel): string {
  return `${p[0]},${p[1]}`;
}

export function rasterOrder(a: Pixel, b: Pixel): number {
  return a[1] - b[1] || a[0] - b[0];
}

export function sortedUniquePixels(pixels: Iterable<Pixel>): Pixel[] {
  const seen = new Map<string, Pixel>();
  for (const p of pixels) {
    const q: Pixel = [Math.trunc(p[0]), Math.trunc(p[1])];
    seen.set(pixelKey(q), q);
  }
  return [...seen.values()].sort(rasterOrder);
}

export function emptyDoc(image: ImageRef, canny: CannyParams, annotator = ""): AnnotationDoc {
  return {
    schema_version: SCHEMA_VERSION,
    image: { ...image },
    canny: { ...canny },
    regions: [],
    edges_r: [],
    annotator,
    notes: "",
  };
}

function normalizeRegion(region: RegionData): RegionData {
  return {
    id: Math.trunc(region.id),
    polygons: region.polygons.map((loop) =>
      loop.map((p): Pixel => [Math.trunc(p[0]), Math.trunc(p[1])])
    ),
    points: sortedUniquePixels(region.points),
  };
}

/** Canonical form: normalized regions and sorted edge pixels. */
export function normalizeDoc(doc: AnnotationDoc): AnnotationDoc {
  return {
    schema_version: doc.schema_version,
    image: {
      file: doc.image.file,
      width: Math.trunc(doc.image.width),
      height: Math.trunc(doc.image.height),
      sha256: doc.image.sha256,
    },
    canny: { sigma: doc.canny.sigma, low: doc.canny.low, high: doc.canny.high },
    regions: doc.regions.map(normalizeRegion),
    edges_r: sortedUniquePixels(doc.edges_r),
    annotator: doc.annotator,
    notes: doc.notes,
  };
}

/** Deterministic export; identical documents serialize identically. */
export function exportDoc(doc: AnnotationDoc): string {
  const d = normalizeDoc(doc);
  // key order is fixed by explicit object construction
  return JSON.stringify({
    schema_version: d.schema_version,
    image: { file: d.image.file, width: d.image.width, height: d.image.height, sha256: d.image.sha256 },
    canny: { sigma: d.canny.sigma, low: d.canny.low, high: d.canny.high },
    regions: d.regions.map((r) => ({ id: r.id, polygons: r.polygons, points: r.points })),
    edges_r: d.edges_r,
    annotator: d.annotator,
    notes: d.notes,
  });
}

export class DocumentParseError extends Error {}

function requireField<T>(obj: Record<string, unknown>, key: string): T {
  if (!(key in obj)) {
    throw new DocumentParseError(`missing field: ${key}`);
  }
  return obj[key] as T;
}

export function importDoc(text: string): AnnotationDoc {
  let raw: Record<string, unknown>;
  try {
    raw = JSON.parse(text);
  } catch (err) {
    throw new DocumentParseError(`malformed JSON: ${err}`);
  }
  const version = requireField<string>(raw, "schema_version");
  if (version !== SCHEMA_VERSION) {
    throw new DocumentParseError(`unsupported schema_version: ${version}`);
  }
  const image = requireField<Record<string, unknown>>(raw, "image");
  const canny = requireField<Record<string, unknown>>(raw, "canny");
  const doc: AnnotationDoc = {
    schema_version: version,
    image: {
      file: requireField<string>(image, "file"),
      width: requireField<number>(image, "width"),
      height: requireField<number>(image, "height"),
      sha256: requireField<string>(image, "sha256"),
    },
    canny: {
      sigma: requireField<number>(canny, "sigma"),
      low: requireField<number>(canny, "low"),
      high: requireField<number>(canny, "high"),
    },
    regions: requireField<RegionData[]>(raw, "regions"),
    edges_r: requireField<Pixel[]>(raw, "edges_r"),
    annotator: requireField<string>(raw, "annotator"),
    notes: requireField<string>(raw, "notes"),
  };
  return normalizeDoc(doc);
}

/** Pixels covered by a polygon under even-odd fill at integer centers.
 *  Preview only: the toolkit's rasterizer is the authority, this mirrors
 *  its half-open scanline rule so previews agree with the solve. */
export function rasterizePolygon(loop: Pixel[], width: number, height: number): Pixel[] {
  if (loop.length < 3) return [];
  const ys = loop.map((p) => p[1]);
  const y0 = Math.max(0, Math.ceil(Math.min(...ys)));
  const y1 = Math.min(height - 1, Math.floor(Math.max(...ys)));
  const out: Pixel[] = [];
  for (let y = y0; y <= y1; y++) {
    const crossings: number[] = [];
    for (let i = 0; i < loop.length; i++) {
      const [xa, ya] = loop[i];
      const [xb, yb] = loop[(i + 1) % loop.length];
      if (ya === yb) continue;
      if ((ya <= y && y < yb) || (yb <= y && y < ya)) {
        crossings.push(xa + ((y - ya) / (yb - ya)) * (xb - xa));
      }
    }
    crossings.sort((a, b) => a - b);
    for (let i = 0; i + 1 < crossings.length; i += 2) {
      const lo = Math.max(Math.ceil(crossings[i]), 0);
      const hi = Math.min(Math.ceil(crossings[i + 1]), width);
      for (let x = lo; x < hi; x++) out.push([x, y]);
    }
  }
  return out;
}

export function regionPixels(region: RegionData, width: number, height: number): Pixel[] {
  const pixels: Pixel[] = [...region.points];
  for (const loop of region.polygons) {
    pixels.push(...rasterizePolygon(loop, width, height));
  }
  return sortedUniquePixels(pixels);
}
