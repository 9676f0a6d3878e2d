"""Annotation data model: constant-reflectance regions and edge labels.

A document carries regions annotated by points or polygons plus the set of
reflectance-only edges (a subset of the Canny edges of the image). The
shading-only edge set is never stored: it is always derivable as the Canny
pixels inside the annotated regions, so documents stay consistent by
construction and merges cannot desynchronize it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, MergeConflictError, ParameterError, ParseError
from .imgcore import EdgeSet, Image, canny, save_ciif, to_luminance

SCHEMA_VERSION = "1"

DEFAULT_BRUSH_RADIUS = 2.0


def image_sha256(img: Image) -> str:
    """Content hash of a raster, independent of the container format."""
    return hashlib.sha256(save_ciif(img)).hexdigest()


def rasterize_polygon(loop, width: int, height: int) -> set:
    """Even-odd scanline fill of a closed vertex loop at pixel centers.

    Pixel (x, y) is inside when the horizontal ray from its center crosses
    an odd number of edges; crossings use the half-open rule so shared
    boundaries never double-fill.
    """
    pts = [(float(x), float(y)) for x, y in loop]
    if len(pts) < 3:
        return set()
    ys = [p[1] for p in pts]
    y0 = max(0, int(math.ceil(min(ys))))
    y1 = min(height - 1, int(math.floor(max(ys))))
    out = set()
    n = len(pts)
    for y in range(y0, y1 + 1):
        crossings = []
        for i in range(n):
            xa, ya = pts[i]
            xb, yb = pts[(i + 1) % n]
            if ya == yb:
                continue
            if (ya <= y < yb) or (yb <= y < ya):
                t = (y - ya) / (yb - ya)
                crossings.append(xa + t * (xb - xa))
        crossings.sort()
        for i in range(0, len(crossings) - 1, 2):
            lo = int(math.ceil(crossings[i]))
            hi = int(math.ceil(crossings[i + 1]))  # half-open on the right
            for x in range(max(lo, 0), min(hi, width)):
                out.add((x, y))
    return out


@dataclass(frozen=True)
class Region:
    """One constant-reflectance region: polygon loops and/or explicit pixels."""

    id: int
    polygons: tuple = ()
    points: tuple = ()

    def __post_init__(self):
        polys = tuple(tuple((int(x), int(y)) for x, y in loop) for loop in self.polygons)
        pts = tuple(sorted({(int(x), int(y)) for x, y in self.points}, key=lambda p: (p[1], p[0])))
        object.__setattr__(self, "polygons", polys)
        object.__setattr__(self, "points", pts)

    def rasterize(self, width: int, height: int) -> frozenset:
        px = set(self.points)
        for loop in self.polygons:
            px |= rasterize_polygon(loop, width, height)
        return frozenset(px)


@dataclass(frozen=True)
class RegionAnnotation:
    """All regions of one image plus their rasterized pixel sets."""

    width: int
    height: int
    regions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(
            self, "_pixel_sets", tuple(r.rasterize(self.width, self.height) for r in self.regions)
        )

    @property
    def pixel_sets(self) -> tuple:
        return self._pixel_sets

    def pixel_union(self) -> frozenset:
        out = set()
        for s in self._pixel_sets:
            out |= s
        return frozenset(out)

    def union_mask(self) -> np.ndarray:
        m = np.zeros((self.height, self.width), dtype=bool)
        for s in self._pixel_sets:
            for x, y in s:
                if 0 <= x < self.width and 0 <= y < self.height:
                    m[y, x] = True
        return m


@dataclass(frozen=True)
class EdgeAnnotation:
    """Reflectance-only edges plus the Canny parameters they were picked from.

    e_s is a derivation cache (Canny of the image intersected with the
    regions); None means "derive on demand".
    """

    e_r: EdgeSet
    canny_params: tuple  # (sigma, low, high)
    e_s: EdgeSet | None = field(default=None, compare=False)


@dataclass(frozen=True)
class AnnotationDoc:
    schema_version: str
    image_file: str
    width: int
    height: int
    sha256: str
    regions: RegionAnnotation
    edges: EdgeAnnotation
    annotator: str = ""
    notes: str = ""

    def shading_edges(self, img: Image | None = None) -> EdgeSet:
        """Cached e_s, or derive it from the image's Canny edges."""
        if self.edges.e_s is not None:
            return self.edges.e_s
        if img is None:
            raise ParameterError("shading edges not cached; an image is required to derive them")
        sigma, low, high = self.edges.canny_params
        edges = canny(to_luminance(img), sigma, low, high)
        return derive_shading_edges(edges, self.regions)


def empty_doc(image_file: str, width: int, height: int, sha256: str = "",
              canny_params=(1.4, 0.05, 0.15), annotator: str = "") -> AnnotationDoc:
    return AnnotationDoc(
        schema_version=SCHEMA_VERSION,
        image_file=image_file,
        width=width,
        height=height,
        sha256=sha256,
        regions=RegionAnnotation(width, height, ()),
        edges=EdgeAnnotation(EdgeSet(width, height), tuple(canny_params)),
        annotator=annotator,
    )


# ---------------------------------------------------------------------------
# operations

def derive_shading_edges(canny_edges: EdgeSet, regions: RegionAnnotation) -> EdgeSet:
    """Canny pixels inside the union of region pixel sets."""
    if (canny_edges.width, canny_edges.height) != (regions.width, regions.height):
        raise DimensionError("canny set and regions disagree on raster size")
    inside = regions.pixel_union()
    return EdgeSet(canny_edges.width, canny_edges.height, canny_edges.pixels & inside)


def _point_segment_dist2(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    l2 = dx * dx + dy * dy
    if l2 == 0:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / l2, 0.0, 1.0)
    cx, cy = ax + t * dx, ay + t * dy
    return (px - cx) ** 2 + (py - cy) ** 2


def rasterize_scribbles(strokes, canny_edges: EdgeSet) -> EdgeSet:
    """Canny pixels within each stroke's brush radius of its polyline.

    strokes: iterable of (points, radius) with points a list of (x, y).
    """
    if not canny_edges.pixels:
        return EdgeSet(canny_edges.width, canny_edges.height)
    coords = np.array(sorted(canny_edges.pixels), dtype=np.float64)
    px, py = coords[:, 0], coords[:, 1]
    hit = np.zeros(len(coords), dtype=bool)
    for pts, radius in strokes:
        if radius < 0.5:
            raise ParameterError(f"brush radius {radius} below 0.5 px")
        pts = [(float(x), float(y)) for x, y in pts]
        if not pts:
            continue
        segs = list(zip(pts, pts[1:])) or [(pts[0], pts[0])]
        r2 = radius * radius
        for (ax, ay), (bx, by) in segs:
            hit |= _point_segment_dist2(px, py, ax, ay, bx, by) <= r2
    selected = frozenset((int(x), int(y)) for x, y in coords[hit])
    return EdgeSet(canny_edges.width, canny_edges.height, selected)


def merge_annotations(a: AnnotationDoc, b: AnnotationDoc) -> AnnotationDoc:
    """Combine two annotators' documents for the same image.

    Reflectance edges merge by union. Regions from both documents are kept
    with fresh ids; pixels claimed by regions from both annotators are
    dropped from both sides, since conflicting constant-reflectance claims
    cannot be arbitrated automatically. Regions that lose pixels are
    re-expressed as explicit point lists.
    """
    if (a.image_file, a.width, a.height, a.sha256) != (b.image_file, b.width, b.height, b.sha256):
        raise MergeConflictError("documents reference different images")
    if a.edges.canny_params != b.edges.canny_params:
        raise MergeConflictError("documents used different Canny parameters")

    union_a = a.regions.pixel_union()
    union_b = b.regions.pixel_union()
    conflict = union_a & union_b

    merged_regions = []
    next_id = 1
    for doc in (a, b):
        for region, pixels in zip(doc.regions.regions, doc.regions.pixel_sets):
            kept = pixels - conflict
            if not kept:
                continue
            if kept == pixels:
                merged_regions.append(replace(region, id=next_id))
            else:
                merged_regions.append(Region(id=next_id, polygons=(), points=tuple(kept)))
            next_id += 1
    regions = RegionAnnotation(a.width, a.height, tuple(merged_regions))

    e_r = EdgeSet(a.width, a.height, a.edges.e_r.pixels | b.edges.e_r.pixels)
    e_s = None
    if a.edges.e_s is not None and b.edges.e_s is not None:
        pool = a.edges.e_s.pixels | b.edges.e_s.pixels
        e_s = EdgeSet(a.width, a.height, pool & regions.pixel_union())

    return AnnotationDoc(
        schema_version=SCHEMA_VERSION,
        image_file=a.image_file,
        width=a.width,
        height=a.height,
        sha256=a.sha256,
        regions=regions,
        edges=EdgeAnnotation(e_r, a.edges.canny_params, e_s),
        annotator="+".join(x for x in (a.annotator, b.annotator) if x),
        notes="\n".join(x for x in (a.notes, b.notes) if x),
    )


def validate(doc: AnnotationDoc, img: Image) -> list:
    """Collect invariant violations; an empty list means the doc is clean."""
    violations = []
    if (doc.width, doc.height) != (img.width, img.height):
        violations.append(
            f"dimension-mismatch: doc {doc.width}x{doc.height} vs image {img.width}x{img.height}"
        )
        return violations
    if doc.sha256:
        actual = image_sha256(img)
        if actual != doc.sha256:
            violations.append(f"hash-mismatch: doc {doc.sha256[:12]} vs image {actual[:12]}")

    seen = set()
    for region in doc.regions.regions:
        if region.id in seen:
            violations.append(f"duplicate-region-id: {region.id}")
        seen.add(region.id)

    claimed = {}
    for region, pixels in zip(doc.regions.regions, doc.regions.pixel_sets):
        for x, y in pixels:
            if not (0 <= x < doc.width and 0 <= y < doc.height):
                violations.append(f"region-pixel-out-of-bounds: region {region.id} pixel ({x}, {y})")
            elif (x, y) in claimed and claimed[(x, y)] != region.id:
                violations.append(
                    f"region-overlap: pixel ({x}, {y}) in regions {claimed[(x, y)]} and {region.id}"
                )
            else:
                claimed[(x, y)] = region.id

    sigma, low, high = doc.edges.canny_params
    canny_set = canny(to_luminance(img), sigma, low, high)
    for x, y in sorted(doc.edges.e_r.pixels - canny_set.pixels):
        violations.append(f"edge-not-canny: e_r pixel ({x}, {y})")
    if doc.edges.e_s is not None:
        for x, y in sorted(doc.edges.e_s.pixels - canny_set.pixels):
            violations.append(f"edge-not-canny: e_s pixel ({x}, {y})")
        for x, y in sorted(doc.edges.e_s.pixels & doc.edges.e_r.pixels):
            violations.append(f"edge-label-conflict: pixel ({x}, {y}) in both e_r and e_s")
        region_union = doc.regions.pixel_union()
        for x, y in sorted(doc.edges.e_s.pixels - region_union):
            violations.append(f"shading-edge-outside-regions: pixel ({x}, {y})")

    region_union = doc.regions.pixel_union()
    for x, y in sorted(doc.edges.e_r.pixels & region_union):
        violations.append(f"reflectance-edge-in-region: pixel ({x}, {y})")
    return violations


# ---------------------------------------------------------------------------
# serialization (schema version 1, fixed key order, deterministic bytes)

def _doc_payload(doc: AnnotationDoc) -> dict:
    return {
        "schema_version": doc.schema_version,
        "image": {
            "file": doc.image_file,
            "width": doc.width,
            "height": doc.height,
            "sha256": doc.sha256,
        },
        "canny": {
            "sigma": doc.edges.canny_params[0],
            "low": doc.edges.canny_params[1],
            "high": doc.edges.canny_params[2],
        },
        "regions": [
            {
                "id": r.id,
                "polygons": [[[x, y] for x, y in loop] for loop in r.polygons],
                "points": [[x, y] for x, y in r.points],
            }
            for r in doc.regions.regions
        ],
        "edges_r": [[x, y] for x, y in sorted(doc.edges.e_r.pixels, key=lambda p: (p[1], p[0]))],
        "annotator": doc.annotator,
        "notes": doc.notes,
    }


def serialize(doc: AnnotationDoc) -> bytes:
    return json.dumps(_doc_payload(doc), separators=(",", ":")).encode("utf-8")


def parse(data: bytes) -> AnnotationDoc:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed annotation JSON: {exc}") from exc
    try:
        version = obj["schema_version"]
        if version != SCHEMA_VERSION:
            raise ParseError(f"unknown schema_version {version!r}")
        image = obj["image"]
        width, height = int(image["width"]), int(image["height"])
        regions = RegionAnnotation(
            width,
            height,
            tuple(
                Region(
                    id=int(r["id"]),
                    polygons=tuple(tuple((int(x), int(y)) for x, y in loop) for loop in r["polygons"]),
                    points=tuple((int(x), int(y)) for x, y in r["points"]),
                )
                for r in obj["regions"]
            ),
        )
        e_r = EdgeSet(width, height, frozenset((int(x), int(y)) for x, y in obj["edges_r"]))
        cp = obj["canny"]
        edges = EdgeAnnotation(e_r, (float(cp["sigma"]), float(cp["low"]), float(cp["high"])))
        return AnnotationDoc(
            schema_version=version,
            image_file=str(image["file"]),
            width=width,
            height=height,
            sha256=str(image["sha256"]),
            regions=regions,
            edges=edges,
            annotator=str(obj["annotator"]),
            notes=str(obj["notes"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"annotation document missing or malformed field: {exc}") from exc
