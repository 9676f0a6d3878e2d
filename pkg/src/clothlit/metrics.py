"""Edge-aware evaluation metrics for intrinsic decompositions.

Region scores measure how flat the predicted reflectance is inside
annotated constant-reflectance regions and how tightly the predicted
shading tracks intensity there. Edge scores check, per labeled edge pixel,
whether each predicted component changes where it should and stays put
where it should not, with the two directions combined by a weighted
harmonic mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .annotation import AnnotationDoc
from .errors import (
    DegenerateRegionError,
    DimensionError,
    ParameterError,
    UndefinedAccuracyError,
)
from .imgcore import (
    EdgeSet,
    Image,
    gradient,
    gradient_magnitude,
    mean_normalize,
    support_mask,
    to_luminance,
)


@dataclass(frozen=True)
class MetricConfig:
    tau: float = 0.05        # gradient-magnitude threshold on mean-normalized rasters
    w1: float = 3.0          # weight of the stay-put accuracy in each F score
    w2: float = 1.0          # weight of the do-change accuracy
    deadband: float = 0.05   # relative shading tolerance

    def __post_init__(self):
        if self.tau <= 0 or self.w1 <= 0 or self.w2 <= 0:
            raise ParameterError("tau, w1 and w2 must be positive")
        if not (0 <= self.deadband < 1):
            raise ParameterError("deadband must lie in [0, 1)")


@dataclass(frozen=True)
class MetricReport:
    acc_r_es: float
    acc_r_er: float
    acc_s_er: float
    acc_s_es: float
    f_r: float
    f_s: float
    region_error_r: float
    region_error_s: float
    counts: dict = field(compare=False)
    config: MetricConfig = field(default_factory=MetricConfig)

    def to_dict(self) -> dict:
        return {
            "acc_r_es": self.acc_r_es,
            "acc_r_er": self.acc_r_er,
            "acc_s_er": self.acc_s_er,
            "acc_s_es": self.acc_s_es,
            "f_r": self.f_r,
            "f_s": self.f_s,
            "region_error_r": self.region_error_r,
            "region_error_s": self.region_error_s,
            "counts": dict(self.counts),
            "config": {
                "tau": self.config.tau,
                "w1": self.config.w1,
                "w2": self.config.w2,
                "deadband": self.config.deadband,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


TABLE_COLUMNS = (
    ("acc_r_es", "Acc_R(E_S)"),
    ("acc_r_er", "Acc_R(E_R)"),
    ("acc_s_er", "Acc_S(E_R)"),
    ("acc_s_es", "Acc_S(E_S)"),
    ("f_r", "F_R"),
    ("f_s", "F_S"),
    ("region_error_r", "RegErr_R"),
    ("region_error_s", "RegErr_S"),
)


def format_table(rows: list, labels: list | None = None) -> str:
    """Fixed-width table of reports in the standard column order."""
    labels = labels or [str(i) for i in range(len(rows))]
    head = "{:<16}".format("image") + "".join("{:>12}".format(h) for _, h in TABLE_COLUMNS)
    lines = [head]
    for label, rep in zip(labels, rows):
        d = rep.to_dict()
        lines.append(
            "{:<16}".format(label[:16])
            + "".join("{:>12.4f}".format(d[k]) for k, _ in TABLE_COLUMNS)
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# region metrics

def region_error_reflectance(r_hat: Image, regions) -> float:
    """Mean over regions of the variance of region-normalized reflectance.

    Reflectance is reduced to luminance first so a region of constant color
    scores exactly zero; each region is scaled to mean one before the
    squared deviation is averaged, which removes the global scale
    ambiguity of the decomposition.
    """
    pixel_sets = regions.pixel_sets
    if not pixel_sets:
        raise DegenerateRegionError("no regions to score")
    lum = to_luminance(r_hat).data[:, :, 0]
    total = 0.0
    for region, pixels in zip(regions.regions, pixel_sets):
        if not pixels:
            raise DegenerateRegionError(f"region {region.id} has no pixels")
        xs = np.array([p[0] for p in pixels])
        ys = np.array([p[1] for p in pixels])
        vals = lum[ys, xs]
        mean = vals.mean()
        if mean <= 0:
            raise DegenerateRegionError(f"region {region.id} has non-positive mean")
        total += float(((vals / mean - 1.0) ** 2).mean())
    return total / len(pixel_sets)


def si_mse(x_hat: Image, x: Image, mask) -> float:
    """Scale-invariant MSE over the masked pixels.

    The scale is the closed-form least-squares fit of x_hat to x; a
    prediction that is identically zero on the mask gets scale 0.
    """
    if x_hat.data.shape != x.data.shape:
        raise DimensionError("si_mse inputs must share shape")
    m = support_mask(mask, x.width, x.height)
    if not m.any():
        raise DegenerateRegionError("empty si_mse mask")
    a = x_hat.data[m].ravel()
    b = x.data[m].ravel()
    denom = float(a @ a)
    alpha = float(a @ b) / denom if denom > 0 else 0.0
    return float(((alpha * a - b) ** 2).mean())


def region_error_shading(s_hat: Image, image: Image, regions, config: MetricConfig) -> float:
    """Relative shading error over regions with a proportional deadband.

    Inside each constant-reflectance region the image luminance is shading
    up to one unknown factor, which the per-region least-squares scale
    absorbs. Residuals within the deadband fraction of the local reference
    contribute nothing; the total is normalized by the error of the
    all-zero prediction.
    """
    pixel_sets = regions.pixel_sets
    if not pixel_sets:
        raise DegenerateRegionError("no regions to score")
    s_pred = to_luminance(s_hat).data[:, :, 0]
    ref = to_luminance(image).data[:, :, 0]
    num = 0.0
    den = 0.0
    for region, pixels in zip(regions.regions, pixel_sets):
        if not pixels:
            raise DegenerateRegionError(f"region {region.id} has no pixels")
        xs = np.array([p[0] for p in pixels])
        ys = np.array([p[1] for p in pixels])
        a = s_pred[ys, xs]
        b = ref[ys, xs]
        denom = float(a @ a)
        alpha = float(a @ b) / denom if denom > 0 else 0.0
        resid = alpha * a - b
        resid = np.where(np.abs(resid) <= config.deadband * b, 0.0, resid)
        num += float((resid ** 2).mean())
        den += float((b ** 2).mean())
    if den <= 0:
        raise DegenerateRegionError("reference shading is zero over all regions")
    return num / den


# ---------------------------------------------------------------------------
# edge metrics

def _edge_values(mag: np.ndarray, edge_set: EdgeSet) -> np.ndarray:
    xs = np.array([p[0] for p in sorted(edge_set.pixels)])
    ys = np.array([p[1] for p in sorted(edge_set.pixels)])
    return mag[ys, xs]


def edge_accuracies(r_hat: Image, s_hat: Image, edges, eval_mask, config: MetricConfig):
    """The four edge accuracies (acc_r_es, acc_r_er, acc_s_er, acc_s_es).

    Both predictions are mean-normalized over the evaluation mask; a pixel
    "changes" when its pooled gradient magnitude exceeds tau strictly, and
    "stays put" when it is strictly below, so a value exactly at tau fails
    both readings.
    """
    e_r, e_s = edges.e_r, edges.e_s
    if e_s is None:
        raise ParameterError("shading edges not derived")
    if len(e_r) == 0 or len(e_s) == 0:
        raise UndefinedAccuracyError(
            f"edge accuracies undefined: |e_r|={len(e_r)}, |e_s|={len(e_s)}"
        )
    r_mag = gradient_magnitude(gradient(mean_normalize(r_hat, eval_mask))).data[:, :, 0]
    s_mag = gradient_magnitude(gradient(mean_normalize(s_hat, eval_mask))).data[:, :, 0]
    tau = config.tau

    r_at_es = _edge_values(r_mag, e_s)
    r_at_er = _edge_values(r_mag, e_r)
    s_at_er = _edge_values(s_mag, e_r)
    s_at_es = _edge_values(s_mag, e_s)

    correct = {
        "correct_r_es": int((r_at_es < tau).sum()),
        "correct_r_er": int((r_at_er > tau).sum()),
        "correct_s_er": int((s_at_er < tau).sum()),
        "correct_s_es": int((s_at_es > tau).sum()),
    }
    accs = (
        correct["correct_r_es"] / len(e_s),
        correct["correct_r_er"] / len(e_r),
        correct["correct_s_er"] / len(e_r),
        correct["correct_s_es"] / len(e_s),
    )
    return accs, correct


def f_scores(accs, config: MetricConfig):
    """Weighted harmonic means of the paired accuracies; zero maps to zero."""
    acc_r_es, acc_r_er, acc_s_er, acc_s_es = accs
    for a in accs:
        if not (0 <= a <= 1):
            raise ParameterError(f"accuracy {a} outside [0, 1]")

    def harm(stay, change):
        if stay == 0 or change == 0:
            return 0.0
        return (config.w1 + config.w2) / (config.w1 / stay + config.w2 / change)

    return harm(acc_r_es, acc_r_er), harm(acc_s_er, acc_s_es)


def evaluation_mask(doc: AnnotationDoc, e_s: EdgeSet) -> np.ndarray:
    """Region pixels plus both edge sets dilated by one pixel.

    This is the normalization support for the edge metrics: it covers
    every scored pixel and the neighbors their forward differences touch.
    """
    m = doc.regions.union_mask()
    edge_mask = doc.edges.e_r.mask() | e_s.mask()
    m |= ndimage.binary_dilation(edge_mask, structure=np.ones((3, 3), dtype=bool))
    return m


def evaluate(r_hat: Image, s_hat: Image, image: Image, doc: AnnotationDoc,
             config: MetricConfig = MetricConfig()) -> MetricReport:
    """Full per-image report combining region and edge metrics."""
    for im in (r_hat, s_hat):
        if (im.width, im.height) != (image.width, image.height):
            raise DimensionError("prediction raster size differs from image")
    if (doc.width, doc.height) != (image.width, image.height):
        raise DimensionError("annotation raster size differs from image")

    e_s = doc.shading_edges(image)
    mask = evaluation_mask(doc, e_s)
    edges = replace(doc.edges, e_s=e_s)

    accs, correct = edge_accuracies(r_hat, s_hat, edges, mask, config)
    f_r, f_s = f_scores(accs, config)
    err_r = region_error_reflectance(r_hat, doc.regions)
    err_s = region_error_shading(s_hat, image, doc.regions, config)

    counts = {
        "n_er": len(doc.edges.e_r),
        "n_es": len(e_s),
        **correct,
        "n_regions": len(doc.regions.regions),
        "region_pixels": sum(len(p) for p in doc.regions.pixel_sets),
        "n_images": 1,
    }
    return MetricReport(
        acc_r_es=accs[0], acc_r_er=accs[1], acc_s_er=accs[2], acc_s_es=accs[3],
        f_r=f_r, f_s=f_s,
        region_error_r=err_r, region_error_s=err_s,
        counts=counts, config=config,
    )


def aggregate(reports: list) -> MetricReport:
    """Dataset-level report: accuracies pooled by pixel counts, region
    errors averaged per image, F recomputed from the pooled accuracies."""
    if not reports:
        raise ParameterError("cannot aggregate an empty report list")
    config = reports[0].config
    for rep in reports[1:]:
        if rep.config != config:
            raise ParameterError("cannot aggregate reports with different configs")

    keys = ("n_er", "n_es", "correct_r_es", "correct_r_er", "correct_s_er",
            "correct_s_es", "n_regions", "region_pixels", "n_images")
    totals = {k: sum(r.counts[k] for r in reports) for k in keys}
    accs = (
        totals["correct_r_es"] / totals["n_es"],
        totals["correct_r_er"] / totals["n_er"],
        totals["correct_s_er"] / totals["n_er"],
        totals["correct_s_es"] / totals["n_es"],
    )
    f_r, f_s = f_scores(accs, config)
    n = len(reports)
    return MetricReport(
        acc_r_es=accs[0], acc_r_er=accs[1], acc_s_er=accs[2], acc_s_es=accs[3],
        f_r=f_r, f_s=f_s,
        region_error_r=sum(r.region_error_r for r in reports) / n,
        region_error_s=sum(r.region_error_s for r in reports) / n,
        counts=totals, config=config,
    )
