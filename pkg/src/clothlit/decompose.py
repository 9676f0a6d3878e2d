"""Decomposition solvers and the shading realism discriminator.

Three solver families share one gauge convention (shading is grayscale,
chroma lives in reflectance, log-domain means are pinned):

* threshold attribution: log-luminance gradients above a threshold go to
  reflectance, the rest to shading, followed by a Poisson reconstruction;
* annotation-prior attribution: labeled reflectance-edge pixels force
  their gradients into reflectance, labeled shading edges and region
  interiors force shading, everything else falls back to the threshold;
* energy minimization: first-order descent with momentum and backtracking
  on reconstruction + adversarial realism + gradient exclusivity +
  a small shading smoothness term.

The discriminator is a logistic model over fixed scale-invariant features
(soft-binned histogram of shading gradient magnitudes plus moments), so
its score and input gradient are cheap and deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .annotation import AnnotationDoc, validate
from .errors import (
    AnnotationValidationError,
    ConvergenceError,
    DegenerateRegionError,
    DimensionError,
    DivergenceError,
    ParameterError,
)
from .imgcore import (
    EPS_LOG,
    GradientField,
    Image,
    fdx,
    fdx_adj,
    fdy,
    fdy_adj,
    hadamard,
    to_luminance,
)
from .losses import LossWeights, adversarial_loss, grad_constraint_loss, reconstruction_loss

FEATURE_BINS = 16
FEATURE_RANGE = math.log(2.0)  # histogram spans log1p gradient magnitudes in [0, ln 2]
N_FEATURES = FEATURE_BINS + 2  # histogram + mean + variance of normalized shading


@dataclass(frozen=True)
class Decomposition:
    reflectance: Image
    shading: Image
    residual: float

    def __post_init__(self):
        if self.shading.channels != 1:
            raise DimensionError("shading must be single-channel")
        if (self.reflectance.width, self.reflectance.height) != (
            self.shading.width,
            self.shading.height,
        ):
            raise DimensionError("reflectance/shading size mismatch")
        self.reflectance.require_intensity()
        self.shading.require_intensity()


@dataclass(frozen=True)
class SolverConfig:
    retinex_threshold: float = 0.15  # on log-luminance forward differences
    cg_tol: float = 1e-8
    cg_max_iter: int = 20000
    step_size: float = 0.01   # largest per-pixel movement per accepted step
    momentum: float = 0.9
    iterations: int = 150
    weights: LossWeights = field(default_factory=LossWeights)
    smoothness: float = 1e-3         # mu, gauge-fixing penalty on shading gradients
    init: str = "blur"               # "blur" or "flat" energy solver start
    init_blur_sigma: float = 1.0

    def __post_init__(self):
        if self.retinex_threshold <= 0:
            raise ParameterError("retinex_threshold must be positive")
        if self.cg_tol <= 0 or self.cg_max_iter < 1:
            raise ParameterError("bad conjugate-gradient settings")
        if self.init not in ("blur", "flat"):
            raise ParameterError(f"unknown init mode {self.init!r}")


# ---------------------------------------------------------------------------
# gradient-domain reconstruction

def poisson_solve(target: GradientField, mean_anchor: float,
                  tol: float = 1e-8, max_iter: int = 20000) -> Image:
    """Least-squares field whose forward differences best match the target.

    The normal equations are rank-deficient by the constant mode, so the
    operator adds the field's mean back as a screen; the right-hand side
    always sums to zero, which pins the raw solution at mean zero, and the
    anchor is added afterwards. Conjugate gradient runs to a relative
    residual of tol.
    """
    tx, ty = target.gx.data, target.gy.data
    if tx.shape[2] != 1:
        raise DimensionError("poisson_solve expects a single-channel target")
    b = fdx_adj(tx) + fdy_adj(ty)

    def apply(f):
        return fdx_adj(fdx(f)) + fdy_adj(fdy(f)) + f.mean()

    bnorm = float(np.sqrt((b * b).sum()))
    if bnorm == 0.0:
        return Image(np.full_like(b, mean_anchor))

    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float((r * r).sum())
    for _ in range(max_iter):
        ap = apply(p)
        alpha = rs / float((p * ap).sum())
        x += alpha * p
        r -= alpha * ap
        rs_new = float((r * r).sum())
        if math.sqrt(rs_new) <= tol * bnorm:
            return Image(x + mean_anchor)
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise ConvergenceError(
        f"conjugate gradient stalled at relative residual {math.sqrt(rs) / bnorm:.3e}",
        residual=math.sqrt(rs) / bnorm,
    )


def _shift_left(mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(mask)
    out[:, :-1] = mask[:, 1:]
    return out


def _shift_up(mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(mask)
    out[:-1, :] = mask[1:, :]
    return out


def _attribution_solve(i: Image, er_mask: np.ndarray, es_mask: np.ndarray,
                       region_mask: np.ndarray, config: SolverConfig) -> Decomposition:
    """Shared core: classify log-luminance gradients, reconstruct, split.

    Priority per difference element (it spans two pixels): reflectance if
    either endpoint is a labeled reflectance edge; else shading if either
    endpoint is a labeled shading edge or both endpoints lie inside
    annotated regions; else the threshold fallback decides.
    """
    lum = np.maximum(to_luminance(i).data, EPS_LOG)
    logl = np.log(lum)
    gx, gy = fdx(logl), fdy(logl)

    def classify(g, er_b, es_b, reg_b):
        er_a = er_mask[:, :, None]
        es_a = es_mask[:, :, None]
        reg_a = region_mask[:, :, None]
        to_r = er_a | er_b
        to_s = ~to_r & (es_a | es_b | (reg_a & reg_b))
        fallback = ~to_r & ~to_s
        return to_r | (fallback & (np.abs(g) > config.retinex_threshold))

    keep_x = classify(gx, _shift_left(er_mask)[:, :, None], _shift_left(es_mask)[:, :, None],
                      _shift_left(region_mask)[:, :, None])
    keep_y = classify(gy, _shift_up(er_mask)[:, :, None], _shift_up(es_mask)[:, :, None],
                      _shift_up(region_mask)[:, :, None])

    target = GradientField(Image(gx * keep_x), Image(gy * keep_y))
    log_r = poisson_solve(target, float(logl.mean()), config.cg_tol, config.cg_max_iter)
    r_lum = np.exp(log_r.data)
    shading = lum / r_lum
    reflectance = i.data / shading  # exact per-channel split: i = reflectance * shading
    recon = reflectance * shading
    residual = float(np.abs(i.data - recon).max())
    return Decomposition(Image(reflectance), Image(shading), residual)


def retinex_decompose(i: Image, config: SolverConfig = SolverConfig()) -> Decomposition:
    """Threshold-based attribution with Poisson reconstruction."""
    empty = np.zeros((i.height, i.width), dtype=bool)
    return _attribution_solve(i, empty, empty, empty, config)


def edge_prior_decompose(i: Image, doc: AnnotationDoc,
                         config: SolverConfig = SolverConfig()) -> Decomposition:
    """Attribution guided by an annotation document.

    With an empty document this reduces bit-for-bit to retinex_decompose.
    """
    violations = validate(doc, i)
    if violations:
        raise AnnotationValidationError(violations)
    e_s = doc.shading_edges(i)
    return _attribution_solve(
        i,
        doc.edges.e_r.mask(),
        e_s.mask(),
        doc.regions.union_mask(),
        config,
    )


# ---------------------------------------------------------------------------
# shading discriminator

def _featurize_with_aux(s: np.ndarray):
    """Feature vector plus the intermediates needed for the input gradient."""
    if s.ndim == 2:
        s = s[:, :, None]
    if s.ndim != 3 or s.shape[2] != 1:
        raise DimensionError("discriminator features expect a single-channel raster")
    n = s.shape[0] * s.shape[1]
    m = float(s.mean())
    if m <= 0:
        raise DegenerateRegionError("cannot normalize a non-positive shading")
    s_norm = s / m
    gx, gy = fdx(s_norm), fdy(s_norm)
    gm = np.sqrt(gx * gx + gy * gy)
    g = np.log1p(gm)

    delta = FEATURE_RANGE / FEATURE_BINS
    centers = (np.arange(FEATURE_BINS) + 0.5) * delta
    gc = np.clip(g, centers[0], centers[-1])
    diff = (gc[:, :, :, None] - centers) / delta  # (h, w, 1, bins)
    tri = np.maximum(0.0, 1.0 - np.abs(diff))
    hist = tri.sum(axis=(0, 1, 2)) / n

    var = float(((s_norm - 1.0) ** 2).mean())
    features = np.concatenate([hist, [1.0, var]])
    aux = dict(s=s, s_norm=s_norm, gx=gx, gy=gy, gm=gm, g=g, gc=gc,
               diff=diff, delta=delta, centers=centers, mean=m, n=n)
    return features, aux


def discriminator_featurize(s) -> np.ndarray:
    """18 scale-invariant features of a shading raster: a 16-bin soft
    histogram of log1p gradient magnitudes plus the mean (identically one
    after normalization) and variance of the normalized raster."""
    arr = s.data if isinstance(s, Image) else np.asarray(s, dtype=np.float64)
    features, _ = _featurize_with_aux(arr)
    return features


def _feature_grad_backprop(weights: np.ndarray, aux: dict) -> np.ndarray:
    """d(weights . features)/d s via the soft-binning chain."""
    n = aux["n"]
    delta = aux["delta"]
    diff = aux["diff"]
    # histogram part: each active triangle contributes -sign(diff)/delta
    active = np.abs(diff) < 1.0
    d_gc = (active * (-np.sign(diff)) / delta) @ weights[:FEATURE_BINS] / n  # (h, w, 1)
    inside = (aux["g"] > aux["centers"][0]) & (aux["g"] < aux["centers"][-1])
    d_g = d_gc * inside
    d_gm = d_g / (1.0 + aux["gm"])
    safe = np.where(aux["gm"] > 0, aux["gm"], 1.0)
    d_gx = d_gm * np.where(aux["gm"] > 0, aux["gx"] / safe, 0.0)
    d_gy = d_gm * np.where(aux["gm"] > 0, aux["gy"] / safe, 0.0)
    d_snorm = fdx_adj(d_gx) + fdy_adj(d_gy)
    # variance feature (the mean feature is constant)
    d_snorm = d_snorm + weights[FEATURE_BINS + 1] * (2.0 / n) * (aux["s_norm"] - 1.0)
    # through the normalization s_norm = s / mean(s)
    inner = float((d_snorm * aux["s_norm"]).sum())
    d_s = (d_snorm - inner / n) / aux["mean"]
    return d_s


@dataclass(frozen=True)
class DiscriminatorModel:
    """Logistic scorer over the fixed shading features."""

    weights: np.ndarray
    bias: float
    bins: int = FEATURE_BINS
    hist_range: float = FEATURE_RANGE
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (N_FEATURES,):
            raise ParameterError(f"expected {N_FEATURES} weights, got {w.shape}")
        if not (np.isfinite(w).all() and math.isfinite(self.bias)):
            raise ParameterError("discriminator weights must be finite")
        object.__setattr__(self, "weights", w)

    def logit(self, s) -> float:
        return float(self.weights @ discriminator_featurize(s) + self.bias)

    def score(self, s) -> float:
        return 1.0 / (1.0 + math.exp(-self.logit(s)))

    def score_and_grad(self, s):
        arr = s.data if isinstance(s, Image) else np.asarray(s, dtype=np.float64)
        squeeze = arr.ndim == 2
        features, aux = _featurize_with_aux(arr)
        logit = float(self.weights @ features + self.bias)
        p = 1.0 / (1.0 + math.exp(-logit))
        d_s = _feature_grad_backprop(self.weights, aux)
        return p, (d_s[:, :, 0] if squeeze else d_s)

    def to_json(self) -> str:
        return json.dumps(
            {
                "feature_spec": {"bins": self.bins, "hist_range": self.hist_range},
                "weights": self.weights.tolist(),
                "bias": self.bias,
                "metadata": self.metadata,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "DiscriminatorModel":
        obj = json.loads(text)
        return cls(
            weights=np.array(obj["weights"], dtype=np.float64),
            bias=float(obj["bias"]),
            bins=int(obj["feature_spec"]["bins"]),
            hist_range=float(obj["feature_spec"]["hist_range"]),
            metadata=dict(obj.get("metadata", {})),
        )


def discriminator_train(positives, negatives, seed: int = 0,
                        epochs: int = 500, lr: float = 1.0) -> DiscriminatorModel:
    """Full-batch logistic regression on shading features.

    Features are standardized during optimization and the affine transform
    is folded back into the returned weights, so the model scores raw
    features. Zero initialization makes training deterministic; the seed
    is recorded for provenance of any caller-side shuffling.
    """
    if not positives or not negatives:
        raise ParameterError("both classes must be nonempty")
    feats = [discriminator_featurize(s) for s in positives]
    feats += [discriminator_featurize(s) for s in negatives]
    x = np.array(feats)
    y = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])

    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    xs = (x - mu) / sd

    w = np.zeros(N_FEATURES)
    b = 0.0
    n = len(y)
    final_loss = math.log(2.0)
    for _ in range(epochs):
        z = xs @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        final_loss = float(np.mean(
            np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
        ))
        g = p - y
        w -= lr * (xs.T @ g) / n
        b -= lr * float(g.mean())

    w_raw = w / sd
    b_raw = b - float(w_raw @ mu)
    return DiscriminatorModel(
        weights=w_raw,
        bias=b_raw,
        metadata={
            "epochs": epochs,
            "lr": lr,
            "seed": seed,
            "final_loss": final_loss,
            "n_pos": len(positives),
            "n_neg": len(negatives),
        },
    )


def discriminator_score(model: DiscriminatorModel, s) -> float:
    return model.score(s)


# ---------------------------------------------------------------------------
# energy minimization over per-pixel fields

def _energy_terms(i_arr, s, model, config: SolverConfig):
    """Weighted objective terms on the exact-reconstruction manifold.

    The reflectance is pinned to i / s, which keeps the composition error
    at its global minimum of zero identically, so the remaining terms are
    functions of the shading alone; reflectance-side gradients chain back
    through the division. Returns (weight, value, grad_s) tuples.
    """
    lw = config.weights
    r = i_arr / s
    dr_ds = -i_arr / (s * s)
    terms = [(1.0, reconstruction_loss(i_arr, r, s).value, np.zeros_like(s))]
    if lw.lambda_ad > 0 and model is not None:
        ad = adversarial_loss(s, model)
        terms.append((lw.lambda_ad, ad.value, ad.grad["s_hat"]))
    if lw.lambda_grad > 0:
        gc = grad_constraint_loss(r, s)
        chained = gc.grad["s_hat"] + (gc.grad["r_hat"] * dr_ds).sum(axis=2, keepdims=True)
        terms.append((lw.lambda_grad, gc.value, chained))
    if config.smoothness > 0:
        sx, sy = fdx(s), fdy(s)
        n = s.shape[0] * s.shape[1]
        val = float((sx * sx + sy * sy).sum()) / n
        terms.append((config.smoothness, val, (2.0 / n) * (fdx_adj(sx) + fdy_adj(sy))))
    return terms


def _unit(g):
    peak = float(np.abs(g).max())
    return g / peak if peak > 0 else g


def _combine_terms(terms, balanced: bool):
    """Total energy plus a descent direction over the shading field.

    balanced=True scales each term's gradient to unit peak before applying
    its weight, so soft terms (the gradient-exclusivity product of two
    small difference fields) are not drowned out by stiff ones; the
    backtracking accept test on the true energy keeps this safe.
    """
    energy = 0.0
    d_s = np.zeros_like(terms[0][2])
    for w, v, g_s in terms:
        energy += w * v
        d_s += w * (_unit(g_s) if balanced else g_s)
    return energy, d_s


def energy_decompose(i: Image, model: DiscriminatorModel | None,
                     config: SolverConfig = SolverConfig(),
                     return_trace: bool = False):
    """Minimize the unsupervised objective over per-pixel fields.

    The search walks the exact-reconstruction manifold (reflectance is
    always the image divided by the shading), which removes the stiff
    composition valley that starves the soft exclusivity term under plain
    coordinate descent. Steps use momentum with backtracking: a step that
    would raise the energy is retried smaller, and as a last resort along
    the raw gradient, so the energy trace is monotone non-increasing. The
    shading is floored at 1e-4 after every step.
    """
    i_arr = np.maximum(i.data, EPS_LOG)
    lum = np.maximum(to_luminance(i).data, EPS_LOG)
    if config.init == "flat":
        s = np.ones_like(lum)
    else:
        s = ndimage.gaussian_filter(lum[:, :, 0], config.init_blur_sigma, mode="nearest")[:, :, None]
        s = np.maximum(s, EPS_LOG)

    terms = _energy_terms(i_arr, s, model, config)
    energy, d_s = _combine_terms(terms, balanced=True)
    if not math.isfinite(energy):
        raise DivergenceError("initial energy is not finite; reduce the step size")
    trace = [energy]
    v_s = np.zeros_like(s)
    step = config.step_size

    for _ in range(config.iterations):
        accepted = False
        trial_step = step
        mode = 0  # 0: momentum+balanced, 1: balanced, 2: raw gradient
        for _attempt in range(30):
            if mode == 2:
                _, d_s = _combine_terms(terms, balanced=False)
                d_s = _unit(d_s)
            if mode == 0:
                s_s = config.momentum * v_s - trial_step * d_s
            else:
                s_s = -trial_step * d_s
            cand_s = np.maximum(s + s_s, EPS_LOG)
            cand_terms = _energy_terms(i_arr, cand_s, model, config)
            cand_e, cand_ds = _combine_terms(cand_terms, balanced=True)
            if not math.isfinite(cand_e):
                raise DivergenceError("energy diverged; reduce the step size")
            if cand_e <= energy:
                v_s = cand_s - s
                s = cand_s
                energy, d_s = cand_e, cand_ds
                terms = cand_terms
                step = min(trial_step * 1.2, config.step_size)
                accepted = True
                break
            trial_step *= 0.5
            if mode == 0:
                mode = 1
            elif trial_step < config.step_size / 2 ** 18:
                # balanced direction exhausted; fall back to the raw
                # gradient, which descends whenever it is nonzero
                mode = 2
                trial_step = config.step_size
        trace.append(energy)
        if not accepted:
            break  # numerically stationary

    r = i_arr / s
    residual = float(np.abs(i.data - r * s).max())
    decomp = Decomposition(Image(r), Image(s), residual)
    return (decomp, trace) if return_trace else decomp
