"""Differentiable loss kernels with hand-written gradients.

Every loss returns a LossEval pairing the scalar value with the gradient
raster for each named input, so per-image solvers can run first-order
descent without an autodiff framework. All math is float64; a central
finite-difference harness (finite_diff_check) verifies each gradient.

Difference operators come from imgcore (forward differences, replicate
boundary); backpropagation through them uses their exact adjoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .imgcore import fdx, fdx_adj, fdy, fdy_adj

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossEval:
    """Scalar loss value plus gradients keyed by input name."""

    value: float
    grad: dict

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ParameterError("loss value is not finite")
        for name, g in self.grad.items():
            if not np.all(np.isfinite(g)):
                raise ParameterError(f"gradient for {name!r} is not finite")


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 1.0
    lambda_s: float = 1.0
    lambda_ad: float = 0.1
    lambda_grad: float = 0.1

    def __post_init__(self):
        for name in ("lambda_r", "lambda_s", "lambda_ad", "lambda_grad"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")


def _as64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _fit_scale(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Least-squares scale alpha minimizing ||alpha*a - b||^2, with its
    denominator. alpha is 0 when a is identically zero."""
    denom = float((a * a).sum())
    if denom == 0.0:
        return 0.0, 0.0
    return float((a * b).sum()) / denom, denom


def si_mse_loss(x_hat, x, with_alpha_grad: bool = True) -> LossEval:
    """Scale-invariant MSE with gradient w.r.t. the prediction.

    The scale is fit in closed form. Differentiating through the fit adds
    a term proportional to the fit's normal-equation residual, which is
    zero at the optimum, so both settings of with_alpha_grad agree; the
    detached variant is kept to make that agreement checkable.
    """
    a, b = _as64(x_hat), _as64(x)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    n = a.size
    alpha, denom = _fit_scale(a, b)
    resid = alpha * a - b
    value = float((resid ** 2).mean())
    grad = (2.0 * alpha / n) * resid
    if with_alpha_grad and denom > 0:
        # d(alpha)/da = (b - 2*alpha*a) / denom; inner product with the
        # residual is zero at the fitted alpha, kept for verification
        envelope = 2.0 / n * float((resid * a).sum())
        grad = grad + envelope * (b - 2.0 * alpha * a) / denom
    return LossEval(value, {"x_hat": grad})


def regression_loss(x_hat, x) -> LossEval:
    """si-MSE on the raster plus si-MSE on its forward differences.

    The difference term stacks the x and y components so one scale covers
    both; its gradient flows back through the difference adjoints.
    """
    a, b = _as64(x_hat), _as64(x)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    direct = si_mse_loss(a, b)

    ga = np.concatenate([fdx(a), fdy(a)], axis=-1) if a.ndim == 3 else np.stack([fdx(a), fdy(a)])
    gb = np.concatenate([fdx(b), fdy(b)], axis=-1) if b.ndim == 3 else np.stack([fdx(b), fdy(b)])
    gterm = si_mse_loss(ga, gb)
    ggrad = gterm.grad["x_hat"]
    if a.ndim == 3:
        c = a.shape[2]
        gx_part, gy_part = ggrad[..., :c], ggrad[..., c:]
    else:
        gx_part, gy_part = ggrad[0], ggrad[1]
    back = fdx_adj(gx_part) + fdy_adj(gy_part)
    return LossEval(direct.value + gterm.value, {"x_hat": direct.grad["x_hat"] + back})


def reconstruction_loss(i, r_hat, s_hat) -> LossEval:
    """Mean squared composition error (image minus reflectance*shading).

    A 1-channel shading broadcasts over the reflectance channels; its
    gradient sums the per-channel contributions back down.
    """
    im, r, s = _as64(i), _as64(r_hat), _as64(s_hat)
    if im.shape != r.shape:
        raise DimensionError(f"image/reflectance shape mismatch {im.shape} vs {r.shape}")
    if s.shape != r.shape and not (
        s.ndim == r.ndim and s.shape[:-1] == r.shape[:-1] and s.shape[-1] == 1
    ):
        raise DimensionError(f"shading shape {s.shape} does not broadcast over {r.shape}")
    n = im.size
    resid = im - r * s
    value = float((resid ** 2).mean())
    g_r = -(2.0 / n) * resid * s
    g_s_full = -(2.0 / n) * resid * r
    g_s = g_s_full if s.shape == r.shape else g_s_full.sum(axis=-1, keepdims=True)
    return LossEval(value, {"r_hat": g_r, "s_hat": g_s})


def direct_loss(i, r_hat, s_hat, r_gt, s_gt, weights: LossWeights = LossWeights()) -> LossEval:
    """Weighted sum of the two regression losses and the reconstruction loss."""
    lr = regression_loss(r_hat, r_gt)
    ls = regression_loss(s_hat, s_gt)
    rec = reconstruction_loss(i, r_hat, s_hat)
    value = weights.lambda_r * lr.value + weights.lambda_s * ls.value + rec.value
    return LossEval(value, {
        "r_hat": weights.lambda_r * lr.grad["x_hat"] + rec.grad["r_hat"],
        "s_hat": weights.lambda_s * ls.grad["x_hat"] + rec.grad["s_hat"],
    })


def bce(y_hat: float, y: float) -> LossEval:
    """Negative log likelihood of a Bernoulli label under probability y_hat.

    The probability is clamped away from {0, 1}; the gradient is w.r.t.
    the clamped probability.
    """
    p = min(max(float(y_hat), BCE_EPS), 1.0 - BCE_EPS)
    value = -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))
    grad = -(y / p) + (1.0 - y) / (1.0 - p)
    return LossEval(value, {"y_hat": grad})


def bce_with_logit(logit: float, y: float) -> LossEval:
    """Fused sigmoid + BCE; numerically stable, gradient w.r.t. the logit."""
    z = float(logit)
    # softplus(z) - y*z, rewritten to avoid overflow for large |z|
    value = max(z, 0.0) - y * z + math.log1p(math.exp(-abs(z)))
    p = 1.0 / (1.0 + math.exp(-z))
    return LossEval(value, {"logit": p - y})


def adversarial_loss(s_hat, discriminator) -> LossEval:
    """Realism pressure on the predicted shading: BCE of its score against 1.

    The discriminator must expose score_and_grad(s) -> (probability,
    d logit / d s); the chain rule with the fused BCE gives the input
    gradient (p - 1) * dlogit.
    """
    s = _as64(s_hat)
    p, dlogit = discriminator.score_and_grad(s)
    p = min(max(float(p), BCE_EPS), 1.0 - BCE_EPS)
    value = -math.log(p)
    grad = (p - 1.0) * _as64(dlogit)
    if grad.shape != s.shape:
        raise DimensionError("discriminator gradient shape mismatch")
    return LossEval(value, {"s_hat": grad})


def grad_constraint_loss(r_hat, s_hat) -> LossEval:
    """Penalty on co-located changes: mean squared per-pixel dot product of
    the reflectance and shading difference vectors.

    With multi-channel reflectance the per-channel dots against the
    broadcast shading differences are summed before squaring, which
    reduces to the plain scalar form when both inputs are single-channel.
    """
    r, s = _as64(r_hat), _as64(s_hat)
    if r.ndim != 3 or s.ndim != 3:
        raise DimensionError("grad_constraint_loss expects (h, w, c) rasters")
    if r.shape[:2] != s.shape[:2] or s.shape[2] != 1:
        raise DimensionError(f"expected 1-channel shading matching {r.shape[:2]}, got {s.shape}")
    n = r.shape[0] * r.shape[1]
    rx, ry = fdx(r), fdy(r)
    sx, sy = fdx(s), fdy(s)
    dot = (rx * sx).sum(axis=2) + (ry * sy).sum(axis=2)  # (h, w)
    value = float((dot ** 2).mean())
    w = (2.0 / n) * dot[:, :, None]
    # each reflectance channel sees the same broadcast shading differences
    wx = np.broadcast_to(w * sx, r.shape).copy()
    wy = np.broadcast_to(w * sy, r.shape).copy()
    g_r = fdx_adj(wx) + fdy_adj(wy)
    g_s = fdx_adj((w * rx).sum(axis=2, keepdims=True)) + fdy_adj((w * ry).sum(axis=2, keepdims=True))
    return LossEval(value, {"r_hat": g_r, "s_hat": g_s})


def generator_loss(i, r_hat, s_hat, r_gt, s_gt, weights: LossWeights, discriminator) -> LossEval:
    """Full training objective: direct supervision plus weighted adversarial
    and gradient-exclusivity terms."""
    base = direct_loss(i, r_hat, s_hat, r_gt, s_gt, weights)
    ad = adversarial_loss(s_hat, discriminator)
    gc = grad_constraint_loss(r_hat, s_hat)
    value = base.value + weights.lambda_ad * ad.value + weights.lambda_grad * gc.value
    return LossEval(value, {
        "r_hat": base.grad["r_hat"] + weights.lambda_grad * gc.grad["r_hat"],
        "s_hat": base.grad["s_hat"] + weights.lambda_ad * ad.grad["s_hat"]
        + weights.lambda_grad * gc.grad["s_hat"],
    })


def finite_diff_check(loss_fn, inputs: dict, eps: float = 1e-6,
                      max_coords: int = 64, seed: int = 0,
                      abs_floor: float = 1e-8) -> float:
    """Max relative error of analytic vs central finite-difference gradients.

    Perturbs up to max_coords coordinates per input (all of them if the
    input is small), chosen reproducibly. Differences below the absolute
    floor count as zero (they are indistinguishable from the subtraction
    roundoff of the difference quotient); the floor also caps the
    denominator so exact zeros compare cleanly.
    """
    if eps <= 0:
        raise ParameterError("eps must be positive")
    rng = np.random.default_rng(seed)
    base = loss_fn(**inputs)
    worst = 0.0
    for name, arr in inputs.items():
        if name not in base.grad:
            continue
        a = _as64(arr)
        flat = a.ravel()
        n = flat.size
        idx = np.arange(n) if n <= max_coords else np.sort(
            rng.choice(n, size=max_coords, replace=False)
        )
        analytic = _as64(base.grad[name]).ravel()
        for k in idx:
            bumped = dict(inputs)
            plus = flat.copy(); plus[k] += eps
            minus = flat.copy(); minus[k] -= eps
            bumped[name] = plus.reshape(a.shape)
            f_plus = loss_fn(**bumped).value
            bumped[name] = minus.reshape(a.shape)
            f_minus = loss_fn(**bumped).value
            fd = (f_plus - f_minus) / (2.0 * eps)
            diff = abs(fd - analytic[k])
            if diff <= abs_floor:
                continue
            worst = max(worst, diff / max(abs(fd), abs(analytic[k]), abs_floor))
    return worst
