"""Stateless HTTP/JSON facade for the annotation UI.

Every request carries all of its inputs (base64 images, inline annotation
documents), every response is a pure function of the request body, and
nothing is persisted, so the UI owns all state and identical requests give
byte-identical responses.
"""

from __future__ import annotations

import base64
import binascii
import threading
import time

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import __version__
from .annotation import parse, serialize, validate
from .decompose import SolverConfig, edge_prior_decompose
from .errors import ClothlitError, ConvergenceError, DivergenceError
from .imgcore import (
    Image,
    canny,
    load_ciif,
    load_image,
    save_png,
    to_luminance,
)
from .losses import LossWeights
from .metrics import MetricConfig, evaluate

MAX_SIDE = 4096


def _decode_image(b64: str, colorspace: str = "linear") -> Image:
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ClothlitError(f"invalid base64 image payload: {exc}") from exc
    img = load_ciif(raw) if raw[:4] == b"CIIF" else load_image(raw, colorspace)
    if img.width > MAX_SIDE or img.height > MAX_SIDE:
        raise _Oversize(f"image {img.width}x{img.height} exceeds {MAX_SIDE} per side")
    return img


class _Oversize(Exception):
    pass


def _encode_png(img: Image) -> str:
    return base64.b64encode(save_png(img)).decode("ascii")


def _solver_config(raw: dict | None) -> SolverConfig:
    config = SolverConfig()
    if raw:
        from dataclasses import replace

        weights = raw.pop("weights", None)
        config = replace(config, **raw)
        if weights:
            config = replace(config, weights=LossWeights(**weights))
    return config


def create_app(max_concurrent_solves: int = 4, cors_origins=("*",)) -> FastAPI:
    app = FastAPI(title="clothlit service", version=__version__)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    solve_gate = threading.Semaphore(max_concurrent_solves)

    @app.exception_handler(_Oversize)
    async def oversize_handler(request: Request, exc: _Oversize):
        return JSONResponse(status_code=413, content={"error": str(exc)})

    @app.exception_handler(ClothlitError)
    async def toolkit_handler(request: Request, exc: ClothlitError):
        if isinstance(exc, (ConvergenceError, DivergenceError)):
            return JSONResponse(status_code=500, content={"error": str(exc)})
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/canny")
    def canny_endpoint(body: dict):
        img = _decode_image(body["image"], body.get("colorspace", "linear"))
        sigma = float(body.get("sigma", 1.4))
        low = float(body.get("low", 0.05))
        high = float(body.get("high", 0.15))
        edges = canny(to_luminance(img), sigma, low, high)
        overlay = img.data.copy()
        mask = edges.mask()
        overlay[mask] = [1.0, 0.0, 0.0] if img.channels == 3 else 1.0
        return {
            "width": edges.width,
            "height": edges.height,
            "pixels": [[x, y] for x, y in sorted(edges.pixels, key=lambda p: (p[1], p[0]))],
            "overlay_png": _encode_png(Image(overlay)),
        }

    @app.post("/solve")
    def solve_endpoint(body: dict):
        img = _decode_image(body["image"], body.get("colorspace", "linear"))
        doc = parse(serialize_from_body(body["annotation"]))
        violations = validate(doc, img)
        if violations:
            return JSONResponse(status_code=422, content={"violations": violations})
        config = _solver_config(body.get("config"))
        with solve_gate:
            start = time.perf_counter()
            result = edge_prior_decompose(img, doc, config)
            elapsed = (time.perf_counter() - start) * 1000.0
        exposure = 1.0 / max(1e-6, float(result.reflectance.data.max()))
        return {
            "reflectance_png": _encode_png(result.reflectance),
            "shading_png": _encode_png(result.shading),
            "reflectance_exposure": exposure,
            "residual": result.residual,
            "elapsed_ms": elapsed,
        }

    @app.post("/evaluate")
    def evaluate_endpoint(body: dict):
        img = _decode_image(body["image"], body.get("colorspace", "linear"))
        doc = parse(serialize_from_body(body["annotation"]))
        violations = validate(doc, img)
        if violations:
            return JSONResponse(status_code=422, content={"violations": violations})
        r_hat = _decode_image(body["pred_r"], body.get("colorspace", "linear"))
        s_hat = _decode_image(body["pred_s"], body.get("colorspace", "linear"))
        cfg = body.get("metric_config") or {}
        config = MetricConfig(
            tau=float(cfg.get("tau", 0.05)),
            w1=float(cfg.get("w1", 3.0)),
            w2=float(cfg.get("w2", 1.0)),
            deadband=float(cfg.get("deadband", 0.05)),
        )
        report = evaluate(r_hat, s_hat, img, doc, config)
        return report.to_dict()

    return app


def serialize_from_body(annotation) -> bytes:
    """Accept the annotation either as an inline JSON object or a string."""
    import json as _json

    if isinstance(annotation, str):
        return annotation.encode("utf-8")
    return _json.dumps(annotation).encode("utf-8")
