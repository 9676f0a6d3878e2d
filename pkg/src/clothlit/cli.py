"""Command-line entry point for every pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical non-convergence. Every run echoes its resolved configuration
on stderr unless --quiet.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .annotation import parse as parse_doc
from .annotation import serialize, validate
from .decompose import (
    DiscriminatorModel,
    SolverConfig,
    discriminator_score,
    discriminator_train,
    edge_prior_decompose,
    energy_decompose,
    retinex_decompose,
)
from .errors import ClothlitError, ConvergenceError, DivergenceError, ParameterError
from .imgcore import Image, canny, load_ciif, load_image, save_ciif, save_png, to_luminance
from .losses import (
    LossEval,
    LossWeights,
    adversarial_loss,
    bce_with_logit,
    finite_diff_check,
    grad_constraint_loss,
    reconstruction_loss,
    regression_loss,
    si_mse_loss,
)
from .metrics import MetricConfig, MetricReport, aggregate, evaluate, format_table
from .synth import SynthConfig, config_from_dict, corrupt, gen_dataset, gen_scene


def _read_raster(path: Path) -> Image:
    data = path.read_bytes()
    if data[:4] == b"CIIF":
        return load_ciif(data)
    return load_image(data)


def _write_raster(path: Path, img: Image) -> None:
    if path.suffix == ".ciif":
        path.write_bytes(save_ciif(img))
    else:
        path.write_bytes(save_png(img))


def _echo(args, payload: dict) -> None:
    if not args.quiet:
        print(f"# {json.dumps(payload, default=str)}", file=sys.stderr)


def _default_threads(args) -> int | None:
    if args.threads:
        return args.threads
    env = os.environ.get("CI_THREADS")
    return int(env) if env else None


# ---------------------------------------------------------------------------
# subcommands

def _cmd_synth(args) -> int:
    config = SynthConfig(size=args.size)
    if args.config:
        config = config_from_dict(json.loads(Path(args.config).read_text()))
    if args.pattern:
        config = replace(config, pattern=args.pattern)
    _echo(args, {"cmd": "synth", "count": args.count, "seed": args.seed, "size": config.size})
    manifest = gen_dataset(args.count, args.out, args.seed, config, threads=_default_threads(args))
    print(json.dumps({"scenes": len(manifest["scenes"]), "out": args.out}))
    return 0


def _cmd_canny(args) -> int:
    img = _read_raster(Path(args.image))
    edges = canny(to_luminance(img), args.sigma, args.low, args.high)
    _echo(args, {"cmd": "canny", "sigma": args.sigma, "low": args.low, "high": args.high})
    coords = sorted(edges.pixels, key=lambda p: (p[1], p[0]))
    if args.out:
        Path(args.out).write_text(json.dumps({"width": edges.width, "height": edges.height,
                                              "pixels": [list(p) for p in coords]}))
    print(json.dumps({"edge_pixels": len(coords)}))
    return 0


def _solver_config(args) -> SolverConfig:
    config = SolverConfig()
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text())
        weights = raw.pop("weights", None)
        config = replace(config, **raw)
        if weights:
            config = replace(config, weights=LossWeights(**weights))
    return config


def _cmd_solve(args) -> int:
    img = _read_raster(Path(args.image))
    config = _solver_config(args)
    _echo(args, {"cmd": "solve", "method": args.method})
    if args.method == "retinex":
        result = retinex_decompose(img, config)
    elif args.method == "edge-prior":
        if not args.annotation:
            raise ParameterError("--annotation is required for edge-prior")
        doc = parse_doc(Path(args.annotation).read_bytes())
        result = edge_prior_decompose(img, doc, config)
    else:
        model = None
        if args.discriminator:
            model = DiscriminatorModel.from_json(Path(args.discriminator).read_text())
        result = energy_decompose(img, model, config)
    if args.out_r:
        _write_raster(Path(args.out_r), result.reflectance)
    if args.out_s:
        _write_raster(Path(args.out_s), result.shading)
    print(json.dumps({"residual": result.residual}))
    return 0


def _load_manifest(path: Path) -> dict:
    return json.loads(path.read_text())


def _cmd_evaluate(args) -> int:
    config = MetricConfig(tau=args.tau, w1=args.w1, w2=args.w2, deadband=args.deadband)
    _echo(args, {"cmd": "evaluate", "tau": args.tau, "w1": args.w1, "w2": args.w2})
    if args.manifest:
        base = Path(args.manifest).parent
        manifest = _load_manifest(Path(args.manifest))
        pred_dir = Path(args.pred_dir) if args.pred_dir else None
        reports, labels = [], []
        for idx, entry in enumerate(manifest["scenes"]):
            files = entry["files"]
            image = _read_raster(base / files["i"])
            doc = parse_doc((base / files["annotation"]).read_bytes())
            stem = Path(files["i"]).name.replace("_i.ciif", "")
            if pred_dir is not None:
                r_hat = _read_raster(pred_dir / f"{stem}_r.ciif")
                s_hat = _read_raster(pred_dir / f"{stem}_s.ciif")
            else:
                r_hat = _read_raster(base / files["r"])
                s_hat = _read_raster(base / files["s"])
            reports.append(evaluate(r_hat, s_hat, image, doc, config))
            labels.append(stem)
        report = aggregate(reports)
        if args.format == "json":
            print(report.to_json())
        else:
            print(format_table(reports + [report], labels + ["aggregate"]))
    else:
        if not (args.image and args.annotation and args.pred_r and args.pred_s):
            raise ParameterError("provide --manifest or all of --image/--annotation/--pred-r/--pred-s")
        image = _read_raster(Path(args.image))
        doc = parse_doc(Path(args.annotation).read_bytes())
        r_hat = _read_raster(Path(args.pred_r))
        s_hat = _read_raster(Path(args.pred_s))
        report = evaluate(r_hat, s_hat, image, doc, config)
        if args.format == "json":
            print(report.to_json())
        else:
            print(format_table([report], ["image"]))
    return 0


class _LinearProbe:
    """Tiny fixed-weight scorer so the adversarial loss can be checked
    without a trained model."""

    def __init__(self, shape):
        rng = np.random.default_rng(42)
        self.w = rng.normal(0, 0.05, size=shape)

    def score_and_grad(self, s):
        z = float((self.w * s).sum())
        p = 1.0 / (1.0 + np.exp(-z))
        return p, self.w * 1.0


def _cmd_gradcheck(args) -> int:
    _echo(args, {"cmd": "gradcheck", "seed": args.seed, "break_gradients": args.break_gradients})
    rng = np.random.default_rng(args.seed)
    shape = (8, 8, 3)
    a = rng.uniform(0.1, 1.0, shape)
    b = rng.uniform(0.1, 1.0, shape)
    s = rng.uniform(0.1, 1.0, (8, 8, 1))
    i = rng.uniform(0.1, 1.0, shape)
    probe = _LinearProbe((8, 8, 1))
    broken = args.break_gradients

    def maybe_break(fn):
        def wrapped(**kw):
            ev = fn(**kw)
            if broken:
                return LossEval(ev.value, {k: g * 1.01 for k, g in ev.grad.items()})
            return ev
        return wrapped

    checks = [
        ("si_mse", maybe_break(lambda x_hat: si_mse_loss(x_hat, b)), {"x_hat": a}, 1e-5),
        ("regression", maybe_break(lambda x_hat: regression_loss(x_hat, b)), {"x_hat": a}, 1e-5),
        ("reconstruction", maybe_break(lambda r_hat, s_hat: reconstruction_loss(i, r_hat, s_hat)),
         {"r_hat": a, "s_hat": s}, 1e-5),
        ("bce_logit", maybe_break(lambda logit: bce_with_logit(float(np.ravel(logit)[0]), 1.0)),
         {"logit": np.array([0.3])}, 1e-5),
        ("adversarial", maybe_break(lambda s_hat: adversarial_loss(s_hat, probe)),
         {"s_hat": s}, 1e-4),
        ("grad_constraint", maybe_break(lambda r_hat, s_hat: grad_constraint_loss(r_hat, s_hat)),
         {"r_hat": a, "s_hat": s}, 1e-5),
    ]
    results = []
    worst_fail = False
    for name, fn, inputs, tol in checks:
        err = finite_diff_check(fn, inputs, eps=1e-6, seed=args.seed)
        ok = err < tol
        worst_fail |= not ok
        results.append({"loss_name": name, "max_rel_err": err, "pass": bool(ok)})
    print(json.dumps(results))
    return 1 if worst_fail else 0


def _cmd_discriminator(args) -> int:
    _echo(args, {"cmd": "discriminator", "action": args.action, "seed": args.seed})
    if args.action == "train":
        manifest = _load_manifest(Path(args.manifest))
        base = Path(args.manifest).parent
        pos, neg = [], []
        for entry in manifest["scenes"]:
            files = entry["files"]
            pos.append(_read_raster(base / files["s"]))
            neg.append(to_luminance(_read_raster(base / files["i"])))
        model = discriminator_train(pos, neg, seed=args.seed, epochs=args.epochs, lr=args.lr)
        Path(args.out).write_text(model.to_json())
        print(json.dumps({"final_loss": model.metadata["final_loss"], "out": args.out}))
        return 0
    model = DiscriminatorModel.from_json(Path(args.model).read_text())
    img = to_luminance(_read_raster(Path(args.image)))
    print(json.dumps({"score": discriminator_score(model, img)}))
    return 0


def _cmd_corrupt(args) -> int:
    manifest = _load_manifest(Path(args.manifest))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = config_from_dict(manifest["config"])
    _echo(args, {"cmd": "corrupt", "mode": args.mode, "beta": args.beta})
    for idx, entry in enumerate(manifest["scenes"]):
        scene = gen_scene(entry["seed"], config)
        r_hat, s_hat = corrupt(scene, args.mode, args.beta)
        stem = f"scene_{idx:04d}"
        (out / f"{stem}_r.ciif").write_bytes(save_ciif(r_hat))
        (out / f"{stem}_s.ciif").write_bytes(save_ciif(s_hat))
    print(json.dumps({"scenes": len(manifest["scenes"]), "out": args.out}))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    _echo(args, {"cmd": "serve", "host": args.host, "port": args.port,
                 "max_solves": args.max_solves})

    app = create_app(max_concurrent_solves=args.max_solves)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _cmd_hash_tree(args) -> int:
    # helper for determinism checks: stable hash over a directory tree
    root = Path(args.dir)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(path.read_bytes())
    print(json.dumps({"sha256": digest.hexdigest()}))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clothlit", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=0)
        sp.add_argument("--quiet", action="store_true")
        sp.add_argument("--format", choices=("json", "table"), default="table")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--size", type=int, default=128)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pattern", default="")
    sp.add_argument("--config", default="")
    sp.set_defaults(func=_cmd_synth)

    sp = sub.add_parser("canny", help="detect edges in an image")
    common(sp)
    sp.add_argument("--image", required=True)
    sp.add_argument("--sigma", type=float, default=1.4)
    sp.add_argument("--low", type=float, default=0.05)
    sp.add_argument("--high", type=float, default=0.15)
    sp.add_argument("--out", default="")
    sp.set_defaults(func=_cmd_canny)

    sp = sub.add_parser("solve", help="decompose an image")
    common(sp)
    sp.add_argument("--method", choices=("retinex", "edge-prior", "energy"), required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--annotation", default="")
    sp.add_argument("--discriminator", default="")
    sp.add_argument("--out-r", default="")
    sp.add_argument("--out-s", default="")
    sp.add_argument("--config", default="")
    sp.set_defaults(func=_cmd_solve)

    sp = sub.add_parser("evaluate", help="score predictions against annotations")
    common(sp)
    sp.add_argument("--manifest", default="")
    sp.add_argument("--pred-dir", default="")
    sp.add_argument("--image", default="")
    sp.add_argument("--annotation", default="")
    sp.add_argument("--pred-r", default="")
    sp.add_argument("--pred-s", default="")
    sp.add_argument("--tau", type=float, default=0.05)
    sp.add_argument("--w1", type=float, default=3.0)
    sp.add_argument("--w2", type=float, default=1.0)
    sp.add_argument("--deadband", type=float, default=0.05)
    sp.set_defaults(func=_cmd_evaluate)

    sp = sub.add_parser("gradcheck", help="finite-difference verification of all losses")
    common(sp)
    sp.add_argument("--break-gradients", action="store_true",
                    help="corrupt every gradient by 1%% to prove the harness detects it")
    sp.set_defaults(func=_cmd_gradcheck)

    sp = sub.add_parser("discriminator", help="train or apply the shading scorer")
    common(sp)
    sp.add_argument("action", choices=("train", "score"))
    sp.add_argument("--manifest", default="")
    sp.add_argument("--out", default="model.json")
    sp.add_argument("--epochs", type=int, default=500)
    sp.add_argument("--lr", type=float, default=0.3)
    sp.add_argument("--model", default="")
    sp.add_argument("--image", default="")
    sp.set_defaults(func=_cmd_discriminator)

    sp = sub.add_parser("corrupt", help="write degraded predictions for a manifest")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--mode", choices=("texture_copy", "shading_leak", "blur", "swap"),
                    required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_corrupt)

    sp = sub.add_parser("serve", help="run the HTTP service")
    common(sp)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8642)
    sp.add_argument("--max-solves", type=int, default=4)
    sp.set_defaults(func=_cmd_serve)

    sp = sub.add_parser("hash-tree", help="stable content hash of a directory")
    common(sp)
    sp.add_argument("--dir", required=True)
    sp.set_defaults(func=_cmd_hash_tree)

    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ConvergenceError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ClothlitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON input: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
