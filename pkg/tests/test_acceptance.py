"""Acceptance gate: the eight release criteria, each timed and reported.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. The synthetic-scene fixtures are shared with the unit tests,
so total runtime stays within each criterion's budget.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from clothlit.decompose import (
    SolverConfig,
    discriminator_score,
    discriminator_train,
    edge_prior_decompose,
    energy_decompose,
    retinex_decompose,
)
from clothlit.imgcore import Image, to_luminance
from clothlit.losses import (
    LossWeights,
    adversarial_loss,
    bce_with_logit,
    direct_loss,
    finite_diff_check,
    generator_loss,
    grad_constraint_loss,
    reconstruction_loss,
    regression_loss,
    si_mse_loss,
)
from clothlit.metrics import evaluate, region_error_reflectance, si_mse
from clothlit.synth import SynthConfig, corrupt, gen_scene


def report(name, ok, elapsed, budget, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"{status} {name}: {detail} [{elapsed:.1f}s / budget {budget:.0f}s]")
    assert ok, f"{name}: {detail}"
    assert elapsed < budget, f"{name} exceeded budget: {elapsed:.1f}s > {budget}s"


class FixedLinearProbe:
    def __init__(self, shape, seed):
        self.w = np.random.default_rng(seed).normal(0, 0.05, size=shape)

    def score_and_grad(self, s):
        z = float((self.w * s).sum())
        return 1.0 / (1.0 + np.exp(-z)), self.w.copy()


def test_criterion_1_loss_gradient_suite():
    start = time.perf_counter()
    worst = {}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        r_gt = rng.uniform(0.1, 1.0, (8, 8, 3))
        s_gt = rng.uniform(0.1, 1.0, (8, 8, 1))
        i = r_gt * s_gt
        r_hat = rng.uniform(0.1, 1.0, (8, 8, 3))
        s_hat = rng.uniform(0.1, 1.0, (8, 8, 1))
        probe = FixedLinearProbe((8, 8, 1), seed)
        weights = LossWeights()
        cases = {
            "si_mse": (lambda x_hat: si_mse_loss(x_hat, r_gt), {"x_hat": r_hat}),
            "regression": (lambda x_hat: regression_loss(x_hat, r_gt), {"x_hat": r_hat}),
            "reconstruction": (lambda r_hat, s_hat: reconstruction_loss(i, r_hat, s_hat),
                               {"r_hat": r_hat, "s_hat": s_hat}),
            "direct": (lambda r_hat, s_hat: direct_loss(i, r_hat, s_hat, r_gt, s_gt, weights),
                       {"r_hat": r_hat, "s_hat": s_hat}),
            "bce_logit": (lambda logit: bce_with_logit(float(np.ravel(logit)[0]), 1.0),
                          {"logit": np.array([0.4 * seed - 2.0])}),
            "adversarial": (lambda s_hat: adversarial_loss(s_hat, probe), {"s_hat": s_hat}),
            "grad_constraint": (lambda r_hat, s_hat: grad_constraint_loss(r_hat, s_hat),
                                {"r_hat": r_hat, "s_hat": s_hat}),
            "generator": (lambda r_hat, s_hat: generator_loss(
                i, r_hat, s_hat, r_gt, s_gt, weights, probe),
                {"r_hat": r_hat, "s_hat": s_hat}),
        }
        for name, (fn, inputs) in cases.items():
            err = finite_diff_check(fn, inputs, eps=1e-6, seed=seed)
            worst[name] = max(worst.get(name, 0.0), err)
    elapsed = time.perf_counter() - start
    ok = all(err < 1e-5 for err in worst.values())
    detail = "max rel err " + ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
    report("criterion 1 (loss gradients < 1e-5, 20 seeds)", ok, elapsed, 30.0, detail)


def test_criterion_2_si_mse_scale_invariance():
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(1000):
        x_hat = rng.uniform(0.01, 1.0, (6, 6, 1))
        x = rng.uniform(0.01, 1.0, (6, 6, 1))
        base = si_mse_loss(x_hat, x).value
        for c in (0.1, 1.0, 10.0):
            worst = max(worst, abs(si_mse_loss(c * x_hat, x).value - base))
    elapsed = time.perf_counter() - start
    report("criterion 2 (si-MSE scale invariance < 1e-9, 1000 trials)",
           worst < 1e-9, elapsed, 5.0, f"max deviation {worst:.2e}")


def test_criterion_3_metric_on_ground_truth(scenes50):
    start = time.perf_counter()
    bad = []
    for scene in scenes50:
        rep = evaluate(scene.reflectance, scene.shading, scene.composite, scene.annotation)
        if not (rep.f_r >= 0.95 and rep.f_s >= 0.95
                and rep.region_error_r <= 1e-4 and rep.region_error_s <= 0.01):
            bad.append((scene.seed, rep.f_r, rep.f_s, rep.region_error_r, rep.region_error_s))
    elapsed = time.perf_counter() - start
    report("criterion 3 (ground truth scores on 50 scenes)", not bad, elapsed, 60.0,
           f"failures: {bad[:3]}" if bad else "all 50 scenes clean")


def test_criterion_4_texture_copy_detectability(scenes50):
    start = time.perf_counter()
    betas = (0.0, 0.25, 0.5, 1.0)
    violations = []
    for scene in scenes50:
        accs = []
        for beta in betas:
            r_hat, s_hat = corrupt(scene, "texture_copy", beta)
            rep = evaluate(r_hat, s_hat, scene.composite, scene.annotation)
            accs.append(rep.acc_s_er)
        monotone = all(a >= b for a, b in zip(accs, accs[1:]))
        strict = accs[-1] < accs[0]
        if not (monotone and strict):
            violations.append((scene.seed, accs))
    elapsed = time.perf_counter() - start
    report("criterion 4 (texture-copy monotone on 50 scenes)", not violations,
           elapsed, 120.0, f"violations: {violations[:3]}" if violations else "all monotone, all strict at beta=1")


def test_criterion_5_grad_constraint_ablation(scenes50, shading_model):
    start = time.perf_counter()
    f_on, f_off = [], []
    for scene in scenes50[:20]:
        for lam, sink in ((0.1, f_on), (0.0, f_off)):
            config = SolverConfig(weights=LossWeights(lambda_ad=0.1, lambda_grad=lam))
            out = energy_decompose(scene.composite, shading_model, config)
            rep = evaluate(out.reflectance, out.shading, scene.composite, scene.annotation)
            sink.append(rep.f_r)
    elapsed = time.perf_counter() - start
    mean_on, mean_off = float(np.mean(f_on)), float(np.mean(f_off))
    report("criterion 5 (grad-constraint ablation direction, 20 scenes)",
           mean_on > mean_off, elapsed, 600.0,
           f"mean F_R with={mean_on:.4f} without={mean_off:.4f}")


def test_criterion_6_solver_fidelity(scenes50):
    start = time.perf_counter()
    config = SolverConfig()
    full_mask = None
    sim_bad, res_bad, wins = [], [], 0
    for scene in scenes50:
        if full_mask is None:
            full_mask = np.ones((scene.composite.height, scene.composite.width), dtype=bool)
        ret = retinex_decompose(scene.composite, config)
        prior = edge_prior_decompose(scene.composite, scene.annotation, config)
        sim = si_mse(ret.reflectance, scene.reflectance, full_mask)
        if sim > 0.02:
            sim_bad.append((scene.seed, sim))
        if ret.residual > 1e-3:
            res_bad.append((scene.seed, ret.residual))
        err_prior = region_error_reflectance(prior.reflectance, scene.annotation.regions)
        err_ret = region_error_reflectance(ret.reflectance, scene.annotation.regions)
        wins += err_prior < err_ret
    elapsed = time.perf_counter() - start
    ok = not sim_bad and not res_bad and wins >= 45
    report("criterion 6 (solver fidelity, 50 scenes)", ok, elapsed, 300.0,
           f"si_mse violations={sim_bad[:2]}, residual violations={res_bad[:2]}, "
           f"edge-prior wins {wins}/50")


def test_criterion_7_discriminator_desk_scale():
    start = time.perf_counter()
    config = SynthConfig(size=64)
    pos = [gen_scene(seed, config).shading for seed in range(200)]
    neg = [to_luminance(gen_scene(seed, config).composite) for seed in range(200, 400)]
    rng = np.random.default_rng(2024)
    order = rng.permutation(200)
    train_idx, test_idx = order[:160], order[160:]
    model = discriminator_train([pos[i] for i in train_idx], [neg[i] for i in train_idx],
                                seed=7, epochs=500, lr=0.3)
    again = discriminator_train([pos[i] for i in train_idx], [neg[i] for i in train_idx],
                                seed=7, epochs=500, lr=0.3)
    deterministic = np.array_equal(model.weights, again.weights) and model.bias == again.bias
    correct = sum(discriminator_score(model, pos[i]) > 0.5 for i in test_idx)
    correct += sum(discriminator_score(model, neg[i]) < 0.5 for i in test_idx)
    acc = correct / (2 * len(test_idx))
    elapsed = time.perf_counter() - start
    report("criterion 7 (discriminator 200v200, 80/20 split)",
           acc >= 0.9 and deterministic, elapsed, 60.0,
           f"held-out accuracy {acc:.3f}, retrain identical: {deterministic}")


def test_criterion_8_cli_determinism(tmp_path):
    start = time.perf_counter()
    import hashlib

    def tree_hash(root: Path) -> str:
        digest = hashlib.sha256()
        for path in sorted(p for p in root.rglob("*") if p.is_file()):
            digest.update(path.relative_to(root).as_posix().encode())
            digest.update(path.read_bytes())
        return digest.hexdigest()

    hashes = []
    for name in ("run_a", "run_b"):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "clothlit.cli", "synth", "--count", "50",
             "--size", "128", "--seed", "7", "--out", str(out), "--quiet",
             "--threads", "4"],
            capture_output=True, text=True, timeout=110,
        )
        assert proc.returncode == 0, proc.stderr
        hashes.append(tree_hash(out))
    elapsed = time.perf_counter() - start
    report("criterion 8 (synth CLI byte-identical trees)", hashes[0] == hashes[1],
           elapsed, 120.0, f"sha256 {hashes[0][:16]}... twice")
