"""Acceptance suite: one test and one printed pass/fail line per criterion."""

import time

import numpy as np
import pytest

from timeop.cli import main
from timeop.config import RunConfig
from timeop.data import TrainView, make_temporal_split, train_view
from timeop.diagnostics import PERTURB_MODES, energies, energy_summary, mixing_stats, perturb_timestamps
from timeop.evaluation import evaluate
from timeop.losses import correlation_matrix, diversity_loss
from timeop.operators import build_bank, build_weighted_adjacency, kernel, normalize
from timeop.oracle import run_suite
from timeop.synthetic import DriftConfig, generate, write_dataset
from timeop.training import train
from toy import TOY_BATCH, gradcheck, toy_model

SEEDS = (0, 1, 2, 3, 4)
# Runtime-bounded training setup for the synthetic experiments; everything not
# listed keeps its default (B=2048, K=3, L=2, tau=0.5/2/8, lambda=0.01, id+vision+text).
EXPERIMENT = dict(dim=32, lr=5e-3, epochs=6, patience=1)


# ---------------------------------------------------------------- oracle criteria

@pytest.fixture(scope="module")
def suite():
    start = time.perf_counter()
    rows = run_suite(n_graphs=50, seed=0)
    return rows, time.perf_counter() - start


def test_c01_spectral_equivalence(suite, criterion):
    rows, seconds = suite
    dev = max(r.value for r in rows if r.check == "polynomial_equivalence")
    ok = dev <= 1e-8 and seconds < 5.0
    criterion(1, "spectral equivalence", ok, f"max deviation {dev:.2e} (<= 1e-8) over 50 graphs, "
                                             f"suite runtime {seconds:.2f} s (< 5 s)")
    assert ok


def test_c02_dirichlet_identity(suite, criterion):
    rows, _ = suite
    rel = max(r.value for r in rows if r.check == "dirichlet_identity")
    ok = rel <= 1e-8
    criterion(2, "Dirichlet identity", ok, f"max relative gap {rel:.2e} (<= 1e-8) over 50 graphs")
    assert ok


def test_c03_gradient_correctness(criterion):
    assert toy_model().bank.n_nodes == 8
    results = {}
    for dtype, tol in ((np.float32, 1e-3), (np.float64, 1e-5)):
        model = toy_model(dtype)
        assert model.bank.K == 2 and model.M == 2 and model.dim == 4
        errors, _ = gradcheck(model, *TOY_BATCH, lam=0.5, gamma=0.01, sigma_min=10.0)
        results[dtype.__name__] = (max(errors.values()), tol, len(errors))
    ok = all(err <= tol for err, tol, _ in results.values())
    detail = ", ".join(f"{k} worst {e:.2e} (<= {t:g}) over {n} groups" for k, (e, t, n) in results.items())
    criterion(3, "gradient correctness", ok, detail)
    assert ok


def test_c04_diversity_closed_forms(criterion):
    rng = np.random.default_rng(0)
    d = rng.normal(size=256)
    worst = 0.0
    for K in (2, 3, 4, 5):
        identical = np.tile(d, (K, 1))
        worst = max(worst, abs(diversity_loss(identical, sigma_min=0.1) - (K * K - K)))
        C = correlation_matrix(identical)
        worst = max(worst, abs(((C - np.eye(K)) ** 2).sum() - (K * K - K)))
    single = rng.normal(size=(1, 64))
    corr1 = float(((correlation_matrix(single) - 1.0) ** 2).sum())
    ok = worst <= 1e-6 and corr1 <= 1e-6
    criterion(4, "diversity closed forms", ok,
              f"identical experts max |L - (K^2-K)| {worst:.1e} (<= 1e-6); K=1 correlation term {corr1:.1e}")
    assert ok


def test_c05_kernel_and_normalization(criterion):
    rng = np.random.default_rng(0)
    dt = rng.uniform(0, 400, size=(1000, 2))
    tau = rng.uniform(0.1, 20, size=(1000, 2))
    lo_dt, hi_dt = dt.min(axis=1), dt.max(axis=1)
    lo_tau, hi_tau = tau.min(axis=1), tau.max(axis=1)
    mono_dt = np.all(kernel(lo_dt, tau[:, 0]) > kernel(hi_dt, tau[:, 0]))
    mono_tau = np.all(kernel(hi_dt, lo_tau) < kernel(hi_dt, hi_tau))
    one = TrainView(np.array([0]), np.array([0]), np.array([0.0]), 1, 1)
    edge_vals = [normalize(w * build_weighted_adjacency(one, 1.0)).toarray()[0, 1]
                 for w in rng.uniform(1e-3, 1e3, 20)]
    edge_ok = all(v == 1.0 for v in edge_vals)
    log, _ = generate(seed=0)
    split = make_temporal_split(log)
    const = build_bank(train_view(perturb_timestamps(log, split, "constant"), split), (0.5, 2.0, 8.0))
    uni = build_bank(train_view(log, split), (1.0, 1.0, 1.0), uniform=True)
    gap = float(np.abs(const.values - uni.values).max())
    ok = mono_dt and mono_tau and edge_ok and gap <= 1e-12
    criterion(5, "kernel/normalization", ok,
              f"monotone in dt {mono_dt}, in tau {mono_tau} (1000 cases each); single edge -> 1 {edge_ok}; "
              f"constant-timestamp bank vs uniform bank max gap {gap:.1e} (<= 1e-12)")
    assert ok


# ---------------------------------------------------------------- synthetic experiments

@pytest.fixture(scope="module")
def experiments():
    """Per seed: the four perturbation settings and the single-scale uniform bank."""
    out = {"runs": {}, "perturb_seconds": 0.0, "diag": {}}
    for seed in SEEDS:
        log, features = generate(seed=seed)
        split = make_temporal_split(log)
        cfg = RunConfig(seed=seed, **EXPERIMENT)
        for mode in PERTURB_MODES:
            start = time.perf_counter()
            plog = perturb_timestamps(log, split, mode, seed=seed)
            res = train(cfg, plog, split, features)
            fwd = res.model.forward()
            out["runs"][mode, seed] = evaluate(res.model, plog, split, fwd=fwd).metrics
            out["perturb_seconds"] += time.perf_counter() - start
            if mode == "original":
                users = split.eval_users
                E = energies(res.model, fwd, users, log.items[split.test[users]])
                out["diag"][seed] = (energy_summary(E)["monotonic_rate"],
                                     mixing_stats(fwd.g[:log.n_users][users])["normalized_entropy"])
        ucfg = cfg.with_overrides(kernel="uniform", k=1, tau=(1.0,))
        res = train(ucfg, log, split, features)
        out["runs"]["uniform", seed] = evaluate(res.model, log, split).metrics
    return out


def _mean(exp, mode, metric):
    return float(np.mean([exp["runs"][mode, s][metric] for s in SEEDS]))


def test_c06_perturbation_ordering(experiments, criterion):
    m = {mode: _mean(experiments, mode, "recall@20") for mode in PERTURB_MODES}
    minutes = experiments["perturb_seconds"] / 60
    ok = m["original"] > m["noise"] > m["shuffle"] and m["original"] > m["constant"] and minutes < 10
    criterion(6, "perturbation ordering", ok,
              "mean R@20 over 5 seeds " + ", ".join(f"{k} {v:.4f}" for k, v in m.items())
              + f"; need Original > Noise > Shuffle and Original > Constant; {minutes:.1f} min (< 10)")
    assert ok


def test_c07_multi_scale_benefit(experiments, criterion):
    diffs = [experiments["runs"]["original", s]["recall@10"] - experiments["runs"]["uniform", s]["recall@10"]
             for s in SEEDS]
    ok = float(np.mean(diffs)) > 0
    criterion(7, "multi-scale benefit", ok,
              f"mean R@10 K=3 temporal {_mean(experiments, 'original', 'recall@10'):.4f} vs K=1 uniform "
              f"{_mean(experiments, 'uniform', 'recall@10'):.4f}, mean improvement {np.mean(diffs):+.4f} (> 0)")
    assert ok


def test_c08_diagnostics_sanity(experiments, criterion):
    rates = [experiments["diag"][s][0] for s in SEEDS]
    inside = [float(((h > 0) & (h < 1)).mean()) for _, h in (experiments["diag"][s] for s in SEEDS)]
    ok = min(rates) > 0.5 and min(inside) >= 0.95
    criterion(8, "diagnostics sanity", ok,
              f"energy monotonic rate min {min(rates):.4f} over seeds (> 0.5); users with gate entropy "
              f"strictly inside (0,1) min {min(inside):.4f} (>= 0.95)")
    assert ok


# ---------------------------------------------------------------- scaling and determinism

def _epoch_seconds(scale):
    log, features = generate(DriftConfig(n_users=int(2000 * scale), n_items=int(1000 * scale)), seed=0)
    split = make_temporal_split(log)
    cfg = RunConfig(seed=0, **{**EXPERIMENT, "epochs": 3, "patience": 10})
    res = train(cfg, log, split, features)
    return min(res.epoch_seconds), len(train_view(log, split))


def test_c09_scaling(criterion):
    t1, e1 = _epoch_seconds(1.0)
    t2, e2 = _epoch_seconds(2.0)
    factor = t2 / t1
    ok = factor <= 2.5
    criterion(9, "per-epoch scaling", ok,
              f"|E| {e1} -> {e2} (x{e2 / e1:.2f}), epoch {t1:.2f} s -> {t2:.2f} s, factor {factor:.2f} (<= 2.5) "
              f"at fixed K=3, L=2, D=32, B=2048")
    assert ok


def test_c10_determinism(tmp_path, criterion):
    log, features = generate(DriftConfig(n_users=500, n_items=250), seed=3)
    write_dataset(log, features, tmp_path / "data")
    cfg = tmp_path / "data" / "config.txt"
    cfg.write_text("interactions = interactions.tsv\nfeatures = vision:vision.tmmf,text:text.tmmf\n"
                   "modalities = id,vision,text\ndim = 16\nbatch_size = 512\nlr = 0.005\nepochs = 3\n"
                   "patience = 5\nseed = 11\n")
    outs = []
    for run in ("a", "b"):
        assert main(["--threads", "1", "train", "--config", str(cfg), "--out", str(tmp_path / run)]) == 0
        outs.append(tmp_path / run)
    same_hist = (outs[0] / "history.csv").read_bytes() == (outs[1] / "history.csv").read_bytes()
    same_ckpt = (outs[0] / "checkpoint.bin").read_bytes() == (outs[1] / "checkpoint.bin").read_bytes()
    ok = same_hist and same_ckpt
    criterion(10, "determinism", ok, f"history bitwise equal {same_hist}, checkpoint bitwise equal {same_ckpt} "
                                     "(two --threads 1 runs)")
    assert ok
