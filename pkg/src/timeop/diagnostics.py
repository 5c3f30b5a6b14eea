"""Timestamp perturbations and post-training analyses of a trained model:
span buckets, energy decay across scales, gate mixing statistics and
span-conditioned modality weights. Every report is written as CSV."""

from __future__ import annotations

import csv

import numpy as np

from .data import InteractionLog, TemporalSplit, TrainView
from .evaluation import RankingReport

PERTURB_MODES = ("original", "shuffle", "constant", "noise")


def perturb_timestamps(log: InteractionLog, split: TemporalSplit, mode: str, seed: int = 0,
                       noise_scale: float = 0.05) -> InteractionLog:
    """Rewrite train timestamps only; identities, order and the split are kept.

    shuffle permutes each user's train timestamps, constant sets them all to
    the latest train timestamp, noise adds uniform jitter of up to
    ``noise_scale`` times the user's train span (clamped at zero).
    """
    if mode not in PERTURB_MODES:
        raise ValueError(f"unknown perturbation mode {mode!r}; expected one of {PERTURB_MODES}")
    times = log.times.copy()
    idx = split.train
    if mode == "original" or len(idx) == 0:
        return log.with_times(times)
    rng = np.random.default_rng(seed)
    users = log.users[idx]
    if mode == "constant":
        times[idx] = times[idx].max()
    elif mode == "shuffle":
        # idx is grouped by user, so a per-group random order permutes within users
        order = np.lexsort((rng.random(len(idx)), users))
        times[idx] = log.times[idx[order]]
    else:
        tmax = np.full(log.n_users, -np.inf)
        tmin = np.full(log.n_users, np.inf)
        np.maximum.at(tmax, users, times[idx])
        np.minimum.at(tmin, users, times[idx])
        span = (tmax - tmin)[users]
        jitter = rng.uniform(-1.0, 1.0, len(idx)) * noise_scale * span
        times[idx] = np.maximum(0.0, times[idx] + jitter)
    return log.with_times(times)


# ---------------------------------------------------------------- span buckets

def user_spans(view: TrainView, users=None) -> np.ndarray:
    tmax = np.full(view.n_users, -np.inf)
    tmin = np.full(view.n_users, np.inf)
    np.maximum.at(tmax, view.users, view.times)
    np.minimum.at(tmin, view.users, view.times)
    span = np.where(np.isfinite(tmax), tmax - tmin, 0.0)
    return span if users is None else span[users]


def quantile_buckets(values: np.ndarray, num_buckets: int) -> np.ndarray:
    """Equal-population buckets 0..num_buckets-1 by value; equal values share
    the lowest bucket any of them would get."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    order = np.argsort(values, kind="stable")
    by_rank = np.empty(n, dtype=np.int64)
    by_rank[order] = (np.arange(n) * num_buckets) // max(n, 1)
    sorted_vals = values[order]
    first = np.searchsorted(sorted_vals, values, side="left")
    return by_rank[order[first]]


def span_buckets(view: TrainView, users, num_buckets: int = 3) -> np.ndarray:
    return quantile_buckets(user_spans(view, users), num_buckets)


def bucket_metrics(report: RankingReport, buckets: np.ndarray, baseline: RankingReport | None = None,
                   num_buckets: int | None = None) -> list:
    """Rows (bucket, n_users, metric, model, baseline, delta); bucket 'all' first."""
    nb = int(buckets.max()) + 1 if num_buckets is None else num_buckets
    rows = []
    groups = [("all", np.ones(len(buckets), dtype=bool))] + [(str(b + 1), buckets == b) for b in range(nb)]
    for label, mask in groups:
        ours = report.subset(mask).metrics
        base = baseline.subset(mask).metrics if baseline is not None else None
        for metric in sorted(ours):
            b = base[metric] if base is not None else None
            rows.append((label, int(mask.sum()), metric, ours[metric], b,
                         None if b is None else ours[metric] - b))
    return rows


# ---------------------------------------------------------------- energy decay

def energies(model, fwd, users, items) -> np.ndarray:
    """Per-pair, per-scale discrepancy ||z_u^(k) - z_i^(k)||^2 / d, shape (n, K)."""
    zu, zi = model.component_vectors(fwd, users, items)
    d = zu.shape[-1]
    return (((zu - zi) ** 2).sum(axis=-1) / d).T


def energy_summary(E: np.ndarray) -> dict:
    """Ratio, drop and monotonicity statistics for one group of pairs.

    Ties count as monotone; pairs with E_1 = 0 are left out of the ratios.
    """
    K = E.shape[1]
    if K < 2:
        raise ValueError("energy diagnostics need at least two scales")
    steps = np.diff(E, axis=1)  # E_{k+1} - E_k, monotone when all <= 0
    viol = np.maximum(steps, 0.0).sum(axis=1)
    mono = viol == 0
    ok = E[:, 0] > 0
    out = {"n_pairs": len(E), "n_ratio_pairs": int(ok.sum()), "n_excluded": int((~ok).sum()),
           "monotonic_rate": float(mono.mean()) if len(E) else float("nan"),
           "mean_violation": float(viol[~mono].mean()) if (~mono).any() else 0.0}
    for k in range(1, K):
        r = E[ok, k] / E[ok, 0]
        out[f"r1{k + 1}"] = float(r.mean()) if len(r) else float("nan")
        out[f"g1{k + 1}"] = 1.0 - out[f"r1{k + 1}"]
    return out


def energy_diagnostics(model, fwd, users, items, buckets: np.ndarray | None = None) -> list:
    """Summary rows for all pairs, then for each span bucket."""
    E = energies(model, fwd, users, items)
    rows = [{"bucket": "all", **energy_summary(E)}]
    if buckets is not None:
        for b in range(int(buckets.max()) + 1):
            mask = buckets == b
            if mask.any():
                rows.append({"bucket": str(b + 1), **energy_summary(E[mask])})
    return rows


# ---------------------------------------------------------------- gating statistics

def normalized_entropy(g: np.ndarray) -> np.ndarray:
    K = g.shape[1]
    if K < 2:
        raise ValueError("entropy of a single-scale gate is undefined")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(g > 0, g * np.log(g), 0.0)
    return -terms.sum(axis=1) / np.log(K)


def mixing_stats(g: np.ndarray) -> dict:
    """Distribution summaries of per-user gate weights, Top-1 share and entropy."""
    g = np.asarray(g, dtype=np.float64)
    top1 = g.max(axis=1)
    ent = normalized_entropy(g)
    out = {"top1_share": top1, "normalized_entropy": ent, "summary": []}
    cols = [(f"g{k + 1}", g[:, k]) for k in range(g.shape[1])] + [("top1_share", top1),
                                                                    ("normalized_entropy", ent)]
    for name, v in cols:
        q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        out["summary"].append({"quantity": name, "median": float(med), "q1": float(q1),
                               "q3": float(q3), "mean": float(v.mean())})
    return out


def modality_mixture_by_span(beta: np.ndarray, spans: np.ndarray, modalities, num_buckets: int = 4) -> list:
    """Bucket mean of each modality weight divided by its global mean, per
    log-span quartile (quantiles of log(span) equal quantiles of span)."""
    beta = np.asarray(beta, dtype=np.float64)
    buckets = quantile_buckets(spans, num_buckets)
    glob = beta.mean(axis=0)
    rows = []
    for b in range(num_buckets):
        mask = buckets == b
        if not mask.any():
            continue
        rel = beta[mask].mean(axis=0) / glob
        with np.errstate(divide="ignore"):
            ls = np.log(spans[mask])
        rows.append({"bucket": str(b + 1), "n_users": int(mask.sum()),
                     "min_log_span": float(ls.min()), "max_log_span": float(ls.max()),
                     **{m: float(r) for m, r in zip(modalities, rel)}})
    return rows


# ---------------------------------------------------------------- CSV output

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, header, rows) -> None:
    """Write dict rows (or tuples in header order) as CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            vals = [row.get(h) for h in header] if isinstance(row, dict) else list(row)
            w.writerow([_fmt(v) for v in vals])


def read_rows(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def gating_rows(g_user: np.ndarray, beta: np.ndarray, user_ids=None):
    K, M = g_user.shape[1], beta.shape[1]
    header = ["user"] + [f"g{k + 1}" for k in range(K)] + [f"beta{m + 1}" for m in range(M)]
    rows = []
    for u in range(len(g_user)):
        name = user_ids[u] if user_ids is not None else u
        rows.append([name, *g_user[u], *beta[u]])
    return header, rows
