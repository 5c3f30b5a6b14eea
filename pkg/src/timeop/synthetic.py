"""Synthetic drifting-preference data with item modality features.

Each user moves through two taste regimes: an early item cluster, then a
later cluster, and finally a short burst inside one small subgroup of that
later cluster. Held-out interactions come from the burst, so models that
weight recent edges more heavily rank them higher.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import InteractionLog, from_triples, write_features, write_interactions

DAY = 86400.0
EPOCH = 1.6e9


@dataclass(frozen=True)
class DriftConfig:
    n_users: int = 2000
    n_items: int = 1000
    cluster_size: int = 50
    subgroup_size: int = 10
    early_mean: float = 15.0
    late_mean: float = 9.0
    burst: int = 6  # includes the validation and test interactions
    min_span_days: float = 30.0
    max_span_days: float = 360.0
    burst_days: float = 2.0
    feature_dim: int = 16
    feature_noise: float = 1.0


def _zipf(n: int, rng, a: float = 0.8) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** a
    return rng.permutation(w / w.sum())


def generate(cfg: DriftConfig = DriftConfig(), seed: int = 0):
    """Return (log, features) where features maps modality name -> (I, d) float32."""
    n_clusters = cfg.n_items // cfg.cluster_size
    groups_per_cluster = cfg.cluster_size // cfg.subgroup_size
    if n_clusters < 2:
        raise ValueError(f"need at least two item clusters: n_items={cfg.n_items}, cluster_size={cfg.cluster_size}")
    if groups_per_cluster < 2 or cfg.burst > cfg.subgroup_size:
        raise ValueError("each cluster needs two subgroups and a subgroup must hold the burst")
    if cfg.n_users < 1:
        raise ValueError("n_users must be >= 1")
    rng = np.random.default_rng(seed)
    items_of = np.arange(n_clusters * cfg.cluster_size).reshape(n_clusters, cfg.cluster_size)
    pop = [_zipf(cfg.cluster_size, rng) for _ in range(n_clusters)]

    us, its, ts = [], [], []
    for u in range(cfg.n_users):
        span = np.exp(rng.uniform(np.log(cfg.min_span_days), np.log(cfg.max_span_days)))
        start = rng.uniform(0.0, 200.0)
        a, b = rng.choice(n_clusters, size=2, replace=False)
        grp = rng.integers(groups_per_cluster)
        burst_items = items_of[b, grp * cfg.subgroup_size:(grp + 1) * cfg.subgroup_size]
        late_pool = np.setdiff1d(np.arange(cfg.cluster_size),
                                 np.arange(grp * cfg.subgroup_size, (grp + 1) * cfg.subgroup_size))

        n_early = min(1 + rng.poisson(cfg.early_mean - 1), cfg.cluster_size)
        n_late = min(1 + rng.poisson(cfg.late_mean - 1), len(late_pool))
        early = rng.choice(cfg.cluster_size, size=n_early, replace=False, p=pop[a])
        lp = pop[b][late_pool] / pop[b][late_pool].sum()
        late = rng.choice(late_pool, size=n_late, replace=False, p=lp)
        bp = pop[b][grp * cfg.subgroup_size:(grp + 1) * cfg.subgroup_size]
        burst = rng.choice(burst_items, size=cfg.burst, replace=False, p=bp / bp.sum())

        t_early = np.sort(rng.uniform(0.0, 0.6 * span, n_early))
        t_late = np.sort(rng.uniform(0.6 * span, span - 1.5 * cfg.burst_days, n_late))
        t_burst = np.sort(rng.uniform(span - cfg.burst_days, span, cfg.burst))
        us.extend([u] * (n_early + n_late + cfg.burst))
        its.extend(items_of[a, early])
        its.extend(items_of[b, late])
        its.extend(burst)
        ts.extend(EPOCH + (start + np.concatenate([t_early, t_late, t_burst])) * DAY)

    n_items = n_clusters * cfg.cluster_size
    # relabel items by first appearance so the TSV round trip keeps feature rows aligned
    its = np.asarray(its)
    _, first = np.unique(its, return_index=True)
    seen_order = its[np.sort(first)]
    relabel = np.full(n_items, -1)
    relabel[seen_order] = np.arange(len(seen_order))
    log = from_triples(us, relabel[its], ts, cfg.n_users, len(seen_order))

    cluster = np.repeat(np.arange(n_clusters), cfg.cluster_size)
    group = np.arange(n_items) // cfg.subgroup_size
    features = {}
    for name in ("vision", "text"):
        cent = rng.normal(size=(n_clusters, cfg.feature_dim))
        sub = rng.normal(scale=0.5, size=(n_clusters * groups_per_cluster, cfg.feature_dim))
        noise = rng.normal(scale=cfg.feature_noise, size=(n_items, cfg.feature_dim))
        features[name] = (cent[cluster] + sub[group] + noise)[seen_order].astype(np.float32)
    return log, features


def write_dataset(log: InteractionLog, features: dict, directory) -> dict:
    """Write ``interactions.tsv`` and one ``<name>.tmmf`` per modality; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"interactions": directory / "interactions.tsv"}
    write_interactions(log, paths["interactions"])
    for name, mat in features.items():
        paths[name] = directory / f"{name}.tmmf"
        write_features(mat, paths[name])
    return paths
