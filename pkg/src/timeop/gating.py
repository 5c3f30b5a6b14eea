"""Temporal context states, scale gating, scale fusion and modality routing.

Every forward function here has a matching ``*_backward`` that returns exact
gradients; the full model in :mod:`timeop.model` chains them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TrainView
from .operators import SECONDS_PER_DAY

STD_FLOOR = 1e-6
USER_FEATURES = ("log_mean_age", "log_median_age", "log_span", "recent_fraction")
ITEM_FEATURES = ("log_age", "log_span", "log_count", "log_mean_gap")


@dataclass(frozen=True)
class TemporalContext:
    user_raw: np.ndarray  # (U, 4)
    item_raw: np.ndarray  # (I, 4)
    user: np.ndarray  # standardized
    item: np.ndarray
    user_mean: np.ndarray
    user_std: np.ndarray
    item_mean: np.ndarray
    item_std: np.ndarray


def _standardize(x: np.ndarray):
    mu = x.mean(axis=0)
    sd = np.maximum(x.std(axis=0), STD_FLOOR)
    return (x - mu) / sd, mu, sd


def _group_stats(groups: np.ndarray, values: np.ndarray, n: int):
    """Per-group count, mean, median, min and max (zeros for empty groups)."""
    order = np.lexsort((values, groups))
    g, v = groups[order], values[order]
    count = np.bincount(g, minlength=n)
    start = np.concatenate([[0], np.cumsum(count)[:-1]])
    has = count > 0
    mean = np.zeros(n)
    mean[has] = np.bincount(g, weights=v, minlength=n)[has] / count[has]
    lo = start + (count - 1) // 2
    hi = start + count // 2
    median = np.zeros(n)
    vmin = np.zeros(n)
    vmax = np.zeros(n)
    median[has] = 0.5 * (v[lo[has]] + v[hi[has]])
    vmin[has] = v[start[has]]
    vmax[has] = v[start[has] + count[has] - 1]
    return count, mean, median, vmin, vmax


def compute_contexts(view: TrainView, window_fraction: float = 0.1,
                     time_unit: float = SECONDS_PER_DAY) -> TemporalContext:
    """Four temporal statistics per user and per item, z-scored on the train set.

    Ages are measured back from the latest train timestamp overall; the
    "recent" window is the last ``window_fraction`` of the global train span.
    """
    if len(view) == 0:
        raise ValueError("train view is empty")
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    t = view.times / time_unit
    t_ref = t.max()
    window = window_fraction * (t_ref - t.min())
    age = t_ref - t

    cnt, mean_age, med_age, amin, amax = _group_stats(view.users, age, view.n_users)
    recent = np.bincount(view.users, weights=(t >= t_ref - window).astype(float), minlength=view.n_users)
    frac = np.divide(recent, cnt, out=np.zeros(view.n_users), where=cnt > 0)
    user_raw = np.column_stack([np.log1p(mean_age), np.log1p(med_age), np.log1p(amax - amin), frac])

    icnt, _, _, imin, imax = _group_stats(view.items, t, view.n_items)
    seen = icnt > 0
    item_age = np.where(seen, t_ref - imin, 0.0)
    ispan = imax - imin
    gap = np.divide(ispan, icnt - 1, out=np.zeros(view.n_items), where=icnt > 1)
    item_raw = np.column_stack([np.log1p(item_age), np.log1p(ispan), np.log1p(icnt), np.log1p(gap)])

    us, umu, usd = _standardize(user_raw)
    its, imu, isd = _standardize(item_raw)
    return TemporalContext(user_raw, item_raw, us, its, umu, usd, imu, isd)


# ---------------------------------------------------------------- networks

def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_mlp(rng, d_in: int, hidden: int, d_out: int, prefix: str) -> dict:
    return {
        f"{prefix}.w1": glorot(rng, d_in, hidden),
        f"{prefix}.b1": np.zeros(hidden),
        f"{prefix}.w2": glorot(rng, hidden, d_out),
        f"{prefix}.b2": np.zeros(d_out),
    }


def mlp_forward(params: dict, prefix: str, s: np.ndarray):
    """One ReLU hidden layer followed by an affine output; returns (logits, cache)."""
    w1 = np.asarray(params[f"{prefix}.w1"], dtype=np.float64)
    w2 = np.asarray(params[f"{prefix}.w2"], dtype=np.float64)
    pre = s @ w1 + params[f"{prefix}.b1"]
    hid = np.maximum(pre, 0.0)
    logits = hid @ w2 + params[f"{prefix}.b2"]
    return logits, (s, pre, hid, w1, w2)


def mlp_backward(prefix: str, cache, d_logits: np.ndarray) -> dict:
    s, pre, hid, w1, w2 = cache
    d_hid = d_logits @ w2.T
    d_pre = d_hid * (pre > 0)
    return {
        f"{prefix}.w2": hid.T @ d_logits,
        f"{prefix}.b2": d_logits.sum(axis=0),
        f"{prefix}.w1": s.T @ d_pre,
        f"{prefix}.b1": d_pre.sum(axis=0),
    }


def softmax(z: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite logits")
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, d_p: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Gradient w.r.t. the (pre-temperature) logits."""
    return p * (d_p - (d_p * p).sum(axis=-1, keepdims=True)) / temperature


def softmax_jacobian(p: np.ndarray) -> np.ndarray:
    return np.diag(p) - np.outer(p, p)


def gate(s: np.ndarray, params: dict, prefix: str, temperature: float = 1.0):
    """Scale-mixture weights on the K-simplex; returns (g, cache)."""
    logits, cache = mlp_forward(params, prefix, s)
    g = softmax(logits, temperature)
    return g, (cache, g, temperature)


def gate_backward(prefix: str, cache, d_g: np.ndarray) -> dict:
    mlp_cache, g, temperature = cache
    return mlp_backward(prefix, mlp_cache, softmax_backward(g, d_g, temperature))


# ---------------------------------------------------------------- fusion and routing

def fuse_scales(reps: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Per-node mixture ``sum_k g[n, k] * reps[k, n]``; reps is (K, N, W), g is (N, K)."""
    if reps.shape[0] != g.shape[1] or reps.shape[1] != g.shape[0]:
        raise ValueError(f"reps {reps.shape} do not match gating table {g.shape}")
    return np.einsum("nk,knw->nw", g, reps)


def fuse_scales_backward(reps: np.ndarray, g: np.ndarray, d_fused: np.ndarray):
    """Returns (d_reps, d_g)."""
    d_reps = g.T[:, :, None] * d_fused[None]
    d_g = np.einsum("knw,nw->nk", reps, d_fused)
    return d_reps, d_g


def channel_scale(h: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Multiply each D-wide modality block of ``h`` (.., M*D) by ``beta`` (.., M)."""
    m = beta.shape[-1]
    d = h.shape[-1] // m
    return (h.reshape(*h.shape[:-1], m, d) * beta[..., None]).reshape(h.shape)


def channel_dots(a: np.ndarray, b: np.ndarray, m: int) -> np.ndarray:
    """Per-modality inner products of two (.., M*D) arrays, shape (.., M)."""
    d = a.shape[-1] // m
    return (a.reshape(*a.shape[:-1], m, d) * b.reshape(*b.shape[:-1], m, d)).sum(axis=-1)


def route_modalities(fused_user: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Routed user vector: concatenation of beta-weighted modality channels.

    ``fused_user`` already holds the channels side by side (.., M*D); a single
    modality is passed through unchanged.
    """
    if beta.shape[-1] == 1:
        return fused_user
    return channel_scale(fused_user, beta)


def route(s_user: np.ndarray, params: dict, prefix: str = "route"):
    """Modality weights beta_u from the user context; returns (beta, cache)."""
    logits, cache = mlp_forward(params, prefix, s_user)
    beta = softmax(logits)
    return beta, (cache, beta)


def route_backward(prefix: str, cache, d_beta: np.ndarray) -> dict:
    mlp_cache, beta = cache
    return mlp_backward(prefix, mlp_cache, softmax_backward(beta, d_beta))
