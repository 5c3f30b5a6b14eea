"""Recommendation loss, per-expert ranking margins and the margin-decorrelation penalty."""

from __future__ import annotations

import numpy as np

from .gating import channel_dots, channel_scale
from .propagation import scatter_rows


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sigmoid(x):
    return np.exp(log_sigmoid(x))


def bce_loss(pos_scores: np.ndarray, neg_scores: np.ndarray):
    """Summed binary cross-entropy; returns (loss, d_pos, d_neg)."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    loss = -log_sigmoid(pos_scores).sum() - log_sigmoid(-neg_scores).sum()
    return float(loss), -sigmoid(-pos_scores), sigmoid(neg_scores)


def expert_margins(reps: np.ndarray, beta_u: np.ndarray, users, pos, neg, n_users: int):
    """Margin of every triple under every single scale, shape (K, B).

    The user side uses the beta-weighted channels of scale k, the item side
    the plain channels, exactly as the full score with a one-hot gate.
    ``users``/``pos``/``neg`` are user and item ids; ``beta_u`` is (B, M).
    """
    m = beta_u.shape[-1]
    hu = reps[:, users]
    diff = reps[:, n_users + np.asarray(pos)] - reps[:, n_users + np.asarray(neg)]
    dots = channel_dots(hu, diff, m)  # (K, B, M)
    return (dots * beta_u[None]).sum(axis=-1), (hu, diff, dots)


def expert_margins_backward(reps_shape, beta_u, users, pos, neg, n_users, cache, d_delta):
    """Scatter margin gradients back to the per-scale representations and beta."""
    hu, diff, dots = cache
    gu = d_delta[..., None] * channel_scale(diff, beta_u[None])
    gi = d_delta[..., None] * channel_scale(hu, beta_u[None])
    rows = np.concatenate([users, n_users + np.asarray(pos), n_users + np.asarray(neg)])
    d_reps = np.stack([scatter_rows(reps_shape[1], rows, np.vstack([gu[k], gi[k], -gi[k]]))
                       for k in range(reps_shape[0])])
    d_beta = (d_delta[..., None] * dots).sum(axis=0)
    return d_reps, d_beta


def diversity_loss(margins: np.ndarray, sigma_min: float = 0.1, lambda_var: float = 1.0,
                   eps: float = 1e-8, return_grad: bool = False):
    """Off-diagonal correlation penalty plus a hinge on each expert's margin std.

    ``margins`` is (K, B). Standardization uses the population std so the
    correlation diagonal is 1 up to ``eps``.
    """
    delta = np.asarray(margins, dtype=np.float64)
    k, b = delta.shape
    if b < 2:
        raise ValueError("need a batch of at least two triples")
    centred = delta - delta.mean(axis=1, keepdims=True)
    std = np.sqrt((centred ** 2).mean(axis=1))
    denom = std + eps
    z = centred / denom[:, None]
    corr = z @ z.T / b
    resid = corr - np.eye(k)
    hinge = np.maximum(0.0, sigma_min - std)
    loss = float((resid ** 2).sum() + lambda_var * hinge.sum())
    if not return_grad:
        return loss
    d_z = 4.0 * resid @ z / b
    d_std = -lambda_var * (hinge > 0)
    # back through z = centred / (std + eps) with std = sqrt(mean(centred^2))
    d_std = d_std - (d_z * centred).sum(axis=1) / denom ** 2
    d_centred = d_z / denom[:, None]
    safe = np.where(std > 0, std, 1.0)
    d_centred += np.where(std[:, None] > 0, d_std[:, None] * centred / (b * safe[:, None]), 0.0)
    d_delta = d_centred - d_centred.mean(axis=1, keepdims=True)
    return loss, d_delta


def correlation_matrix(margins: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    delta = np.asarray(margins, dtype=np.float64)
    centred = delta - delta.mean(axis=1, keepdims=True)
    z = centred / (np.sqrt((centred ** 2).mean(axis=1)) + eps)[:, None]
    return z @ z.T / delta.shape[1]
