"""Full model: embeddings and projectors, multi-scale propagation, gating, routing,
and the composite objective with hand-written gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gating
from .gating import TemporalContext, channel_dots, channel_scale
from .losses import bce_loss, diversity_loss, expert_margins, expert_margins_backward
from .operators import OperatorBank
from .propagation import propagate, propagate_adjoint, scatter_rows

ID_MODALITY = "id"


class NumericError(FloatingPointError):
    """A NaN or Inf appeared in a loss or gradient."""


@dataclass
class LossBreakdown:
    rec: float
    div: float
    l2: float
    total: float


@dataclass
class Forward:
    reps: np.ndarray  # (K, N, M*D)
    g: np.ndarray  # (N, K)
    beta: np.ndarray  # (U, M)
    fused: np.ndarray  # (N, M*D)
    caches: dict = field(default_factory=dict)


@dataclass
class Model:
    """Parameters plus the fixed structures they act on.

    ``params`` values are stored in ``dtype`` (float32 normally, float64 for
    debugging); every forward/backward computation runs in float64.
    """

    bank: OperatorBank
    context: TemporalContext
    features: dict  # modality name -> (I, d_m) array; the id modality has none
    modalities: tuple
    dim: int
    layers: int
    temperature: float
    params: dict

    @classmethod
    def create(cls, bank, context, features, modalities=(ID_MODALITY,), dim=64, layers=2,
               temperature=1.0, hidden=64, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        n_users, n_items = bank.topology.n_users, bank.topology.n_items
        params = {}
        for m in modalities:
            params[f"user_emb.{m}"] = rng.normal(0.0, 0.01, size=(n_users, dim))
            if m == ID_MODALITY:
                params[f"item_emb.{m}"] = rng.normal(0.0, 0.01, size=(n_items, dim))
            else:
                feats = features[m]
                if feats.shape[0] != n_items:
                    raise ValueError(f"modality {m!r} has {feats.shape[0]} rows, expected {n_items}")
                params[f"proj.{m}.weight"] = gating.glorot(rng, feats.shape[1], dim)
                params[f"proj.{m}.bias"] = np.zeros(dim)
        d_user, d_item = context.user.shape[1], context.item.shape[1]
        params.update(gating.init_mlp(rng, d_user, hidden, bank.K, "gate_user"))
        params.update(gating.init_mlp(rng, d_item, hidden, bank.K, "gate_item"))
        params.update(gating.init_mlp(rng, d_user, hidden, len(modalities), "route"))
        params = {k: np.asarray(v, dtype=dtype) for k, v in params.items()}
        feats = {m: np.asarray(features[m], dtype=np.float64) for m in modalities if m != ID_MODALITY}
        return cls(bank, context, feats, tuple(modalities), dim, layers, temperature, params)

    @property
    def n_users(self) -> int:
        return self.bank.topology.n_users

    @property
    def n_items(self) -> int:
        return self.bank.topology.n_items

    @property
    def M(self) -> int:
        return len(self.modalities)

    def _p(self, name):
        return np.asarray(self.params[name], dtype=np.float64)

    def initial_embeddings(self) -> np.ndarray:
        """Stacked X0 with one D-wide column block per modality, (N, M*D)."""
        blocks = []
        for m in self.modalities:
            if m == ID_MODALITY:
                items = self._p(f"item_emb.{m}")
            else:
                items = self.features[m] @ self._p(f"proj.{m}.weight") + self._p(f"proj.{m}.bias")
            blocks.append(np.vstack([self._p(f"user_emb.{m}"), items]))
        return np.hstack(blocks)

    def forward(self) -> Forward:
        reps = propagate(self.bank, self.initial_embeddings(), self.layers)
        g_user, cu = gating.gate(self.context.user, self.params, "gate_user", self.temperature)
        g_item, ci = gating.gate(self.context.item, self.params, "gate_item", self.temperature)
        g = np.vstack([g_user, g_item])
        fused = gating.fuse_scales(reps, g)
        beta, cr = gating.route(self.context.user, self.params)
        return Forward(reps, g, beta, fused, {"gate_user": cu, "gate_item": ci, "route": cr})

    def user_vectors(self, fwd: Forward, users) -> np.ndarray:
        return gating.route_modalities(fwd.fused[users], fwd.beta[users])

    def item_vectors(self, fwd: Forward, items=None) -> np.ndarray:
        rows = self.n_users + (np.arange(self.n_items) if items is None else np.asarray(items))
        return fwd.fused[rows]

    def score(self, fwd: Forward, users, items) -> np.ndarray:
        """Inner product of routed user vectors and fused item vectors (elementwise pairs)."""
        return (self.user_vectors(fwd, users) * self.item_vectors(fwd, items)).sum(axis=-1)

    def score_all(self, fwd: Forward, users) -> np.ndarray:
        return self.user_vectors(fwd, users) @ self.item_vectors(fwd).T

    def component_vectors(self, fwd: Forward, users, items):
        """Single-scale representations z_u^(k), z_i^(k), each (K, n, M*D)."""
        zu = channel_scale(fwd.reps[:, users], fwd.beta[users][None])
        zi = fwd.reps[:, self.n_users + np.asarray(items)]
        return zu, zi

    # ------------------------------------------------------------ objective

    def loss_and_grads(self, users, pos, neg, lam=0.01, gamma=1e-4, sigma_min=0.1,
                       lambda_var=1.0, eps=1e-8):
        """Composite loss and the gradient of every parameter, in storage dtype."""
        users = np.asarray(users)
        pos = np.asarray(pos)
        neg = np.asarray(neg)
        if neg.ndim == 2:
            # several negatives per positive: margins use one triple per negative
            users_t = np.repeat(users, neg.shape[1])
            pos_t = np.repeat(pos, neg.shape[1])
            neg = neg.ravel()
        else:
            users_t, pos_t = users, pos
        U, M = self.n_users, self.M
        for name, p in self.params.items():
            if not np.all(np.isfinite(p)):
                raise NumericError(f"non-finite value in parameter group {name!r}")
        fwd = self.forward()
        reps, g, beta, fused = fwd.reps, fwd.g, fwd.beta, fwd.fused

        fp = fused[U + pos]
        fn = fused[U + neg]
        bu, bn = beta[users], beta[users_t]
        dots_p = channel_dots(fused[users], fp, M)
        dots_n = channel_dots(fused[users_t], fn, M)
        y_pos = (dots_p * bu).sum(axis=1)
        y_neg = (dots_n * bn).sum(axis=1)
        rec, dy_pos, dy_neg = bce_loss(y_pos, y_neg)

        N = fused.shape[0]
        d_fused = scatter_rows(N, np.concatenate([users, users_t, U + pos, U + neg]), np.vstack([
            dy_pos[:, None] * channel_scale(fp, bu),
            dy_neg[:, None] * channel_scale(fn, bn),
            dy_pos[:, None] * channel_scale(fused[users], bu),
            dy_neg[:, None] * channel_scale(fused[users_t], bn),
        ]))
        d_beta = scatter_rows(U, np.concatenate([users, users_t]),
                              np.vstack([dy_pos[:, None] * dots_p, dy_neg[:, None] * dots_n]))

        d_reps, d_g = gating.fuse_scales_backward(reps, g, d_fused)

        margins, mcache = expert_margins(reps, bn, users_t, pos_t, neg, U)
        div, d_delta = diversity_loss(margins, sigma_min, lambda_var, eps, return_grad=True)
        if lam > 0:
            dr, db = expert_margins_backward(reps.shape, bn, users_t, pos_t, neg, U, mcache, lam * d_delta)
            d_reps += dr
            d_beta += scatter_rows(U, users_t, db)

        grads = {}
        grads.update(gating.gate_backward("gate_user", fwd.caches["gate_user"], d_g[:U]))
        grads.update(gating.gate_backward("gate_item", fwd.caches["gate_item"], d_g[U:]))
        grads.update(gating.route_backward("route", fwd.caches["route"], d_beta))

        d_x0 = propagate_adjoint(self.bank, d_reps, self.layers)
        D = self.dim
        for j, m in enumerate(self.modalities):
            block = d_x0[:, j * D:(j + 1) * D]
            grads[f"user_emb.{m}"] = block[:U]
            if m == ID_MODALITY:
                grads[f"item_emb.{m}"] = block[U:]
            else:
                grads[f"proj.{m}.weight"] = self.features[m].T @ block[U:]
                grads[f"proj.{m}.bias"] = block[U:].sum(axis=0)

        l2 = 0.0
        for name in self.params:
            p = self._p(name)
            l2 += float((p * p).sum())
            if gamma:
                grads[name] = grads[name] + 2.0 * gamma * p

        breakdown = LossBreakdown(rec, div, l2, rec + lam * div + gamma * l2)
        if not np.isfinite(breakdown.total):
            raise NumericError(f"non-finite loss: {breakdown}")
        # checked after the cast so storage-dtype overflow is caught too
        with np.errstate(over="ignore"):
            grads = {k: gr.astype(self.params[k].dtype, copy=False) for k, gr in grads.items()}
        for name, gr in grads.items():
            if not np.all(np.isfinite(gr)):
                raise NumericError(f"non-finite gradient in parameter group {name!r}")
        return breakdown, grads

    def loss(self, users, pos, neg, **kw) -> float:
        return self.loss_and_grads(users, pos, neg, **kw)[0].total
