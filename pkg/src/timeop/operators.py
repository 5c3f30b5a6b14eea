"""Temporal proximity kernels and the normalized multi-scale operator bank."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import TrainView

SECONDS_PER_DAY = 86400.0


def recency(view: TrainView, u: int, t_ui: float) -> float:
    """Time since ``t_ui`` measured back from the user's latest train interaction."""
    mask = view.users == u
    if not mask.any():
        raise ValueError(f"user {u} has no train interactions")
    return max(0.0, float(view.times[mask].max()) - t_ui)


def user_anchors(view: TrainView) -> np.ndarray:
    anchor = np.full(view.n_users, -np.inf)
    np.maximum.at(anchor, view.users, view.times)
    return anchor


def recencies(view: TrainView) -> np.ndarray:
    """Vectorized :func:`recency` for every train triple."""
    return np.maximum(0.0, user_anchors(view)[view.users] - view.times)


def kernel(dt, tau: float):
    """Heavy-tailed proximity weight ``exp(-log(1 + dt) / tau)`` in (0, 1]."""
    if not np.all(np.asarray(tau) > 0):
        raise ValueError(f"kernel scale must be positive, got {tau}")
    return np.exp(-np.log1p(dt) / tau)


@dataclass(frozen=True)
class Topology:
    """Symmetric CSR index structure over N = U + I nodes.

    ``edge_of_entry`` maps each stored entry to its (u, i) pair index so a
    per-pair weight vector expands to CSR values with one gather.
    """

    n_users: int
    n_items: int
    indptr: np.ndarray
    indices: np.ndarray
    pair_users: np.ndarray
    pair_items: np.ndarray
    edge_of_entry: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    @property
    def n_pairs(self) -> int:
        return len(self.pair_users)

    @property
    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_nodes), np.diff(self.indptr))


def build_topology(view: TrainView) -> tuple[Topology, np.ndarray]:
    """Unique (u, i) pairs of the train view plus, per triple, its pair index."""
    keys = view.users * view.n_items + view.items
    uniq, pair_of_triple = np.unique(keys, return_inverse=True)
    pu = uniq // view.n_items
    pi = uniq % view.n_items
    n = view.n_nodes
    n_pairs = len(uniq)
    rows = np.concatenate([pu, pi + view.n_users])
    cols = np.concatenate([pi + view.n_users, pu])
    edge = np.concatenate([np.arange(n_pairs), np.arange(n_pairs)])
    order = np.lexsort((cols, rows))
    rows, cols, edge = rows[order], cols[order], edge[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    topo = Topology(view.n_users, view.n_items, indptr, cols.astype(np.int64), pu, pi, edge)
    return topo, pair_of_triple.ravel()


def pair_weights(view: TrainView, tau: float | None, time_unit: float = SECONDS_PER_DAY):
    """Kernel weight per unique pair; repeated pairs keep their largest weight.

    ``tau=None`` gives the uniform (all ones) weighting.
    """
    topo, pair_of_triple = build_topology(view)
    if tau is None:
        return topo, np.ones(topo.n_pairs)
    w = kernel(recencies(view) / time_unit, tau)
    out = np.zeros(topo.n_pairs)
    np.maximum.at(out, pair_of_triple, w)
    return topo, out


def build_weighted_adjacency(view: TrainView, tau: float | None,
                             time_unit: float = SECONDS_PER_DAY) -> sp.csr_matrix:
    """Raw symmetric weighted adjacency for one kernel scale."""
    if len(view) == 0:
        raise ValueError("train view is empty")
    topo, w = pair_weights(view, tau, time_unit)
    return sp.csr_matrix((w[topo.edge_of_entry], topo.indices, topo.indptr),
                         shape=(topo.n_nodes, topo.n_nodes))


def degrees(adj: sp.csr_matrix) -> np.ndarray:
    return np.asarray(adj.sum(axis=1)).ravel()


def _scaled(raw, deg_row, deg_col):
    """raw / sqrt(d_r d_c); the product is symmetric, so mirrored entries match
    bitwise, and a lone edge gives exactly w / sqrt(w * w) = 1."""
    prod = deg_row * deg_col
    out = np.zeros_like(raw, dtype=np.float64)
    nz = prod > 0
    out[nz] = raw[nz] / np.sqrt(prod[nz])
    return out


def normalize(adj: sp.csr_matrix) -> sp.csr_matrix:
    """Symmetric normalization D^-1/2 A D^-1/2; zero-degree rows stay zero."""
    adj = sp.csr_matrix(adj, dtype=np.float64)
    if adj.nnz and adj.data.min() < 0:
        raise ValueError("adjacency has negative weights")
    deg = degrees(adj)
    rows = np.repeat(np.arange(adj.shape[0]), np.diff(adj.indptr))
    vals = _scaled(adj.data, deg[rows], deg[adj.indices])
    return sp.csr_matrix((vals, adj.indices.copy(), adj.indptr.copy()), shape=adj.shape)


@dataclass(frozen=True)
class OperatorBank:
    """K normalized operators over one shared sparsity pattern.

    Only ``values`` differs between scales; ``operator(k)`` wraps the shared
    index arrays without copying them.
    """

    topology: Topology
    scales: tuple  # floats; None entries mean the uniform kernel
    values: np.ndarray  # (K, nnz) normalized values
    raw_values: np.ndarray  # (K, nnz) pre-normalization weights
    degrees: np.ndarray  # (K, N)

    @property
    def K(self) -> int:
        return len(self.values)

    @property
    def n_nodes(self) -> int:
        return self.topology.n_nodes

    @property
    def nnz(self) -> int:
        return len(self.topology.indices)

    def operator(self, k: int) -> sp.csr_matrix:
        t = self.topology
        mat = sp.csr_matrix((self.values[k], t.indices, t.indptr), shape=(t.n_nodes, t.n_nodes))
        # scipy may canonicalise/copy index arrays; share ours explicitly
        mat.indices, mat.indptr = t.indices, t.indptr
        return mat

    def dense(self, k: int) -> np.ndarray:
        return self.operator(k).toarray()

    def raw_dense(self, k: int) -> np.ndarray:
        t = self.topology
        return sp.csr_matrix((self.raw_values[k], t.indices, t.indptr),
                             shape=(t.n_nodes, t.n_nodes)).toarray()


def build_bank(view: TrainView, scales, time_unit: float = SECONDS_PER_DAY,
               uniform: bool = False) -> OperatorBank:
    """Build K temporally weighted, normalized operators sharing one topology.

    With ``uniform=True`` every weight is 1 (the unweighted LightGCN operator),
    one copy per entry of ``scales``.
    """
    scales = tuple(float(s) for s in scales)
    if len(scales) < 1:
        raise ValueError("need at least one scale")
    if not uniform:
        if any(s <= 0 for s in scales):
            raise ValueError("scales must be positive")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError(f"scales must be strictly increasing, got {scales}")
    if len(view) == 0:
        raise ValueError("train view is empty")
    topo, pair_of_triple = build_topology(view)
    rows = topo.rows
    if not uniform:
        dt = recencies(view) / time_unit
    values, raws, degs = [], [], []
    for tau in scales:
        if uniform:
            w = np.ones(topo.n_pairs)
        else:
            w = np.zeros(topo.n_pairs)
            np.maximum.at(w, pair_of_triple, kernel(dt, tau))
        raw = w[topo.edge_of_entry]
        deg = np.bincount(rows, weights=raw, minlength=topo.n_nodes)
        values.append(_scaled(raw, deg[rows], deg[topo.indices]))
        raws.append(raw)
        degs.append(deg)
    return OperatorBank(topo, tuple(None if uniform else s for s in scales),
                        np.array(values), np.array(raws), np.array(degs))


def dump_bank(bank: OperatorBank, path) -> None:
    """Text triplets ``row col value`` per scale, for debugging."""
    rows = bank.topology.rows
    with open(path, "w", encoding="utf-8") as fh:
        for k in range(bank.K):
            fh.write(f"# scale {k} tau={bank.scales[k]}\n")
            for r, c, v in zip(rows, bank.topology.indices, bank.values[k]):
                fh.write(f"{r} {c} {v!r}\n")
