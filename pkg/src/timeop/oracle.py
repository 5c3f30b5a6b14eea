"""Brute-force spectral checks of the propagation path on small graphs.

A dense cyclic Jacobi eigensolver gives S = U diag(lam) U^T; the checks
compare sparse layer-summed propagation against the eigenbasis filter
sum_l lam^l, verify the Dirichlet-energy edge-sum identity, and verify that
gate-weighted fusion equals a mixture of spectral filters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .data import TrainView
from .gating import fuse_scales
from .operators import OperatorBank, build_bank
from .propagation import propagate

MAX_NODES = 64
TOL = 1e-8


@numba.njit(cache=True)
def _jacobi_sweeps(a, v, tol, max_sweeps):
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if np.sqrt(off) <= tol:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return max_sweeps


@dataclass(frozen=True)
class DenseSpectrum:
    S: np.ndarray
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return U @ np.diag(self.eigenvalues) @ U.T


def eig(S: np.ndarray, max_sweeps: int = 100, max_nodes: int = MAX_NODES) -> DenseSpectrum:
    """Symmetric eigendecomposition by cyclic Jacobi rotations."""
    S = np.array(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("expected a square matrix")
    if S.shape[0] > max_nodes:
        raise ValueError(f"dense oracle limited to {max_nodes} nodes, got {S.shape[0]}")
    if np.abs(S - S.T).max(initial=0.0) > 1e-10:
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (S + S.T)
    v = np.eye(len(a))
    scale = max(np.linalg.norm(a), 1e-300)
    _jacobi_sweeps(a, v, 1e-15 * scale, max_sweeps)
    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    return DenseSpectrum(S, lam[order], v[:, order])


def poly_response(lam, layers: int):
    """p_L(lam) = sum_{l=0..L} lam^l."""
    lam = np.asarray(lam, dtype=np.float64)
    return sum(lam ** l for l in range(layers + 1))


def spectral_filter(spectrum: DenseSpectrum, x0: np.ndarray, layers: int) -> np.ndarray:
    U = spectrum.eigenvectors
    return U @ (poly_response(spectrum.eigenvalues, layers)[:, None] * (U.T @ x0))


def check_polynomial_equivalence(bank: OperatorBank, x0: np.ndarray, layers: int) -> float:
    """Max |sparse propagation - eigenbasis filtering| over all scales and entries."""
    x0 = np.asarray(x0, dtype=np.float64)
    reps = propagate(bank, x0, layers)
    dev = 0.0
    for k in range(bank.K):
        spec = eig(bank.dense(k))
        dev = max(dev, float(np.abs(reps[k] - spectral_filter(spec, x0, layers)).max()))
    return dev


@dataclass(frozen=True)
class ResponseCheck:
    gains: np.ndarray
    deviation: float
    low_pass: bool


def check_spectral_response(spectrum: DenseSpectrum, x0: np.ndarray, layers: int) -> ResponseCheck:
    """Each eigencomponent of sum_l S^l x0 equals p_L(lam) times that of x0.

    The output side is computed by plain repeated dense products. Also checks
    that the gain is non-decreasing in lam over the non-negative eigenvalues.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    out = x0.copy()
    cur = x0
    for _ in range(layers):
        cur = spectrum.S @ cur
        out = out + cur
    U = spectrum.eigenvectors
    gains = poly_response(spectrum.eigenvalues, layers)
    dev = float(np.abs(U.T @ out - gains[:, None] * (U.T @ x0)).max())
    nonneg = spectrum.eigenvalues >= 0
    low_pass = bool(np.all(np.diff(gains[nonneg]) >= -1e-12))
    return ResponseCheck(gains, dev, low_pass)


def check_dirichlet(S: np.ndarray, A: np.ndarray, deg: np.ndarray, X: np.ndarray):
    """Return (trace form, edge-sum form) of the normalized Dirichlet energy.

    Both sides are taken over nodes with positive degree; isolated nodes have
    an all-zero row in S and no edges, so they are left out.
    """
    pos = np.asarray(deg) > 0
    S, A, X = S[np.ix_(pos, pos)], A[np.ix_(pos, pos)], np.asarray(X, dtype=np.float64)[pos]
    d = np.asarray(deg)[pos]
    trace = float(np.trace(X.T @ (np.eye(len(S)) - S) @ X))
    y = X / np.sqrt(d)[:, None]
    i, j = np.nonzero(A)
    edge = 0.5 * float((A[i, j] * ((y[i] - y[j]) ** 2).sum(axis=1)).sum())
    return trace, edge


def check_mixture_decomposition(bank: OperatorBank, g: np.ndarray, x0: np.ndarray, layers: int) -> float:
    """Max |fused propagation - sum_k g_k p_L(S_k) x0| with g per node (N, K) or shared (K,)."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim == 1:
        g = np.broadcast_to(g, (bank.n_nodes, len(g)))
    if g.shape != (bank.n_nodes, bank.K):
        raise ValueError(f"gate table must be ({bank.n_nodes}, {bank.K}), got {g.shape}")
    if np.any(g < 0) or np.abs(g.sum(axis=1) - 1.0).max() > 1e-9:
        raise ValueError("gate weights must lie on the simplex")
    x0 = np.asarray(x0, dtype=np.float64)
    fused = fuse_scales(propagate(bank, x0, layers), g)
    expect = np.zeros_like(x0)
    for k in range(bank.K):
        expect += g[:, k:k + 1] * spectral_filter(eig(bank.dense(k)), x0, layers)
    return float(np.abs(fused - expect).max())


# ---------------------------------------------------------------- random suite

def random_bipartite_view(rng: np.random.Generator, n_nodes: int) -> TrainView:
    """Random timestamped bipartite interactions; every node gets an edge."""
    n_users = int(rng.integers(1, n_nodes - 1)) if n_nodes > 2 else 1
    n_items = n_nodes - n_users
    us, its = [], []
    for u in range(n_users):
        k = int(rng.integers(1, min(4, n_items) + 1))
        for i in rng.choice(n_items, size=k, replace=False):
            us.append(u)
            its.append(int(i))
    for i in sorted(set(range(n_items)) - set(its)):
        us.append(int(rng.integers(n_users)))
        its.append(i)
    # a few repeated pairs exercise the max-weight collapse
    for _ in range(int(rng.integers(0, 3))):
        j = int(rng.integers(len(us)))
        us.append(us[j])
        its.append(its[j])
    times = rng.uniform(0.0, 60.0 * 86400.0, size=len(us))
    return TrainView(np.asarray(us), np.asarray(its), times, n_users, n_items)


@dataclass(frozen=True)
class CheckRow:
    check: str
    case: int
    value: float
    tolerance: float
    passed: bool


def run_suite(n_graphs: int = 50, seed: int = 0, min_nodes: int = 4, max_nodes: int = MAX_NODES) -> list:
    """Run every check on seeded random bipartite graphs; one row per check per graph."""
    rng = np.random.default_rng(seed)
    grid = (0.5, 1.0, 2.0, 4.0, 8.0)
    rows = []
    for case in range(n_graphs):
        n = int(rng.integers(min_nodes, max_nodes + 1))
        K = int(rng.integers(1, 4))
        L = int(rng.integers(0, 4))
        view = random_bipartite_view(rng, n)
        scales = sorted(rng.choice(grid, size=K, replace=False))
        bank = build_bank(view, scales)
        x0 = rng.normal(size=(n, 3))

        spec_err = orth_err = 0.0
        lam_ok = True
        resp_dev = 0.0
        low_pass = True
        dir_err = 0.0
        for k in range(K):
            S = bank.dense(k)
            spec = eig(S)
            Uv = spec.eigenvectors
            spec_err = max(spec_err, np.linalg.norm(spec.reconstruct() - S) / max(np.linalg.norm(S), 1e-300))
            orth_err = max(orth_err, np.linalg.norm(Uv.T @ Uv - np.eye(n)))
            lam_ok &= bool(np.all(np.abs(spec.eigenvalues) <= 1 + TOL))
            resp = check_spectral_response(spec, x0, L)
            resp_dev = max(resp_dev, resp.deviation)
            low_pass &= resp.low_pass
            tr, edge = check_dirichlet(S, bank.raw_dense(k), bank.degrees[k], x0)
            dir_err = max(dir_err, abs(tr - edge) / max(abs(tr), abs(edge), 1e-300))
        g = rng.dirichlet(np.ones(K), size=n)
        rows += [
            CheckRow("eig_reconstruction", case, spec_err, TOL, spec_err <= TOL),
            CheckRow("eig_orthonormality", case, orth_err, TOL, orth_err <= TOL),
            CheckRow("eigenvalues_in_[-1,1]", case, float(not lam_ok), 0.0, lam_ok),
            CheckRow("polynomial_equivalence", case, check_polynomial_equivalence(bank, x0, L), TOL, None),
            CheckRow("spectral_response", case, resp_dev, TOL, resp_dev <= TOL and low_pass),
            CheckRow("dirichlet_identity", case, dir_err, TOL, dir_err <= TOL),
            CheckRow("mixture_decomposition", case, check_mixture_decomposition(bank, g, x0, L), TOL, None),
        ]
    return [r if r.passed is not None else CheckRow(r.check, r.case, r.value, r.tolerance, r.value <= r.tolerance)
            for r in rows]
