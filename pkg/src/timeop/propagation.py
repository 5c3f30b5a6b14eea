"""Layer-summed sparse propagation over every operator of a bank, and its adjoint."""

from __future__ import annotations

import numba
import numpy as np
import scipy.sparse as sp

from .operators import OperatorBank


@numba.njit(cache=True)
def csr_matmul(indptr, indices, data, x, out):
    """``out = A @ x`` for CSR ``A`` and row-major dense ``x``; rows are independent."""
    n, w = out.shape
    for r in range(n):
        for j in range(w):
            out[r, j] = 0.0
        for p in range(indptr[r], indptr[r + 1]):
            c = indices[p]
            v = data[p]
            for j in range(w):
                out[r, j] += v * x[c, j]
    return out


def _power_sum(bank: OperatorBank, k: int, x: np.ndarray, layers: int) -> np.ndarray:
    t = bank.topology
    out = np.array(x, dtype=np.float64, order="C", copy=True)
    cur = out.copy()
    nxt = np.empty_like(out)
    for _ in range(layers):
        csr_matmul(t.indptr, t.indices, bank.values[k], cur, nxt)
        out += nxt
        cur, nxt = nxt, cur
    return out


def propagate(bank: OperatorBank, x0: np.ndarray, layers: int) -> np.ndarray:
    """Return ``h[k] = sum_{l=0..L} S_k^l x0`` for every scale, shape (K, N, W).

    ``x0`` may be float32; all products accumulate in float64. Several
    modalities are propagated at once by stacking them along the columns.
    """
    if layers < 0:
        raise ValueError("layers must be >= 0")
    if x0.shape[0] != bank.n_nodes:
        raise ValueError(f"embedding table has {x0.shape[0]} rows, bank has {bank.n_nodes} nodes")
    x = np.asarray(x0, dtype=np.float64)
    return np.stack([_power_sum(bank, k, x, layers) for k in range(bank.K)])


def propagate_adjoint(bank: OperatorBank, grads: np.ndarray, layers: int) -> np.ndarray:
    """Gradient w.r.t. ``x0`` given gradients w.r.t. every ``h[k]``.

    The operators are symmetric, so the adjoint of the layer sum is the layer
    sum itself; contributions of all scales are added.
    """
    if grads.ndim != 3 or grads.shape[0] != bank.K or grads.shape[1] != bank.n_nodes:
        raise ValueError(f"expected gradients of shape ({bank.K}, {bank.n_nodes}, W), got {grads.shape}")
    out = np.zeros(grads.shape[1:])
    for k in range(bank.K):
        out += _power_sum(bank, k, grads[k], layers)
    return out


def scatter_rows(n_rows: int, index, values: np.ndarray) -> np.ndarray:
    """Sum ``values[b]`` into row ``index[b]`` of an (n_rows, W) zero array.

    Done as a sparse product, which is faster than ``np.add.at`` and sums each
    row in a fixed order.
    """
    index = np.asarray(index)
    sel = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(n_rows, len(index)))
    return np.asarray(sel @ values)
