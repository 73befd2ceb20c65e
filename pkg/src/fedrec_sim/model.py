"""Dot-product matrix factorisation trained with pairwise BPR loss.

Item gradients are returned as :class:`SparseRows` so that a client upload
only carries the rows it actually touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SparseRows:
    """Row-indexed sparse view of an ``m x k`` gradient.

    ``rows`` are unique item indices in ascending order; ``values[r]`` is the
    gradient row for item ``rows[r]``. Rows not listed are zero.
    """

    rows: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls, k: int) -> "SparseRows":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, k)))

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparseRows":
        nz = np.flatnonzero(np.any(dense != 0.0, axis=1))
        return cls(nz.astype(np.int64), dense[nz].copy())

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    def to_dense(self, n_rows: int) -> np.ndarray:
        out = np.zeros((n_rows, self.values.shape[1]))
        out[self.rows] = self.values
        return out

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=1)


def sigmoid(x):
    """Logistic function, branch-stable for large ``|x|``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softplus(x):
    """``ln(1 + e^x)`` without overflow; equals ``-ln sigmoid(-x)``."""
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def init_embeddings(rows: int, k: int, rng: np.random.Generator) -> np.ndarray:
    bound = 0.5 / np.sqrt(k)
    return rng.uniform(-bound, bound, size=(rows, k))


def predict_score(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: user {u.shape} vs item {v.shape}")
    return float(u @ v)


def _pair_margins(u: np.ndarray, V: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return V[pairs[:, 0]] @ u - V[pairs[:, 1]] @ u


def bpr_loss(u: np.ndarray, V: np.ndarray, pairs: np.ndarray) -> float:
    """Sum of ``-ln sigmoid(x_pos - x_neg)`` over the (positive, negative) pairs."""
    return float(np.sum(softplus(-_pair_margins(u, V, pairs))))


def bpr_gradients(u: np.ndarray, V: np.ndarray, pairs: np.ndarray) -> tuple[np.ndarray, SparseRows]:
    """Analytic gradients of :func:`bpr_loss` w.r.t. ``u`` and the touched rows of ``V``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    k = V.shape[1]
    if pairs.shape[0] == 0:
        return np.zeros(k), SparseRows.empty(k)
    pos, neg = pairs[:, 0], pairs[:, 1]
    diff = V[pos] - V[neg]
    w = sigmoid(-(diff @ u))  # sigma(-x_ijk)
    grad_u = -(w @ diff)

    items = np.concatenate([pos, neg])
    coef = np.concatenate([-w, w])
    rows, inv = np.unique(items, return_inverse=True)
    acc = np.bincount(inv, weights=coef, minlength=rows.shape[0])
    return grad_u, SparseRows(rows, np.outer(acc, u))


def scatter_add_rows(target: np.ndarray, rows: np.ndarray, values: np.ndarray) -> None:
    """``target[rows] += values`` with repeated rows summed in input order."""
    if rows.size == 0:
        return
    order = np.argsort(rows, kind="stable")
    srows = rows[order]
    starts = np.flatnonzero(np.r_[True, srows[1:] != srows[:-1]])
    target[srows[starts]] += np.add.reduceat(values[order], starts, axis=0)


def top_k_rows(scores: np.ndarray, K: int) -> np.ndarray:
    """Per-row indices of the ``K`` largest scores, best first.

    Ties are broken by ascending column index. Excluded entries should be set
    to ``-inf`` by the caller; a row with fewer than ``K`` finite entries is
    an error.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    n, m = scores.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > m or np.any(np.sum(np.isfinite(scores), axis=1) < K):
        raise ValueError(f"fewer than K={K} candidate items")
    if K == m:
        return np.argsort(-scores, axis=1, kind="stable")
    part = np.argpartition(-scores, K - 1, axis=1)[:, :K]
    vals = np.take_along_axis(scores, part, axis=1)
    kth = vals.min(axis=1)
    # argpartition picks arbitrary members of a tie straddling the cut-off
    n_tied_total = np.sum(scores == kth[:, None], axis=1)
    n_tied_taken = np.sum(vals == kth[:, None], axis=1)
    bad = np.flatnonzero(n_tied_total != n_tied_taken)
    if bad.size:
        part[bad] = np.argsort(-scores[bad], axis=1, kind="stable")[:, :K]
        vals[bad] = np.take_along_axis(scores[bad], part[bad], axis=1)
    order = np.lexsort((part, -vals), axis=-1)
    return np.take_along_axis(part, order, axis=1)


def top_k_items(u: np.ndarray, V: np.ndarray, excluded, K: int) -> list[int]:
    """Top-``K`` items for one user, skipping ``excluded`` item indices."""
    scores = V @ np.asarray(u, dtype=float)
    excluded = np.fromiter(excluded, dtype=np.int64) if not isinstance(excluded, np.ndarray) else excluded
    scores[excluded] = -np.inf
    return top_k_rows(scores[None, :], K)[0].tolist()
