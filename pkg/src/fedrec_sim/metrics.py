"""Exposure ratio, target NDCG and leave-one-out hit ratio over full rankings.

All functions take the stacked benign user matrix ``U`` (row ``i`` is user
``i``'s private vector, gathered out of band for evaluation only) and rank
every item the user has not interacted with in train.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import top_k_rows


@dataclass
class MetricSnapshot:
    t: int
    er: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    hr: dict[int, float] = field(default_factory=dict)

    def as_record(self) -> dict:
        rec = {"t": self.t}
        rec.update({f"ER@{k}": v for k, v in sorted(self.er.items())})
        rec.update({f"NDCG@{k}": v for k, v in sorted(self.ndcg.items())})
        rec.update({f"HR@{k}": v for k, v in sorted(self.hr.items())})
        return rec


def masked_scores(U: np.ndarray, V: np.ndarray, positives) -> np.ndarray:
    """``U @ V.T`` with each user's own positives set to ``-inf``."""
    scores = U @ V.T
    lens = [p.size for p in positives]
    if sum(lens):
        users = np.repeat(np.arange(len(positives)), lens)
        scores[users, np.concatenate(positives)] = -np.inf
    return scores


def _target_hits(top: np.ndarray, positives, targets) -> tuple[np.ndarray, np.ndarray]:
    """Per user: boolean hit matrix over the top list, and |targets \\ V_i^+|."""
    targets = np.asarray(sorted(set(int(t) for t in targets)), dtype=np.int64)
    if targets.size == 0:
        raise ValueError("at least one target item is required")
    hits = np.isin(top, targets)
    avail = np.array([targets.size - np.isin(targets, p).sum() for p in positives])
    return hits, avail


def exposure_ratio(U, V, positives, targets, K: int) -> float:
    top = top_k_rows(masked_scores(U, V, positives), K)
    hits, avail = _target_hits(top, positives, targets)
    return _er_from_hits(hits, avail, K)


def _er_from_hits(hits: np.ndarray, avail: np.ndarray, K: int) -> float:
    n_hit = hits[:, :K].sum(axis=1)
    ratio = np.divide(n_hit, avail, out=np.zeros(len(avail)), where=avail > 0)
    return float(ratio.mean()) if len(avail) else 0.0


def _ndcg_from_hits(hits: np.ndarray, avail: np.ndarray, K: int) -> float:
    disc = 1.0 / np.log2(np.arange(2, K + 2))
    dcg = hits[:, :K] @ disc
    cum = np.concatenate([[0.0], np.cumsum(disc)])
    idcg = cum[np.minimum(avail, K)]
    vals = np.divide(dcg, idcg, out=np.zeros(len(avail)), where=idcg > 0)
    return float(vals.mean()) if len(avail) else 0.0


def ndcg_targets(U, V, positives, targets, K: int) -> float:
    """Binary-relevance NDCG@K with the target items as the relevant set."""
    top = top_k_rows(masked_scores(U, V, positives), K)
    hits, avail = _target_hits(top, positives, targets)
    return _ndcg_from_hits(hits, avail, K)


def _hr_from_top(top: np.ndarray, test: dict[int, int], K: int) -> float:
    if not test:
        raise ValueError("split has no test entries")
    users = np.fromiter(test.keys(), dtype=np.int64)
    held = np.fromiter(test.values(), dtype=np.int64)
    return float(np.mean(np.any(top[users, :K] == held[:, None], axis=1)))


def hit_ratio(U, V, positives, test: dict[int, int], K: int) -> float:
    top = top_k_rows(masked_scores(U, V, positives), K)
    return _hr_from_top(top, test, K)


def evaluate(U, V, positives, test, targets, ks=(5, 10), t: int = 0,
             hr_ks=(10,), ndcg_ks=(10,)) -> MetricSnapshot:
    """All metrics from a single full ranking at ``max(K)``."""
    kmax = max([*ks, *hr_ks, *ndcg_ks])
    top = top_k_rows(masked_scores(U, V, positives), kmax)
    snap = MetricSnapshot(t)
    if targets is not None and len(targets):
        hits, avail = _target_hits(top, positives, targets)
        snap.er = {K: _er_from_hits(hits, avail, K) for K in ks}
        snap.ndcg = {K: _ndcg_from_hits(hits, avail, K) for K in ndcg_ks}
    if test:
        snap.hr = {K: _hr_from_top(top, test, K) for K in hr_ks}
    return snap
