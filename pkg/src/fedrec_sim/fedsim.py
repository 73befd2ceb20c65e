"""Single-process simulation of federated MF training.

The server owns ``V``; each benign client owns its vector ``u`` and its
interaction data. Malicious clients are driven by an attack hook that only
ever sees a read-only copy of ``V``, the learning rate, the iteration counter
and the ids of the malicious clients selected this round.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .data import Dataset, Split
from .metrics import MetricSnapshot, evaluate
from .model import SparseRows, bpr_gradients, init_embeddings, scatter_add_rows

log = logging.getLogger(__name__)


class ConstraintViolation(RuntimeError):
    """A malicious upload broke the row-count or row-norm bound."""


@dataclass
class GradientUpdate:
    sender: int
    grad: SparseRows

    @property
    def rows(self) -> np.ndarray:
        return self.grad.rows

    @property
    def values(self) -> np.ndarray:
        return self.grad.values


@dataclass
class ClientState:
    user: int
    u: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    is_malicious: bool = False

    @property
    def pairs(self) -> np.ndarray:
        n = min(self.positives.size, self.negatives.size)
        return np.column_stack([self.positives[:n], self.negatives[:n]])


@dataclass
class ServerState:
    V: np.ndarray
    eta: float
    t: int = 0


@dataclass
class RoundReport:
    t: int
    epoch: int
    benign: list[int]
    malicious: list[int]
    metrics: MetricSnapshot | None = None

    def as_record(self) -> dict:
        rec = {"t": self.t, "epoch": self.epoch}
        if self.metrics is not None:
            rec.update({k: v for k, v in self.metrics.as_record().items() if k != "t"})
        return rec


class AttackHook(Protocol):
    def malicious_updates(self, V: np.ndarray, eta: float, t: int,
                          malicious: Sequence[int]) -> list[GradientUpdate]:
        ...


@dataclass
class TrainingConfig:
    k: int = 32
    eta: float = 0.01
    C: float = 1.0
    mu: float = 0.0
    epochs: int = 200
    batch_size: int = 256
    n_malicious: int = 0
    kappa: int = 60
    seed: int = 0
    eval_every: int = 10
    ks: tuple[int, ...] = (5, 10)
    resample_negatives: bool = False
    validate: bool = False


def sample_negatives(positives: np.ndarray, n_items: int, rng: np.random.Generator,
                     count: int | None = None) -> np.ndarray:
    """Uniform draw without replacement from the items not in ``positives``."""
    pos = np.unique(positives)
    n_free = n_items - pos.size
    count = pos.size if count is None else count
    ranks = rng.choice(n_free, size=min(count, n_free), replace=False)
    # map the r-th free slot to its item id by skipping the positives below it
    return ranks + np.searchsorted(pos - np.arange(pos.size), ranks, side="right")


def make_client(user: int, positives: np.ndarray, n_items: int, k: int,
                rng: np.random.Generator, is_malicious: bool = False) -> ClientState:
    u = init_embeddings(1, k, rng)[0]
    negs = sample_negatives(positives, n_items, rng)
    return ClientState(user, u, np.asarray(positives, dtype=np.int64), negs, is_malicious)


def select_batch(n_benign: int, n_malicious: int, batch_size: int,
                 rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """Uniform batch without replacement; malicious ids follow the benign ones."""
    total = n_benign + n_malicious
    if not 1 <= batch_size <= total:
        raise ValueError(f"batch_size must lie in [1, {total}], got {batch_size}")
    picked = np.sort(rng.choice(total, size=batch_size, replace=False))
    return [int(i) for i in picked if i < n_benign], [int(i) for i in picked if i >= n_benign]


def epoch_batches(n_clients: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One shuffled pass in which every client is selected exactly once."""
    perm = rng.permutation(n_clients)
    return [np.sort(perm[s:s + batch_size]) for s in range(0, n_clients, batch_size)]


def clip_rows(values: np.ndarray, C: float) -> np.ndarray:
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    scale = np.minimum(1.0, C / np.maximum(norms, 1e-300))
    return values * scale


def client_rng(seed: int, client: int, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, client, t])


def benign_client_step(client: ClientState, V: np.ndarray, eta: float, C: float,
                       mu: float, rng: np.random.Generator | None) -> GradientUpdate:
    """Local BPR step: clip item rows to ``C``, add ``N(0, mu^2 C^2)`` noise, update ``u``."""
    grad_u, grad_V = bpr_gradients(client.u, V, client.pairs)
    values = clip_rows(grad_V.values, C)
    if mu > 0.0:
        values = values + rng.normal(0.0, mu * C, size=values.shape)
    client.u = client.u - eta * grad_u
    return GradientUpdate(client.user, SparseRows(grad_V.rows, values))


def check_constraints(update: GradientUpdate, kappa: int, C: float) -> None:
    nz = np.any(update.values != 0.0, axis=1)
    if nz.sum() > kappa:
        raise ConstraintViolation(f"client {update.sender}: {nz.sum()} non-zero rows > kappa={kappa}")
    norms = update.grad.row_norms()
    if norms.size and norms.max() > C * (1 + 1e-9):
        raise ConstraintViolation(f"client {update.sender}: row norm {norms.max():.6g} > C={C}")


def aggregate(server: ServerState, updates: Sequence[GradientUpdate]) -> None:
    """``V <- V - eta * sum(updates)``, reduced in ascending sender order."""
    m = server.V.shape[0]
    ordered = sorted(updates, key=lambda u: u.sender)
    if ordered:
        rows = np.concatenate([u.rows for u in ordered])
        if rows.size:
            if rows.min() < 0 or rows.max() >= m:
                raise IndexError(f"update row index out of range [0, {m})")
            vals = np.concatenate([u.values for u in ordered])
            scatter_add_rows(server.V, rows, -server.eta * vals)
    server.t += 1


class Federation:
    """Server plus benign client population built from a training split."""

    def __init__(self, train: Dataset, cfg: TrainingConfig):
        self.cfg = cfg
        self.n_items = train.n_items
        self.rng = np.random.default_rng(cfg.seed)
        self.server = ServerState(init_embeddings(train.n_items, cfg.k, self.rng), cfg.eta)
        self.clients = [make_client(u, pos, train.n_items, cfg.k, self.rng)
                        for u, pos in enumerate(train.positives)]
        self.n_benign = len(self.clients)

    def user_matrix(self) -> np.ndarray:
        """Stacked benign user vectors; evaluation-only, never handed to an attack."""
        return np.vstack([c.u for c in self.clients])

    def resample_negatives(self) -> None:
        for c in self.clients:
            c.negatives = sample_negatives(c.positives, self.n_items, self.rng)

    def run_round(self, benign: Sequence[int], malicious: Sequence[int],
                  attack: AttackHook | None) -> None:
        cfg, server = self.cfg, self.server
        V = server.V
        updates = []
        for uid in benign:
            rng = client_rng(cfg.seed, uid, server.t) if cfg.mu > 0 else None
            updates.append(benign_client_step(self.clients[uid], V, cfg.eta, cfg.C, cfg.mu, rng))
        if malicious and attack is not None:
            shared = V.copy()
            shared.flags.writeable = False
            bad = attack.malicious_updates(shared, cfg.eta, server.t, list(malicious))
            if cfg.validate:
                allowed = set(malicious)
                for upd in bad:
                    if upd.sender not in allowed:
                        raise ConstraintViolation(f"upload from unselected client {upd.sender}")
                    check_constraints(upd, cfg.kappa, cfg.C)
            updates.extend(bad)
        aggregate(server, updates)


def run_training(cfg: TrainingConfig, split: Split, attack: AttackHook | None = None,
                 targets: Sequence[int] | None = None,
                 on_eval: Callable[[RoundReport], None] | None = None,
                 federation: Federation | None = None) -> tuple[ServerState, list[RoundReport]]:
    """Train for ``cfg.epochs`` shuffled passes over benign plus malicious clients.

    Metrics are evaluated before training, every ``cfg.eval_every`` epochs
    and after the last epoch; they are attached to the matching report.
    """
    fed = federation or Federation(split.train, cfg)
    n_total = fed.n_benign + cfg.n_malicious
    batch = max(1, min(cfg.batch_size, n_total))
    reports: list[RoundReport] = []

    def snapshot(epoch: int, report: RoundReport) -> None:
        report.metrics = evaluate(fed.user_matrix(), fed.server.V, split.train.positives,
                                  split.test, targets, ks=cfg.ks, t=fed.server.t)
        if on_eval is not None:
            on_eval(report)

    start = RoundReport(t=0, epoch=0, benign=[], malicious=[])
    snapshot(0, start)
    reports.append(start)

    for epoch in range(1, cfg.epochs + 1):
        if cfg.resample_negatives and epoch > 1:
            fed.resample_negatives()
        for ids in epoch_batches(n_total, batch, fed.rng):
            benign = [int(i) for i in ids if i < fed.n_benign]
            malicious = [int(i) for i in ids if i >= fed.n_benign]
            fed.run_round(benign, malicious, attack)
            reports.append(RoundReport(fed.server.t, epoch, benign, malicious))
        if epoch == cfg.epochs or (cfg.eval_every and epoch % cfg.eval_every == 0):
            snapshot(epoch, reports[-1])
        log.debug("epoch %d done (t=%d)", epoch, fed.server.t)
    return fed.server, reports
