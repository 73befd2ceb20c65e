"""Attack strategies that drive the malicious clients of a federation.

:class:`FedRecAttack` fabricates item-gradient uploads from an estimate of
the private user matrix fitted on public interactions. The shilling
baselines (:class:`ShillingAttack`) instead inject fake profiles and let
their clients train on them like ordinary users.

Every strategy implements ``malicious_updates(V, eta, t, malicious)``; none
of them is handed benign client state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import PublicView
from .fedsim import GradientUpdate, benign_client_step, clip_rows, make_client
from .model import SparseRows, init_embeddings, sigmoid, top_k_rows

log = logging.getLogger(__name__)


def g(x):
    """Identity above zero, ``e^x - 1`` below; bounded below by -1."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))
    return out if out.ndim else float(out)


def g_prime(x):
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))
    return out if out.ndim else float(out)


class NullAttack:
    """Malicious clients (if any) upload nothing."""

    def malicious_updates(self, V, eta, t, malicious):
        return []


@dataclass
class AttackContext:
    public: PublicView
    targets: np.ndarray
    n_items: int
    k: int
    K: int = 10
    zeta: float = 1.0
    kappa: int = 60
    C: float = 1.0
    inner_steps: int = 30
    inner_lr: float = 0.01
    U_hat: np.ndarray | None = None
    residual: np.ndarray | None = None
    item_sets: dict[int, np.ndarray] = field(default_factory=dict)
    skipped_terms: int = 0

    def __post_init__(self):
        self.targets = np.unique(np.asarray(self.targets, dtype=np.int64))
        if self.targets.size == 0:
            raise ValueError("at least one target item is required")
        if self.kappa < self.targets.size:
            raise ValueError("kappa must be at least the number of targets")

    @property
    def n_users(self) -> int:
        return len(self.public.positives)

    @property
    def applicable(self) -> bool:
        return len(self.public) > 0


def public_mask(public: PublicView, n_items: int) -> np.ndarray:
    mask = np.zeros((len(public.positives), n_items), dtype=bool)
    for u, p in enumerate(public.positives):
        mask[u, p] = True
    return mask


def approximate_user_matrix(ctx: AttackContext, V: np.ndarray, steps: int, inner_lr: float,
                            rng: np.random.Generator) -> np.ndarray:
    """Fit the estimated user rows to the public interactions with ``V`` held fixed.

    Each sweep pairs every public positive with a fresh negative drawn from
    the items that user has not publicly interacted with, then takes one
    gradient step on the summed BPR loss of every user. Users without public
    interactions keep their current row.
    """
    if ctx.U_hat is None:
        ctx.U_hat = init_embeddings(ctx.n_users, ctx.k, rng)
    if steps <= 0 or not ctx.applicable:
        return ctx.U_hat
    lens = np.array([p.size for p in ctx.public.positives])
    users = np.repeat(np.arange(ctx.n_users), lens)
    pos = np.concatenate(ctx.public.positives)
    mask = public_mask(ctx.public, ctx.n_items)
    U = ctx.U_hat
    for _ in range(steps):
        neg = rng.integers(ctx.n_items, size=pos.size)
        clash = mask[users, neg]
        while clash.any():
            neg[clash] = rng.integers(ctx.n_items, size=int(clash.sum()))
            clash = mask[users, neg]
        diff = V[pos] - V[neg]
        w = sigmoid(-np.einsum("ij,ij->i", U[users], diff))
        grad = np.zeros_like(U)
        np.add.at(grad, users, -w[:, None] * diff)
        U -= inner_lr * grad
    return U


@dataclass
class _AttackTerms:
    """The (user, target, threshold item) triples of the attack loss, frozen."""

    users: np.ndarray
    targets: np.ndarray
    thresholds: np.ndarray
    skipped: int


def _attack_terms(U_hat: np.ndarray, V: np.ndarray, public: PublicView, targets: np.ndarray,
                  K: int) -> _AttackTerms:
    scores = U_hat @ V.T
    mask = public_mask(public, V.shape[0])
    scores[mask] = -np.inf
    top = top_k_rows(scores, K)
    is_tar = np.isin(top, targets)
    # lowest-ranked non-target item of each list = the min-score non-target
    rank = np.where(is_tar, -1, np.arange(K)[None, :])
    last = rank.max(axis=1)
    has_thr = last >= 0
    thr = top[np.arange(top.shape[0]), np.maximum(last, 0)]

    users, tars, thrs, skipped = [], [], [], 0
    for t in targets:
        open_ = ~mask[:, t]
        ok = open_ & has_thr
        skipped += int(np.sum(open_ & ~has_thr))
        idx = np.flatnonzero(ok)
        users.append(idx)
        tars.append(np.full(idx.size, t, dtype=np.int64))
        thrs.append(thr[idx])
    return _AttackTerms(np.concatenate(users), np.concatenate(tars), np.concatenate(thrs), skipped)


def attack_loss(U_hat: np.ndarray, V: np.ndarray, public: PublicView, targets, K: int,
                terms: _AttackTerms | None = None) -> float:
    """Smooth surrogate of target exposure over the public view.

    Per (user, target) with the target not publicly interacted:
    ``g(min non-target score in the user's estimated top-K - target score)``.
    Pass ``terms`` to evaluate with the top-K sets and min items frozen.
    """
    targets = np.unique(np.asarray(targets, dtype=np.int64))
    if terms is None:
        terms = _attack_terms(U_hat, V, public, targets, K)
    Uu = U_hat[terms.users]
    z = np.einsum("ij,ij->i", Uu, V[terms.thresholds]) - np.einsum("ij,ij->i", Uu, V[terms.targets])
    return float(np.sum(g(z)))


def attack_loss_grad(U_hat: np.ndarray, V: np.ndarray, terms: _AttackTerms) -> np.ndarray:
    """Dense ``d loss / dV`` with the top-K sets and min items held fixed."""
    Uu = U_hat[terms.users]
    z = np.einsum("ij,ij->i", Uu, V[terms.thresholds]) - np.einsum("ij,ij->i", Uu, V[terms.targets])
    w = g_prime(z)[:, None] * Uu
    grad = np.zeros_like(V)
    np.add.at(grad, terms.thresholds, w)
    np.add.at(grad, terms.targets, -w)
    return grad


def poisoned_gradient(ctx: AttackContext, U_hat: np.ndarray, V: np.ndarray, K: int | None = None) -> np.ndarray:
    """``zeta`` times the attack-loss gradient w.r.t. ``V`` (dense ``m x k``)."""
    K = ctx.K if K is None else K
    if ctx.zeta == 0.0 or not ctx.applicable:
        return np.zeros_like(V)
    terms = _attack_terms(U_hat, V, ctx.public, ctx.targets, K)
    if terms.skipped:
        ctx.skipped_terms += terms.skipped
        log.debug("skipped %d attack terms with all-target top-K", terms.skipped)
    return ctx.zeta * attack_loss_grad(U_hat, V, terms)


def select_item_set(ctx: AttackContext, residual: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Targets plus ``kappa - |targets|`` items drawn by residual row norm, without replacement.

    When fewer non-target rows are non-zero than there are slots, all of them
    are taken and the rest is filled uniformly from the other non-targets.
    """
    need = min(ctx.kappa, ctx.n_items) - ctx.targets.size
    norms = np.linalg.norm(residual, axis=1)
    norms[ctx.targets] = 0.0
    cand = np.flatnonzero(norms > 0)
    if cand.size >= need:
        picked = rng.choice(cand, size=need, replace=False, p=norms[cand] / norms[cand].sum())
    else:
        rest = np.setdiff1d(np.arange(ctx.n_items), np.concatenate([cand, ctx.targets]))
        pad = rng.choice(rest, size=min(need - cand.size, rest.size), replace=False)
        picked = np.concatenate([cand, pad])
    return np.sort(np.concatenate([ctx.targets, picked.astype(np.int64)]))


def clip_and_assign(ctx: AttackContext, client: int) -> GradientUpdate:
    """Residual rows of the client's item set, each clipped to norm ``C``."""
    items = ctx.item_sets[client]
    vals = clip_rows(ctx.residual[items], ctx.C)
    nz = np.any(vals != 0.0, axis=1)
    return GradientUpdate(client, SparseRows(items[nz], vals[nz]))


def update_residual(ctx: AttackContext, upload: GradientUpdate) -> None:
    ctx.residual[upload.rows] -= upload.values


def fedrecattack_round(ctx: AttackContext, malicious: Sequence[int], V: np.ndarray,
                       eta: float, rng: np.random.Generator) -> list[GradientUpdate]:
    """One iteration of the attack for the selected malicious clients.

    Refreshes the user estimate, recomputes the poisoned gradient, then lets
    each client (ascending id) upload its clipped share and subtracts it.
    """
    if not malicious:
        return []
    if not ctx.applicable:
        return [GradientUpdate(c, SparseRows.empty(ctx.k)) for c in sorted(malicious)]
    approximate_user_matrix(ctx, V, ctx.inner_steps, ctx.inner_lr, rng)
    ctx.residual = poisoned_gradient(ctx, ctx.U_hat, V)
    out = []
    for c in sorted(malicious):
        if c not in ctx.item_sets:
            ctx.item_sets[c] = select_item_set(ctx, ctx.residual, rng)
        upload = clip_and_assign(ctx, c)
        update_residual(ctx, upload)
        out.append(upload)
    return out


class FedRecAttack:
    """Model-poisoning strategy wrapping an :class:`AttackContext`."""

    def __init__(self, ctx: AttackContext, seed: int = 0):
        self.ctx = ctx
        self.rng = np.random.default_rng(seed)

    def malicious_updates(self, V, eta, t, malicious):
        return fedrecattack_round(self.ctx, malicious, V, eta, self.rng)


@dataclass
class FakeProfile:
    owner: int
    positives: np.ndarray


def build_fake_profiles(kind: str, item_counts: np.ndarray, targets, kappa: int, owners: Sequence[int],
                        rng: np.random.Generator) -> list[FakeProfile]:
    """Fake positive sets of size ``floor(kappa/2)`` holding every target.

    ``random`` fills uniformly from non-targets; ``bandwagon`` takes
    ``round(0.1 * fillers)`` from the 10% most-interacted items and the rest
    from the others; ``popular`` uses the most-interacted non-targets for
    every profile.
    """
    targets = np.unique(np.asarray(targets, dtype=np.int64))
    size = kappa // 2
    n_fill = size - targets.size
    if n_fill < 0:
        raise ValueError("floor(kappa/2) must be at least the number of targets")
    m = item_counts.size
    non_target = np.setdiff1d(np.arange(m), targets)
    # most interacted first, ties by ascending index
    by_pop = non_target[np.lexsort((non_target, -item_counts[non_target]))]

    profiles = []
    for owner in owners:
        if kind == "random":
            fill = rng.choice(non_target, size=n_fill, replace=False)
        elif kind == "bandwagon":
            n_pop_items = int(np.floor(0.1 * m + 0.5))
            pop = np.setdiff1d(np.lexsort((np.arange(m), -item_counts))[:n_pop_items], targets)
            others = np.setdiff1d(non_target, pop)
            n_pop = min(int(np.floor(0.1 * n_fill + 0.5)), pop.size)
            fill = np.concatenate([rng.choice(pop, size=n_pop, replace=False),
                                   rng.choice(others, size=n_fill - n_pop, replace=False)])
        elif kind == "popular":
            fill = by_pop[:n_fill]
        else:
            raise ValueError(f"unknown shilling attack {kind!r}")
        profiles.append(FakeProfile(int(owner), np.sort(np.concatenate([targets, fill]).astype(np.int64))))
    return profiles


class ShillingAttack:
    """Fake-profile injection: malicious clients train honestly on fabricated positives.

    They use the federation's local BPR step with clipping but skip the
    privacy noise, since the attacker controls them.
    """

    def __init__(self, kind: str, item_counts: np.ndarray, targets, kappa: int, owners: Sequence[int],
                 k: int, C: float, seed: int = 0):
        self.kind = kind
        self.C = C
        rng = np.random.default_rng(seed)
        self.profiles = build_fake_profiles(kind, item_counts, targets, kappa, owners, rng)
        n_items = item_counts.size
        self.clients = {p.owner: make_client(p.owner, p.positives, n_items, k, rng, is_malicious=True)
                        for p in self.profiles}

    def malicious_updates(self, V, eta, t, malicious):
        return [benign_client_step(self.clients[c], V, eta, self.C, 0.0, None) for c in sorted(malicious)]
