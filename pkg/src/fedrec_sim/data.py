"""Interaction-log ingestion, implicit-feedback datasets and the derived splits.

Raw tokens are reindexed densely by first appearance. Each user's positives
are stored as a sorted ``int64`` array; pair-set views are built on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """A line of an interaction file does not match the declared format."""


@dataclass(frozen=True)
class RawInteraction:
    user: str
    item: str
    weight: float | None = None


@dataclass
class Dataset:
    n_users: int
    n_items: int
    positives: list[np.ndarray]
    user_map: list[str] = field(default_factory=list)
    item_map: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(sum(p.size for p in self.positives))

    def pairs(self) -> np.ndarray:
        """All interactions as an ``(|D|, 2)`` array of (user, item) indices."""
        if not self.positives:
            return np.zeros((0, 2), dtype=np.int64)
        users = np.repeat(np.arange(self.n_users), [p.size for p in self.positives])
        return np.column_stack([users, np.concatenate(self.positives)]).astype(np.int64)

    def pair_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(i)) for u, i in self.pairs()}

    def item_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_items, dtype=np.int64)
        for p in self.positives:
            counts[p] += 1
        return counts


@dataclass
class Split:
    train: Dataset
    test: dict[int, int]
    seed: int | None = None


@dataclass
class PublicView:
    """Attacker-visible interactions, stored per user."""

    positives: list[np.ndarray]
    xi: float

    def __len__(self) -> int:
        return int(sum(p.size for p in self.positives))

    def pair_set(self) -> set[tuple[int, int]]:
        return {(u, int(i)) for u, p in enumerate(self.positives) for i in p}


_FORMATS = ("movielens_tab", "csv")


def _parse_weight(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise DataFormatError(f"line {lineno}: weight {tok!r} is not a number") from None


def load_interactions(path, format: str = "movielens_tab") -> list[RawInteraction]:
    """Read ``user, item[, weight[, timestamp]]`` records from a text file.

    ``movielens_tab`` lines are tab separated; ``csv`` lines are comma
    separated with an optional ``user,item,...`` header on the first line.
    Blank lines are skipped.
    """
    if format not in _FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {_FORMATS}")
    sep = "\t" if format == "movielens_tab" else ","
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read interaction file {path}: {exc}") from exc

    out: list[RawInteraction] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(sep)]
        if lineno == 1 and format == "csv" and _looks_like_header(fields):
            continue
        if not 2 <= len(fields) <= 4:
            raise DataFormatError(f"line {lineno}: expected 2-4 fields, got {len(fields)}")
        user, item = fields[0], fields[1]
        if not user or not item:
            raise DataFormatError(f"line {lineno}: empty user or item token")
        weight = _parse_weight(fields[2], lineno) if len(fields) >= 3 and fields[2] else None
        out.append(RawInteraction(user, item, weight))
    return out


def _looks_like_header(fields: list[str]) -> bool:
    return len(fields) >= 2 and fields[0].lower().startswith("user") and fields[1].lower().startswith("item")


def build_dataset(raw: list[RawInteraction]) -> Dataset:
    """Reindex tokens by first appearance and collapse duplicate interactions."""
    if not raw:
        raise ValueError("cannot build a dataset from zero interactions")
    user_idx: dict[str, int] = {}
    item_idx: dict[str, int] = {}
    per_user: list[set[int]] = []
    for r in raw:
        u = user_idx.setdefault(r.user, len(user_idx))
        i = item_idx.setdefault(r.item, len(item_idx))
        if u == len(per_user):
            per_user.append(set())
        per_user[u].add(i)
    positives = [np.array(sorted(s), dtype=np.int64) for s in per_user]
    return Dataset(len(user_idx), len(item_idx), positives, list(user_idx), list(item_idx))


def load_dataset(path, format: str = "movielens_tab") -> Dataset:
    return build_dataset(load_interactions(path, format))


def leave_one_out(dataset: Dataset, rng_seed: int) -> Split:
    """Hold out one uniformly chosen positive per user with at least two.

    Users with a single interaction keep it in train and get no test entry.
    """
    rng = np.random.default_rng(rng_seed)
    train_pos: list[np.ndarray] = []
    test: dict[int, int] = {}
    for u, pos in enumerate(dataset.positives):
        if pos.size < 2:
            train_pos.append(pos.copy())
            continue
        j = int(rng.integers(pos.size))
        test[u] = int(pos[j])
        train_pos.append(np.delete(pos, j))
    train = Dataset(dataset.n_users, dataset.n_items, train_pos, dataset.user_map, dataset.item_map)
    return Split(train, test, rng_seed)


def public_count(n_positives: int, xi: float) -> int:
    """Round-half-up of ``xi * n`` floored at zero."""
    return max(0, int(np.floor(xi * n_positives + 0.5)))


def sample_public(train: Dataset, xi: float, rng_seed: int) -> PublicView:
    """Expose ``round(xi * |V_i^+|)`` random positives of every user.

    A fixed per-user permutation is drawn regardless of ``xi`` and its prefix
    is taken, so for one seed the public set only grows with ``xi``.
    """
    if not 0.0 <= xi <= 1.0:
        raise ValueError(f"xi must lie in [0, 1], got {xi}")
    rng = np.random.default_rng(rng_seed)
    out = []
    for pos in train.positives:
        perm = rng.permutation(pos)
        out.append(np.sort(perm[: public_count(pos.size, xi)]))
    return PublicView(out, xi)


def save_split(split: Split, path) -> None:
    """Write the test map and token maps as a JSON sidecar."""
    doc = {
        "seed": split.seed,
        "test": {str(u): i for u, i in sorted(split.test.items())},
        "user_map": split.train.user_map,
        "item_map": split.train.item_map,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_split(dataset: Dataset, path) -> Split:
    """Rebuild a split of ``dataset`` from a sidecar written by :func:`save_split`."""
    doc = json.loads(Path(path).read_text())
    if doc["user_map"] != dataset.user_map or doc["item_map"] != dataset.item_map:
        raise ValueError("split sidecar token maps do not match the dataset")
    test = {int(u): int(i) for u, i in doc["test"].items()}
    train_pos = [pos[pos != test[u]] if u in test else pos.copy() for u, pos in enumerate(dataset.positives)]
    train = Dataset(dataset.n_users, dataset.n_items, train_pos, dataset.user_map, dataset.item_map)
    return Split(train, test, doc["seed"])
