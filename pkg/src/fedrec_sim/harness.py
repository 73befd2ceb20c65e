"""Experiment configuration, orchestration and result emission.

A config is a flat ``key=value`` text file (``#`` starts a comment).
Relative dataset paths resolve against the config file's directory.
Overrides given as ``key=value`` strings are applied on top, and every
field not mentioned keeps its default.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .attack import AttackContext, FedRecAttack, NullAttack, ShillingAttack
from .data import Dataset, leave_one_out, load_dataset, sample_public
from .fedsim import TrainingConfig, run_training

log = logging.getLogger(__name__)

ATTACKS = ("none", "random", "bandwagon", "popular", "fedrecattack")
FORMATS = ("movielens_tab", "csv")

CSV_COLUMNS = ("dataset", "attack", "k", "eta", "xi", "rho", "kappa", "C", "zeta", "mu", "epochs",
               "seed_data", "seed_model", "seed_attack", "ER@5", "ER@10", "NDCG@10", "HR@10",
               "wall_s", "config_hash")


class ConfigError(ValueError):
    """Unknown key, malformed value or violated invariant in a config."""


@dataclass
class ExperimentConfig:
    dataset: str = ""
    format: str = "movielens_tab"
    dataset_name: str = ""
    k: int = 32
    eta: float = 0.01
    xi: float = 0.01
    rho: float = 0.05
    kappa: int = 60
    C: float = 1.0
    zeta: float = 1.0
    mu: float = 0.0
    K: tuple[int, ...] = (5, 10)
    epochs: int = 200
    batch_size: int = 256
    attack: str = "none"
    # "cold", "cold:<count>" or "cold:<count>:<max train interactions>",
    # otherwise a comma-separated list of raw item ids
    targets: str = "cold"
    seed_data: int = 0
    seed_model: int = 0
    seed_attack: int = 0
    eval_every: int = 10
    attack_K: int = 10
    inner_steps: int = 30
    inner_lr: float = 0.01
    resample_negatives: bool = False

    @property
    def name(self) -> str:
        return self.dataset_name or Path(self.dataset).parent.name or Path(self.dataset).stem

    def resolved(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        doc = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _convert(key: str, text: str):
    kind = _FIELDS[key].type
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind == "tuple[int, ...]":
            return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict:
    """``key=value`` lines to a dict of typed values; unknown keys are errors."""
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    def need(ok, msg):
        if not ok:
            raise ConfigError(msg)

    need(0.0 <= cfg.xi <= 1.0, f"xi must lie in [0, 1], got {cfg.xi}")
    need(0.0 <= cfg.rho <= 1.0, f"rho must lie in [0, 1], got {cfg.rho}")
    need(cfg.C > 0, f"C must be positive, got {cfg.C}")
    need(cfg.k >= 1, "k must be positive")
    need(cfg.eta > 0, "eta must be positive")
    need(cfg.mu >= 0 and cfg.zeta >= 0, "mu and zeta must be non-negative")
    need(cfg.epochs >= 0 and cfg.batch_size >= 1 and cfg.eval_every >= 0, "bad epochs/batch_size/eval_every")
    need(len(cfg.K) > 0 and min(cfg.K) >= 1, "K must list positive cutoffs")
    need(cfg.attack_K >= 1 and cfg.inner_steps >= 0 and cfg.inner_lr >= 0, "bad attack_K/inner settings")
    need(cfg.attack in ATTACKS, f"attack must be one of {ATTACKS}, got {cfg.attack!r}")
    need(cfg.format in FORMATS, f"format must be one of {FORMATS}, got {cfg.format!r}")
    n_targets = target_count(cfg.targets)
    need(n_targets >= 1, "at least one target is required")
    need(cfg.kappa >= 2 * n_targets, f"kappa={cfg.kappa} must be at least 2 * |targets| = {2 * n_targets}")
    return cfg


def _cold_spec(spec: str) -> tuple[int, int] | None:
    parts = spec.strip().split(":")
    if parts[0] != "cold":
        return None
    try:
        count = int(parts[1]) if len(parts) > 1 else 1
        below = int(parts[2]) if len(parts) > 2 else 10
    except ValueError:
        raise ConfigError(f"bad cold-target spec {spec!r}") from None
    if len(parts) > 3 or count < 1 or below < 1:
        raise ConfigError(f"bad cold-target spec {spec!r}")
    return count, below


def target_count(spec: str) -> int:
    cold = _cold_spec(spec)
    if cold is not None:
        return cold[0]
    return len({t.strip() for t in spec.split(",") if t.strip()})


def parse_config(path=None, overrides: Sequence[str] = (), **kwargs) -> ExperimentConfig:
    """Resolve defaults, then the file, then ``key=value`` overrides, then kwargs."""
    values = {}
    if path is not None:
        path = Path(path)
        values.update(parse_assignments(path.read_text().splitlines(), str(path)))
        ds = values.get("dataset")
        if ds and not Path(ds).is_absolute():
            values["dataset"] = str(path.parent / ds)
    values.update(parse_assignments(overrides, "--set"))
    for key in kwargs:
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
    values.update(kwargs)
    return validate(ExperimentConfig(**values))


def resolve_targets(spec: str, dataset: Dataset, train: Dataset, seed: int) -> list[int]:
    """Internal item ids for an explicit raw-id list or a cold-item sampler."""
    cold = _cold_spec(spec)
    if cold is None:
        index = {tok: i for i, tok in enumerate(dataset.item_map)}
        tokens = [t.strip() for t in spec.split(",") if t.strip()]
        missing = [t for t in tokens if t not in index]
        if missing:
            raise ConfigError(f"unknown target items {missing}")
        return sorted({index[t] for t in tokens})
    count, below = cold
    pool = np.flatnonzero(train.item_counts() < below)
    if pool.size < count:
        raise ConfigError(f"only {pool.size} items have fewer than {below} train interactions")
    rng = np.random.default_rng([seed, 1])
    return sorted(int(i) for i in rng.choice(pool, size=count, replace=False))


def n_malicious_for(rho: float, n_users: int) -> int:
    # small tolerance so 0.03 * 100 does not round up to 4
    return int(math.ceil(rho * n_users - 1e-9))


def build_attack(cfg: ExperimentConfig, train: Dataset, targets: list[int], n_mal: int):
    owners = range(train.n_users, train.n_users + n_mal)
    if cfg.attack == "none":
        return NullAttack()
    if cfg.attack == "fedrecattack":
        public = sample_public(train, cfg.xi, [cfg.seed_attack, 0])
        ctx = AttackContext(public, targets, train.n_items, cfg.k, K=cfg.attack_K, zeta=cfg.zeta,
                            kappa=cfg.kappa, C=cfg.C, inner_steps=cfg.inner_steps, inner_lr=cfg.inner_lr)
        return FedRecAttack(ctx, seed=[cfg.seed_attack, 1])
    return ShillingAttack(cfg.attack, train.item_counts(), targets, cfg.kappa, owners, cfg.k, cfg.C,
                          seed=[cfg.seed_attack, 1])


@dataclass
class RunResult:
    row: dict
    series: list[dict] = field(default_factory=list)
    targets: list[int] = field(default_factory=list)


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None) -> RunResult:
    """One training run; the row follows :data:`CSV_COLUMNS`."""
    start = time.perf_counter()
    dataset = dataset if dataset is not None else load_dataset(cfg.dataset, cfg.format)
    split = leave_one_out(dataset, cfg.seed_data)
    targets = resolve_targets(cfg.targets, dataset, split.train, cfg.seed_data)
    n_mal = 0 if cfg.attack == "none" else n_malicious_for(cfg.rho, split.train.n_users)
    attack = build_attack(cfg, split.train, targets, n_mal)
    tcfg = TrainingConfig(k=cfg.k, eta=cfg.eta, C=cfg.C, mu=cfg.mu, epochs=cfg.epochs,
                          batch_size=cfg.batch_size, n_malicious=n_mal, kappa=cfg.kappa,
                          seed=cfg.seed_model, eval_every=cfg.eval_every,
                          ks=tuple(sorted(set(cfg.K) | {5, 10})),
                          resample_negatives=cfg.resample_negatives)
    log.info("run %s attack=%s targets=%s malicious=%d", cfg.name, cfg.attack, targets, n_mal)
    _, reports = run_training(tcfg, split, attack, targets)
    series = [{"epoch": r.epoch, **r.metrics.as_record()} for r in reports if r.metrics is not None]
    final = series[-1]
    row = {"dataset": cfg.name, "attack": cfg.attack, "k": cfg.k, "eta": cfg.eta, "xi": cfg.xi,
           "rho": cfg.rho, "kappa": cfg.kappa, "C": cfg.C, "zeta": cfg.zeta, "mu": cfg.mu,
           "epochs": cfg.epochs, "seed_data": cfg.seed_data, "seed_model": cfg.seed_model,
           "seed_attack": cfg.seed_attack, "ER@5": final["ER@5"], "ER@10": final["ER@10"],
           "NDCG@10": final["NDCG@10"], "HR@10": final["HR@10"],
           "wall_s": round(time.perf_counter() - start, 3), "config_hash": cfg.config_hash()}
    return RunResult(row, series, targets)


def parse_axis(axis: str) -> tuple[str, list[str]]:
    if "=" not in axis:
        raise ConfigError(f"axis must look like key=v1,v2,..., got {axis!r}")
    key, values = (s.strip() for s in axis.split("=", 1))
    if key not in _FIELDS:
        raise ConfigError(f"unknown axis key {key!r}")
    return key, [v.strip() for v in values.split(",") if v.strip()]


def run_grid(base: ExperimentConfig, axis: str, dataset: Dataset | None = None) -> list[RunResult]:
    """One run per axis value, ordered by the value (numerically when possible)."""
    key, values = parse_axis(axis)
    if not values:
        return []
    configs = [validate(dataclasses.replace(base, **{key: _convert(key, v)})) for v in values]
    configs.sort(key=lambda c: getattr(c, key))
    if dataset is None and configs:
        dataset = load_dataset(base.dataset, base.format)
    return [run_experiment(c, dataset) for c in configs]


def emit_results(rows: Sequence[dict], format: str, path) -> None:
    """Write rows as CSV (fixed header) or JSON (``{"columns", "rows"}``)."""
    path = Path(path)
    if format == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
        path.write_text(buf.getvalue())
    elif format == "json":
        doc = {"columns": list(CSV_COLUMNS), "rows": [{c: r[c] for c in CSV_COLUMNS} for r in rows]}
        path.write_text(json.dumps(doc, indent=2) + "\n")
    else:
        raise ValueError(f"unknown result format {format!r}")


def load_results(path) -> list[dict]:
    """Inverse of :func:`emit_results` for JSON output."""
    return json.loads(Path(path).read_text())["rows"]


def emit_series(results: Sequence[RunResult], path) -> None:
    """Per-evaluation metrics as JSON lines, tagged with each run's config hash."""
    with open(path, "w") as fh:
        for res in results:
            for point in res.series:
                fh.write(json.dumps({"config_hash": res.row["config_hash"], **point}) + "\n")
