"""Federated learning inside one group with metric-weighted aggregation."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import ClientDataset
from .errors import ConfigurationError, DegenerateWeightsError, StructuralError
from .evaluation import DEFAULT_MAX_LEN, evaluate
from .grammar import GrammarSpec
from .ledger import CommLedger
from .model import ToyModel, train_local
from .rng import derive_seed, stream
from .sampling import SamplingStrategy

METRIC_KINDS = ("sample_ratio", "syntax_accuracy", "semantic_accuracy", "custom")


@dataclass(frozen=True, eq=False)
class EvalConfig:
    validation: ClientDataset
    grammar: GrammarSpec
    n_samples: int = 4
    strategy: SamplingStrategy = field(default_factory=lambda: SamplingStrategy("temperature"))
    seed: int = 0
    max_len: int = DEFAULT_MAX_LEN

    def run(self, model: ToyModel):
        return evaluate(model, self.validation, self.grammar, self.n_samples, self.strategy, self.seed,
                        self.max_len)


@dataclass(frozen=True, eq=False)
class AggregationMetric:
    """The scoring function g applied to each trained model before aggregation."""

    kind: str = "sample_ratio"
    eval_config: EvalConfig | None = None
    fn: Callable[[ToyModel, int], float] | None = None

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ConfigurationError(f"unknown metric kind {self.kind!r}")
        if self.kind == "custom" and self.fn is None:
            raise ConfigurationError("custom metric needs fn")


def score(metric: AggregationMetric, model: ToyModel, data_size: int) -> float:
    if metric.kind == "sample_ratio":
        value = float(data_size)
    elif metric.kind == "custom":
        value = float(metric.fn(model, data_size))
    else:
        if metric.eval_config is None:
            raise ConfigurationError(f"metric {metric.kind!r} requires eval_config")
        report = metric.eval_config.run(model)
        value = report.syntax_accuracy if metric.kind == "syntax_accuracy" else report.semantic_accuracy
    if not math.isfinite(value) or value < 0:
        raise ConfigurationError(f"metric produced invalid score {value}")
    return value


def normalize_scores(scores: Sequence[float], fallback: str = "error") -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or len(s) == 0:
        raise ConfigurationError("need at least one score")
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise ConfigurationError(f"scores must be finite and non-negative: {s.tolist()}")
    total = s.sum()
    if total == 0:
        if fallback == "uniform":
            return np.full(len(s), 1.0 / len(s))
        raise DegenerateWeightsError("all aggregation scores are zero")
    return s / total


def aggregate(models: Sequence[ToyModel], scores: Sequence[float], fallback: str = "error") -> ToyModel:
    """Weighted parameter average with weights ``score_i / sum(scores)``."""
    if len(models) == 0 or len(models) != len(scores):
        raise ConfigurationError("models and scores must be non-empty and equally long")
    ref = models[0]
    for m in models[1:]:
        if not ref.same_layout(m):
            raise StructuralError("cannot aggregate models with different vocab/layout")
    weights = normalize_scores(scores, fallback)
    # math.fsum per coordinate would be slower; plain accumulation in index order is deterministic
    out = np.zeros(len(ref.params))
    for w, m in zip(weights, models):
        if w != 0.0:
            out += w * m.params.values
    return ref.with_values(out)


@dataclass(frozen=True, eq=False)
class FLConfig:
    rounds: int = 1
    participation: float = 1.0
    epochs_per_round: int = 1
    lr: float = 1.0
    metric: AggregationMetric = field(default_factory=AggregationMetric)
    seed: int = 0
    zero_score_fallback: str = "error"
    snapshot: EvalConfig | None = None
    workers: int = 1

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigurationError("rounds must be >= 0")
        if not 0 < self.participation <= 1:
            raise ConfigurationError("participation must be in (0, 1]")
        if self.epochs_per_round < 1:
            raise ConfigurationError("epochs_per_round must be >= 1")
        if self.lr < 0:
            raise ConfigurationError("lr must be >= 0")
        if self.zero_score_fallback not in ("error", "uniform"):
            raise ConfigurationError("zero_score_fallback must be 'error' or 'uniform'")

    def participants_per_round(self, group_size: int) -> int:
        return max(1, math.ceil(self.participation * group_size - 1e-9))


@dataclass(frozen=True)
class RoundRecord:
    round: int
    participants: tuple
    raw_scores: tuple[float, ...]
    weights: tuple[float, ...]
    syntax_accuracy: float | None = None
    semantic_accuracy: float | None = None
    scored: str = "post_training"


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _federate(group: Sequence[ClientDataset], init: ToyModel, cfg: FLConfig, ledger: CommLedger | None,
              client_ids: Sequence | None, central: bool) -> tuple[ToyModel, list[RoundRecord]]:
    if len(group) == 0:
        raise ConfigurationError("federated group is empty")
    ids = list(client_ids) if client_ids is not None else list(range(len(group)))
    if len(ids) != len(group):
        raise ConfigurationError("client_ids must match group length")
    n_part = cfg.participants_per_round(len(group))
    model = init
    records: list[RoundRecord] = []
    for r in range(cfg.rounds):
        chosen = sorted(stream(cfg.seed, "participants", r).choice(len(group), n_part, replace=False).tolist())

        def work(i, model=model, r=r):
            trained = train_local(model, group[i], cfg.epochs_per_round, cfg.lr, derive_seed(cfg.seed, r, i))
            return trained, score(cfg.metric, trained, len(group[i]))

        results = _map(work, chosen, cfg.workers)
        if ledger is not None:
            (ledger.charge_central if central else ledger.charge_group)(len(chosen))
        trained = [m for m, _ in results]
        raw = [s for _, s in results]
        weights = normalize_scores(raw, cfg.zero_score_fallback)
        model = aggregate(trained, raw, cfg.zero_score_fallback)
        syn = sem = None
        if cfg.snapshot is not None:
            rep = cfg.snapshot.run(model)
            syn, sem = rep.syntax_accuracy, rep.semantic_accuracy
        records.append(RoundRecord(r, tuple(ids[i] for i in chosen), tuple(raw), tuple(weights.tolist()), syn, sem))
    return model, records


def run_fl(group: Sequence[ClientDataset], init: ToyModel, cfg: FLConfig, ledger: CommLedger | None = None,
           client_ids: Sequence | None = None) -> tuple[ToyModel, list[RoundRecord]]:
    """FedAvg-style rounds within a group; uploads are charged as group transfers.

    Each round samples ``ceil(participation * |group|)`` clients without
    replacement, trains them from the current model, scores the trained
    models with ``cfg.metric`` and aggregates with normalized scores.
    """
    return _federate(group, init, cfg, ledger, client_ids, central=False)


def write_round_history(records: Sequence[RoundRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "client_id", "raw_score", "weight", "post_agg_syntax_acc", "post_agg_semantic_acc"])
        for rec in records:
            for cid, raw, wt in zip(rec.participants, rec.raw_scores, rec.weights):
                w.writerow([rec.round, cid, repr(float(raw)), repr(float(wt)),
                            "" if rec.syntax_accuracy is None else repr(rec.syntax_accuracy),
                            "" if rec.semantic_accuracy is None else repr(rec.semantic_accuracy)])
