"""Tier-2 model merging: weighted averaging and DARE drop-and-rescale."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, StructuralError
from .fed import AggregationMetric, aggregate, normalize_scores
from .model import ToyModel
from .rng import stream

MERGE_METHODS = ("weighted_average", "dare")


@dataclass(frozen=True, eq=False)
class MergeConfig:
    method: str = "dare"
    drop_rate: float = 0.5
    base: ToyModel | None = None
    metric: AggregationMetric = field(default_factory=AggregationMetric)
    seed: int = 0
    zero_score_fallback: str = "error"

    def __post_init__(self):
        if self.method not in MERGE_METHODS:
            raise ConfigurationError(f"unknown merge method {self.method!r}")
        if not 0 <= self.drop_rate < 1:
            raise ConfigurationError(f"drop_rate must be in [0, 1), got {self.drop_rate}")


def merge_weighted(models: Sequence[ToyModel], scores: Sequence[float], fallback: str = "error") -> ToyModel:
    return aggregate(models, scores, fallback)


def dare_delta(delta: np.ndarray, drop_rate: float, seed: int, model_index: int) -> np.ndarray:
    """Drop each delta entry with probability ``drop_rate``; rescale survivors by 1/(1-drop_rate).

    The uniform draw for element ``e`` is the ``e``-th output of the stream
    keyed ``(seed, model_index)``, so masks do not depend on evaluation order.
    """
    if not 0 <= drop_rate < 1:
        raise ConfigurationError(f"drop_rate must be in [0, 1), got {drop_rate}")
    if drop_rate == 0:
        return delta.copy()
    keep = stream(seed, "dare", model_index).random(len(delta)) >= drop_rate
    return np.where(keep, delta / (1.0 - drop_rate), 0.0)


def merge_dare(models: Sequence[ToyModel], scores: Sequence[float], cfg: MergeConfig) -> ToyModel:
    """base + sum_i w_i * DARE(params_i - base) with normalized score weights."""
    if cfg.base is None:
        raise ConfigurationError("DARE merging needs a base model")
    if len(models) == 0 or len(models) != len(scores):
        raise ConfigurationError("models and scores must be non-empty and equally long")
    base = cfg.base
    for m in models:
        if not base.same_layout(m):
            raise StructuralError("model layout does not match merge base")
    if cfg.drop_rate == 0:
        return merge_weighted(models, scores, cfg.zero_score_fallback)
    weights = normalize_scores(scores, cfg.zero_score_fallback)
    out = base.params.values.copy()
    for i, (w, m) in enumerate(zip(weights, models)):
        if w != 0.0:
            out += w * dare_delta(m.params.values - base.params.values, cfg.drop_rate, cfg.seed, i)
    return base.with_values(out)


def merge(models: Sequence[ToyModel], scores: Sequence[float], cfg: MergeConfig) -> ToyModel:
    if cfg.method == "weighted_average":
        return merge_weighted(models, scores, cfg.zero_score_fallback)
    return merge_dare(models, scores, cfg)


def merge_report_rows(models: Sequence[ToyModel], scores: Sequence[float], cfg: MergeConfig,
                      model_ids: Sequence | None = None) -> list[dict]:
    ids = list(model_ids) if model_ids is not None else list(range(len(models)))
    weights = normalize_scores(scores, cfg.zero_score_fallback)
    rows = []
    for i, (mid, raw, w, m) in enumerate(zip(ids, scores, weights, models)):
        if cfg.base is not None:
            delta = m.params.values - cfg.base.params.values
            dropped = dare_delta(delta, cfg.drop_rate if cfg.method == "dare" else 0.0, cfg.seed, i)
            norms = float(np.linalg.norm(delta)), float(np.linalg.norm(dropped))
        else:
            norms = float("nan"), float("nan")
        rows.append({"model_id": mid, "raw_score": float(raw), "weight": float(w),
                     "delta_l2_norm": norms[0], "post_drop_l2_norm": norms[1]})
    return rows


def write_merge_report(rows: Sequence[dict], path) -> None:
    fields = ["model_id", "raw_score", "weight", "delta_l2_norm", "post_drop_l2_norm"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
