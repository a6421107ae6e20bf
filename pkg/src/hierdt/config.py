"""Experiment configuration: one JSON file, validated before any work starts."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any

from .errors import ConfigurationError


def _build(cls, raw: Any, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        sub = _SECTIONS.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}") if sub is not None and isinstance(value, dict) else value
    try:
        obj = cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None
    obj.check(where)
    return obj


def _need(cond: bool, msg: str):
    if not cond:
        raise ConfigurationError(msg)


@dataclass
class DatasetSection:
    train: str | None = None
    validation: str | None = None
    test: str | None = None
    vocab: str | None = None

    def check(self, where):
        pass

    def require(self):
        _need(self.train is not None and self.validation is not None,
              "dataset.train and dataset.validation are required")
        for key in ("train", "validation", "test", "vocab"):
            path = getattr(self, key)
            if path is not None and not os.path.isfile(path):
                raise ConfigurationError(f"dataset.{key}: no such file {path!r}")


@dataclass
class GrammarSection:
    pairs: list = field(default_factory=lambda: [["(", ")"], ["[", "]"], ["{", "}"], ["<", ">"]])
    max_depth: int = 4

    def check(self, where):
        _need(all(isinstance(p, (list, tuple)) and len(p) == 2 for p in self.pairs),
              f"{where}.pairs: expected [open, close] pairs")


@dataclass
class ModelSection:
    context_len: int = 3
    init: str = "uniform"
    init_sigma: float = 0.1

    def check(self, where):
        _need(self.context_len >= 1, f"{where}.context_len must be >= 1")
        _need(self.init in ("uniform", "gaussian"), f"{where}.init must be uniform or gaussian")


@dataclass
class PartitionSection:
    alpha: float | None = None
    n_clients: int = 40
    n_groups: int = 4
    n_isolated: int = 4

    def check(self, where):
        _need(self.alpha is not None and self.alpha > 0, f"{where}.alpha is required and must be > 0")
        _need(self.n_clients >= 1, f"{where}.n_clients must be >= 1")


@dataclass
class FLSection:
    rounds: int = 10
    participation: float = 0.1
    epochs_per_round: int = 5
    lr: float = 10.0
    metric: str = "syntax_accuracy"
    zero_score_fallback: str = "error"

    def check(self, where):
        _need(self.rounds >= 0, f"{where}.rounds must be >= 0")
        _need(0 < self.participation <= 1, f"{where}.participation must be in (0, 1]")
        _need(self.metric in ("sample_ratio", "syntax_accuracy", "semantic_accuracy"), f"{where}.metric invalid")
        _need(self.zero_score_fallback in ("error", "uniform"), f"{where}.zero_score_fallback invalid")


@dataclass
class MergeSection:
    method: str = "dare"
    drop_rate: float = 0.5
    metric: str = "syntax_accuracy"
    local_epochs: int | None = None
    outer_rounds: int = 1

    def check(self, where):
        _need(self.method in ("weighted_average", "dare"), f"{where}.method invalid")
        _need(0 <= self.drop_rate < 1, f"{where}.drop_rate must be in [0, 1)")
        _need(self.metric in ("sample_ratio", "syntax_accuracy", "semantic_accuracy"), f"{where}.metric invalid")
        _need(self.outer_rounds >= 1, f"{where}.outer_rounds must be >= 1")


@dataclass
class EvalSection:
    n_samples: int = 4
    metric_samples: int = 2
    strategy: dict = field(default_factory=lambda: {"kind": "temperature", "temperature": 1.0})
    max_len: int = 16

    def check(self, where):
        _need(self.n_samples >= 1 and self.metric_samples >= 1, f"{where}: sample counts must be >= 1")
        _need(self.max_len >= 1, f"{where}.max_len must be >= 1")


@dataclass
class LatencySection:
    kind: str = "batched"
    t0: float = 1.0
    per_sample: float = 0.0

    def check(self, where):
        _need(self.kind in ("constant", "linear", "batched"), f"{where}.kind invalid")


@dataclass
class TrueputSection:
    p: Any = 0.3  # number, or "measured" to use the central model's semantic accuracy
    k_max: int = 32
    capacities: list = field(default_factory=lambda: [1, 2, 4, 8])
    latency: LatencySection = field(default_factory=LatencySection)
    normalization: str = "batch"
    grid: list = field(default_factory=lambda: [
        {"kind": "greedy"},
        {"kind": "temperature", "temperature": 1.0, "n_candidates": 4},
        {"kind": "top_k", "top_k": 2, "temperature": 1.0},
        {"kind": "nucleus", "top_p": 0.9},
        {"kind": "beam", "beam_width": 3},
    ])
    budget_samples: int = 4
    grid_model: str = "central"  # "central", "uniform" or a saved model path
    central_epochs: int = 50

    def check(self, where):
        _need(self.p == "measured" or (isinstance(self.p, (int, float)) and 0 <= self.p <= 1),
              f"{where}.p must be in [0, 1] or 'measured'")
        _need(self.k_max >= 1, f"{where}.k_max must be >= 1")
        _need(len(self.capacities) >= 1 and all(int(c) >= 1 for c in self.capacities), f"{where}.capacities invalid")
        _need(self.normalization in ("batch", "per_design"), f"{where}.normalization invalid")
        _need(self.budget_samples >= 1, f"{where}.budget_samples must be >= 1")


@dataclass
class DecodeSection:
    target: str = "synthetic"  # or a saved model path
    vocab_size: int = 8
    context_len: int = 2
    target_sigma: float = 1.5
    eos_penalty: float = 3.0
    depth: int = 6
    n_prompts: int = 20
    prompt_len: int = 3
    max_len: int = 32
    tree_sizes: list = field(default_factory=lambda: list(range(1, 129)))
    ceiling: int = 32
    learn_steps: int = 500
    learn_lr: float = 0.5
    kl_direction: str = "forward"

    def check(self, where):
        _need(self.vocab_size >= 2 and self.depth >= 1, f"{where}: vocab_size >= 2 and depth >= 1 required")
        _need(len(self.tree_sizes) >= 1 and all(int(s) >= 1 for s in self.tree_sizes), f"{where}.tree_sizes invalid")
        _need(self.ceiling >= 1, f"{where}.ceiling must be >= 1")
        _need(self.learn_steps >= 0, f"{where}.learn_steps must be >= 0")
        _need(self.kl_direction in ("forward", "reverse"), f"{where}.kl_direction invalid")
        _need(self.prompt_len >= self.context_len, f"{where}.prompt_len must be >= context_len")


@dataclass
class ExperimentConfig:
    seed: int = 0
    workers: int = 1
    dataset: DatasetSection = field(default_factory=DatasetSection)
    grammar: GrammarSection = field(default_factory=GrammarSection)
    model: ModelSection = field(default_factory=ModelSection)
    partition: PartitionSection | None = None
    fl: FLSection = field(default_factory=FLSection)
    merge: MergeSection = field(default_factory=MergeSection)
    eval: EvalSection = field(default_factory=EvalSection)
    trueput: TrueputSection = field(default_factory=TrueputSection)
    decode: DecodeSection = field(default_factory=DecodeSection)

    def check(self, where):
        _need(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        _need(self.workers >= 1, "workers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    (ExperimentConfig, "dataset"): DatasetSection,
    (ExperimentConfig, "grammar"): GrammarSection,
    (ExperimentConfig, "model"): ModelSection,
    (ExperimentConfig, "partition"): PartitionSection,
    (ExperimentConfig, "fl"): FLSection,
    (ExperimentConfig, "merge"): MergeSection,
    (ExperimentConfig, "eval"): EvalSection,
    (ExperimentConfig, "trueput"): TrueputSection,
    (ExperimentConfig, "decode"): DecodeSection,
    (TrueputSection, "latency"): LatencySection,
}


def parse_config(raw: dict, seed: int | None = None) -> ExperimentConfig:
    if seed is not None:
        raw = dict(raw, seed=seed)
    cfg = _build(ExperimentConfig, raw, "config")
    return cfg


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path!r} is not valid JSON: {exc}") from None
    cfg = parse_config(raw, seed)
    # relative dataset paths resolve against the config file's directory
    base = os.path.dirname(os.path.abspath(path))
    for key in ("train", "validation", "test", "vocab"):
        value = getattr(cfg.dataset, key)
        if value is not None and not os.path.isabs(value):
            setattr(cfg.dataset, key, os.path.join(base, value))
    if isinstance(cfg.decode.target, str) and cfg.decode.target.endswith(".npz") and not os.path.isabs(cfg.decode.target):
        cfg.decode.target = os.path.join(base, cfg.decode.target)
    return cfg
