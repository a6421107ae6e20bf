"""Pass@k estimators, latency models, Trueput and optimal sample count search."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ClientDataset
from .errors import ConfigurationError, DomainError
from .evaluation import DEFAULT_MAX_LEN, best_of
from .grammar import GrammarSpec, check_syntax
from .model import ToyModel
from .rng import derive_seed
from .sampling import SamplingStrategy

LATENCY_KINDS = ("constant", "linear", "batched")


@dataclass(frozen=True)
class LatencyModel:
    """Wall-clock time to produce a batch of ``k`` samples.

    constant: t0
    linear:   t0 + per_sample * k
    batched:  t0 * ceil(k / capacity) + per_sample * k
    """

    kind: str = "constant"
    t0: float = 1.0
    per_sample: float = 0.0
    capacity: int = 1

    def __post_init__(self):
        if self.kind not in LATENCY_KINDS:
            raise ConfigurationError(f"unknown latency kind {self.kind!r}")
        if not self.t0 > 0:
            raise ConfigurationError("t0 must be > 0")
        if self.per_sample < 0:
            raise ConfigurationError("per_sample must be >= 0")
        if self.capacity < 1:
            raise ConfigurationError("capacity must be >= 1")

    def __call__(self, k: int) -> float:
        if k < 1:
            raise DomainError("k must be >= 1")
        if self.kind == "constant":
            return self.t0
        if self.kind == "linear":
            return self.t0 + self.per_sample * k
        return self.t0 * math.ceil(k / self.capacity) + self.per_sample * k


@dataclass(frozen=True)
class TrueputProfile:
    p: float
    latency: LatencyModel
    k_max: int = 32

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise DomainError(f"p must be in [0, 1], got {self.p}")
        if self.k_max < 1:
            raise ConfigurationError("k_max must be >= 1")


@dataclass(frozen=True)
class PassStats:
    n: int
    c: int

    def __post_init__(self):
        if not 0 <= self.c <= self.n:
            raise DomainError(f"need 0 <= c <= n, got n={self.n}, c={self.c}")


def pass_at_k_analytic(p: float, k: int) -> float:
    """1 - (1 - p)^k, evaluated as -expm1(k * log1p(-p))."""
    if not 0 <= p <= 1:
        raise DomainError(f"p must be in [0, 1], got {p}")
    if k < 1:
        raise DomainError("k must be >= 1")
    if p == 1:
        return 1.0
    return -math.expm1(k * math.log1p(-p))


def pass_at_k_unbiased(stats: PassStats, k: int) -> float:
    """1 - C(n-c, k) / C(n, k) via the running product prod_{i=n-c+1}^{n} (1 - k/i)."""
    n, c = stats.n, stats.c
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    return 1.0 - float(np.prod(1.0 - k / np.arange(n - c + 1, n + 1)))


def trueput(profile: TrueputProfile, k: int, normalization: str = "batch") -> float:
    """Expected correct designs per unit time for a batch of ``k`` samples.

    ``batch`` divides pass@k by the time of the whole k-sample batch;
    ``per_design`` divides by the per-design latency T(k) / k.
    """
    t = profile.latency(k)
    if normalization == "per_design":
        t = t / k
    elif normalization != "batch":
        raise ConfigurationError(f"unknown normalization {normalization!r}")
    return pass_at_k_analytic(profile.p, k) / t


@dataclass(frozen=True)
class OptimalK:
    k: int
    trueput: float
    curve: tuple[float, ...]  # curve[i] is trueput at k = i + 1


def optimal_k(profile: TrueputProfile, normalization: str = "batch") -> OptimalK:
    """Exhaustive scan of k = 1..k_max; ties go to the smallest k."""
    curve = [trueput(profile, k, normalization) for k in range(1, profile.k_max + 1)]
    best = 0
    for i, v in enumerate(curve):
        if v > curve[best]:
            best = i
    return OptimalK(best + 1, curve[best], tuple(curve))


def sweep_rows(profile: TrueputProfile, normalization: str = "batch") -> list[dict]:
    return [{"k": k, "pass_at_k": pass_at_k_analytic(profile.p, k), "latency": profile.latency(k),
             "trueput": trueput(profile, k, normalization)} for k in range(1, profile.k_max + 1)]


@dataclass(frozen=True)
class GridResult:
    strategy: SamplingStrategy
    syntax_accuracy: float
    n_designs: int
    wall_time: float


def strategy_grid_search(model: ToyModel, eval_set: ClientDataset, grammar: GrammarSpec,
                         grid: Sequence[SamplingStrategy], budget_samples: int, seed: int,
                         max_len: int = DEFAULT_MAX_LEN) -> tuple[list[GridResult], list[tuple[SamplingStrategy, str]]]:
    """Rank strategies by syntax accuracy at a fixed generation budget per prompt.

    A strategy drawing ``n_candidates`` per design yields
    ``budget_samples // n_candidates`` designs per prompt.  Invalid strategies
    (bad hyperparameters, or more candidates than the budget) are returned in
    the second list with a diagnostic and do not stop the search.
    """
    if not grid:
        raise ConfigurationError("empty strategy grid")
    if budget_samples < 1:
        raise ConfigurationError("budget_samples must be >= 1")
    if len(eval_set) == 0:
        raise ConfigurationError("empty evaluation set")
    results: list[tuple[int, GridResult]] = []
    rejected: list[tuple[SamplingStrategy, str]] = []
    for order, strat in enumerate(grid):
        try:
            strat.validate()
        except ConfigurationError as exc:
            rejected.append((strat, str(exc)))
            continue
        per_prompt = budget_samples // strat.n_candidates
        if per_prompt < 1:
            rejected.append((strat, f"n_candidates={strat.n_candidates} exceeds budget {budget_samples}"))
            continue
        start = time.perf_counter()
        ok = total = 0
        for i, sample in enumerate(eval_set.samples):
            for j in range(per_prompt):
                gen = best_of(model, sample.prompt, strat, grammar, max_len, derive_seed(seed, order, i, j))
                ok += check_syntax(list(sample.prompt) + gen, grammar)
                total += 1
        results.append((order, GridResult(strat, ok / total, total, time.perf_counter() - start)))
    results.sort(key=lambda r: (-r[1].syntax_accuracy, r[0]))
    return [r for _, r in results], rejected
