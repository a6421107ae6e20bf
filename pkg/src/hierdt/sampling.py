"""Decoding strategies: greedy, temperature, top-k, nucleus and beam search."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .model import ToyModel, softmax
from .rng import stream

KINDS = ("greedy", "temperature", "top_k", "nucleus", "beam")


@dataclass(frozen=True)
class SamplingStrategy:
    kind: str = "greedy"
    temperature: float = 1.0
    top_k: int | None = None
    top_p: float | None = None
    beam_width: int | None = None
    n_candidates: int = 1

    def validate(self) -> "SamplingStrategy":
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown strategy kind {self.kind!r}")
        if not self.temperature > 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")
        if self.n_candidates < 1:
            raise ConfigurationError("n_candidates must be >= 1")
        if self.kind == "top_k" and (self.top_k is None or self.top_k < 1):
            raise ConfigurationError(f"top_k must be >= 1, got {self.top_k}")
        if self.kind == "nucleus" and (self.top_p is None or not 0 < self.top_p <= 1):
            raise ConfigurationError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.kind == "beam" and (self.beam_width is None or self.beam_width < 1):
            raise ConfigurationError(f"beam_width must be >= 1, got {self.beam_width}")
        return self

    @property
    def stochastic(self) -> bool:
        return self.kind in ("temperature", "top_k", "nucleus")

    def label(self) -> str:
        if self.kind == "greedy":
            base = "greedy"
        elif self.kind == "temperature":
            base = f"temperature(T={self.temperature:g})"
        elif self.kind == "top_k":
            base = f"top_k(k={self.top_k},T={self.temperature:g})"
        elif self.kind == "nucleus":
            base = f"nucleus(p={self.top_p:g},T={self.temperature:g})"
        else:
            base = f"beam(w={self.beam_width})"
        return base if self.n_candidates == 1 else f"{base}xbest{self.n_candidates}"

    def hyperparams(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "kind" and v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingStrategy":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown strategy keys: {sorted(unknown)}")
        return cls(**d).validate()


def step_distribution(logits: np.ndarray, strategy: SamplingStrategy) -> np.ndarray:
    """Next-token distribution after temperature scaling and truncation."""
    probs = softmax(logits / strategy.temperature)
    if strategy.kind == "top_k" and strategy.top_k < len(logits):
        order = np.lexsort((np.arange(len(logits)), -logits))
        keep = np.zeros(len(logits), dtype=bool)
        keep[order[: strategy.top_k]] = True
        probs = np.where(keep, probs, 0.0)
    elif strategy.kind == "nucleus" and strategy.top_p < 1:
        order = np.lexsort((np.arange(len(probs)), -probs))
        cum = np.cumsum(probs[order])
        n_keep = int(np.searchsorted(cum, strategy.top_p - 1e-12)) + 1
        keep = np.zeros(len(probs), dtype=bool)
        keep[order[:n_keep]] = True
        probs = np.where(keep, probs, 0.0)
    return probs / probs.sum()


def _draw(probs: np.ndarray, u: float) -> int:
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
    # guard against u*cum[-1] landing exactly on the top edge; skip zero-mass tail
    idx = min(idx, len(probs) - 1)
    while probs[idx] == 0.0:
        idx -= 1
    return idx


def _beam_search(model: ToyModel, prompt: list[int], width: int, max_len: int) -> list[int]:
    eos = model.vocab.eos_id
    # (score, generated ids, finished)
    beams: list[tuple[float, list[int], bool]] = [(0.0, [], False)]
    for _ in range(max_len):
        candidates = []
        for score, gen, done in beams:
            if done:
                candidates.append((score, gen, True))
                continue
            logp = model.log_prob_table[model.context_index(prompt + gen)]
            for tok in range(len(logp)):
                candidates.append((score + float(logp[tok]), gen + [tok], tok == eos))
        # stable sort keeps beam order then token order on ties
        candidates.sort(key=lambda c: -c[0])
        beams = candidates[:width]
        if all(done for _, _, done in beams):
            break
    return beams[0][1]


def generate(model: ToyModel, prompt: Sequence[str], strategy: SamplingStrategy, max_len: int,
             seed: int = 0) -> list[str]:
    """Generate up to ``max_len`` tokens after ``prompt``; stops after eos."""
    strategy.validate()
    if max_len < 1:
        raise ConfigurationError("max_len must be positive")
    history = model.vocab.encode(prompt)
    eos = model.vocab.eos_id
    if strategy.kind == "beam":
        return model.vocab.decode(_beam_search(model, history, strategy.beam_width, max_len))
    rng = stream(seed, "generate") if strategy.stochastic else None
    out: list[int] = []
    for _ in range(max_len):
        if rng is None:
            tok = model.greedy_next(history + out)
        else:
            logits = model.logit_table[model.context_index(history + out)]
            tok = _draw(step_distribution(logits, strategy), float(rng.random()))
        out.append(tok)
        if tok == eos:
            break
    return model.vocab.decode(out)
