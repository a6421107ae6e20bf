"""Context-window softmax model and full-batch cross-entropy training.

The model keeps one logit row per context, where a context is the last
``context_len`` token ids (left-padded with a dedicated pad id at the start
of a sequence).  Parameters are stored flat so that aggregation and merging
are plain vector arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .data import ClientDataset
from .errors import ConfigurationError, NumericError, StructuralError, VocabularyMismatchError
from .grammar import Vocab
from .rng import stream

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ParamLayout:
    n_contexts: int
    vocab_size: int

    @property
    def size(self) -> int:
        return self.n_contexts * self.vocab_size

    def offset(self, context: int, token: int) -> int:
        return context * self.vocab_size + token


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.layout.size,):
            raise StructuralError(f"expected {self.layout.size} params, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericError("parameter vector contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.layout.size

    def table(self) -> np.ndarray:
        return self.values.reshape(self.layout.n_contexts, self.layout.vocab_size)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = np.exp(logits - np.max(logits, axis=axis, keepdims=True))
    return shifted / np.sum(shifted, axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class ToyModel:
    vocab: Vocab
    context_len: int
    params: ParamVector

    def __post_init__(self):
        if self.context_len < 1:
            raise ConfigurationError("context_len must be positive")
        expected = ParamLayout(self.n_contexts, len(self.vocab))
        if self.params.layout != expected:
            raise StructuralError(f"layout {self.params.layout} does not match {expected}")

    @property
    def pad_id(self) -> int:
        return len(self.vocab)

    @property
    def n_contexts(self) -> int:
        return (len(self.vocab) + 1) ** self.context_len

    @classmethod
    def uniform(cls, vocab: Vocab, context_len: int = 2) -> "ToyModel":
        layout = ParamLayout((len(vocab) + 1) ** context_len, len(vocab))
        return cls(vocab, context_len, ParamVector(np.zeros(layout.size), layout))

    @classmethod
    def gaussian(cls, vocab: Vocab, context_len: int = 2, seed: int = 0, sigma: float = 0.1) -> "ToyModel":
        layout = ParamLayout((len(vocab) + 1) ** context_len, len(vocab))
        values = stream(seed, "init").normal(0.0, sigma, layout.size)
        return cls(vocab, context_len, ParamVector(values, layout))

    @classmethod
    def from_table(cls, vocab: Vocab, context_len: int, table: np.ndarray) -> "ToyModel":
        layout = ParamLayout((len(vocab) + 1) ** context_len, len(vocab))
        return cls(vocab, context_len, ParamVector(np.asarray(table, dtype=float).ravel(), layout))

    def with_values(self, values: np.ndarray) -> "ToyModel":
        return ToyModel(self.vocab, self.context_len, ParamVector(values, self.params.layout))

    def same_layout(self, other: "ToyModel") -> bool:
        return self.vocab == other.vocab and self.context_len == other.context_len

    @cached_property
    def logit_table(self) -> np.ndarray:
        return self.params.table()

    @cached_property
    def prob_table(self) -> np.ndarray:
        return softmax(self.logit_table, axis=1)

    @cached_property
    def log_prob_table(self) -> np.ndarray:
        return log_softmax(self.logit_table, axis=1)

    def context_index(self, history: Sequence[int]) -> int:
        """Index of the context formed by the last ``context_len`` ids of ``history``."""
        base = len(self.vocab) + 1
        window = list(history[-self.context_len:]) if history else []
        window = [self.pad_id] * (self.context_len - len(window)) + window
        idx = 0
        for tok in window:
            idx = idx * base + tok
        return idx

    def context_tokens(self, index: int) -> list[int]:
        """Inverse of context_index (pad ids included)."""
        base = len(self.vocab) + 1
        out = []
        for _ in range(self.context_len):
            index, rem = divmod(index, base)
            out.append(rem)
        return out[::-1]

    def next_probs(self, history: Sequence[int]) -> np.ndarray:
        return self.prob_table[self.context_index(history)]

    def greedy_next(self, history: Sequence[int]) -> int:
        # np.argmax returns the first maximum: lowest token index wins ties
        return int(np.argmax(self.logit_table[self.context_index(history)]))


def _context_names(model: ToyModel, ctx: int) -> list[str]:
    return [model.vocab.symbols[t] if t < len(model.vocab) else "<pad>" for t in model.context_tokens(ctx)]


def encode_dataset(model: ToyModel, data: ClientDataset) -> tuple[np.ndarray, np.ndarray]:
    """(context index, target id) pairs for every completion token in ``data``."""
    vocab = model.vocab
    contexts: list[int] = []
    targets: list[int] = []
    for sample in data.samples:
        try:
            prompt = vocab.encode(sample.prompt)
            completion = vocab.encode(sample.completion)
        except VocabularyMismatchError as exc:
            raise VocabularyMismatchError(f"{exc} (group {sample.tag or data.group_tag!r})") from None
        seq = prompt + completion
        for pos in range(len(prompt), len(seq)):
            contexts.append(model.context_index(seq[:pos]))
            targets.append(seq[pos])
    return np.asarray(contexts, dtype=np.int64), np.asarray(targets, dtype=np.int64)


def cross_entropy(model: ToyModel, data: ClientDataset, encoded=None) -> float:
    """Mean natural-log cross-entropy of completion tokens given their context."""
    contexts, targets = encoded if encoded is not None else encode_dataset(model, data)
    if len(targets) == 0:
        return 0.0
    probs = model.prob_table[contexts, targets]
    return float(-np.mean(np.log(np.maximum(probs, PROB_FLOOR))))


def cross_entropy_grad(model: ToyModel, data: ClientDataset, encoded=None) -> np.ndarray:
    """Gradient of ``cross_entropy`` with respect to the flat parameter vector."""
    contexts, targets = encoded if encoded is not None else encode_dataset(model, data)
    grad = np.zeros((model.n_contexts, len(model.vocab)))
    if len(targets) == 0:
        return grad.ravel()
    residual = model.prob_table[contexts].copy()
    residual[np.arange(len(targets)), targets] -= 1.0
    np.add.at(grad, contexts, residual)
    grad /= len(targets)
    bad = ~np.all(np.isfinite(grad), axis=1)
    if bad.any():
        ctx = int(np.flatnonzero(bad)[0])
        raise NumericError(f"non-finite gradient at context {ctx} {_context_names(model, ctx)}")
    return grad.ravel()


def fit(model: ToyModel, data: ClientDataset, epochs: int, lr: float) -> tuple[ToyModel, list[float]]:
    """Full-batch gradient descent; returns the model and the loss before each step plus the final loss."""
    if epochs < 0:
        raise ConfigurationError("epochs must be non-negative")
    if lr < 0:
        raise ConfigurationError("lr must be non-negative")
    missing = data.tokens() - set(model.vocab.symbols)
    if missing:
        raise VocabularyMismatchError(f"tokens not in vocab: {sorted(missing)}")
    encoded = encode_dataset(model, data)
    losses = []
    current = model
    for _ in range(epochs):
        losses.append(cross_entropy(current, data, encoded))
        grad = cross_entropy_grad(current, data, encoded)
        with np.errstate(over="ignore", invalid="ignore"):
            step = current.params.values - lr * grad
        if not np.all(np.isfinite(step)):
            ctx = int(np.flatnonzero(~np.isfinite(step))[0]) // len(model.vocab)
            raise NumericError(f"non-finite update at context {ctx} {_context_names(model, ctx)}")
        current = current.with_values(step)
    losses.append(cross_entropy(current, data, encoded))
    return current, losses


def train_local(model: ToyModel, data: ClientDataset, epochs: int, lr: float, seed: int = 0) -> ToyModel:
    """Local training: one full-batch gradient step per epoch.

    ``seed`` is part of the interface for reproducibility bookkeeping; the
    full-batch update itself draws no randomness.
    """
    trained, _ = fit(model, data, epochs, lr)
    return trained


def save_model(model: ToyModel, path) -> None:
    np.savez(path, symbols=np.array(model.vocab.symbols), eos=np.array(model.vocab.eos),
             context_len=np.array(model.context_len), values=model.params.values)


def load_model(path) -> ToyModel:
    with np.load(path, allow_pickle=False) as z:
        vocab = Vocab(tuple(str(s) for s in z["symbols"]), eos=str(z["eos"]))
        return ToyModel.from_table(vocab, int(z["context_len"]), z["values"])
