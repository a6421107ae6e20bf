"""Parallel (multi-token) decoding simulator with online KL learning of draft heads.

Draft head ``d`` (1-based) predicts the token ``d`` positions ahead from the
committed context alone, so heads are conditionally independent given the
context.  A draft tree is grown greedily by path probability, the target
verifies it greedily, and a cost model charges ``max(1, tree_size / ceiling)``
time units per verification step.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError, StructuralError
from .grammar import Vocab
from .model import PROB_FLOOR, ToyModel, log_softmax, softmax
from .rng import stream

LOG_FLOOR = math.log(PROB_FLOOR)


@dataclass(frozen=True, eq=False)
class DraftHeads:
    vocab: Vocab
    context_len: int
    logits: np.ndarray  # (depth, n_contexts, vocab)

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float64)
        n_ctx = (len(self.vocab) + 1) ** self.context_len
        if logits.ndim != 3 or logits.shape[1:] != (n_ctx, len(self.vocab)) or logits.shape[0] < 1:
            raise StructuralError(f"draft logits must have shape (K, {n_ctx}, {len(self.vocab)}), got {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise NumericError("draft logits contain non-finite values")
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "_probs", softmax(logits, axis=2))

    @property
    def depth(self) -> int:
        return self.logits.shape[0]

    def probs(self, depth: int, context: int) -> np.ndarray:
        """Distribution of head ``depth`` (1-based) at context index ``context``."""
        return self._probs[depth - 1, context]

    @classmethod
    def uniform(cls, vocab: Vocab, context_len: int, depth: int) -> "DraftHeads":
        return cls(vocab, context_len, np.zeros((depth, (len(vocab) + 1) ** context_len, len(vocab))))

    @classmethod
    def gaussian(cls, vocab: Vocab, context_len: int, depth: int, seed: int, sigma: float = 0.1) -> "DraftHeads":
        shape = (depth, (len(vocab) + 1) ** context_len, len(vocab))
        return cls(vocab, context_len, stream(seed, "heads").normal(0.0, sigma, shape))

    @classmethod
    def from_target(cls, target: ToyModel, depth: int) -> "DraftHeads":
        """Heads that copy the target's conditional at each depth along its greedy rollout."""
        table = np.empty((depth, target.n_contexts, len(target.vocab)))
        for c in range(target.n_contexts):
            for d, ctx in enumerate(rollout_contexts(target, target.context_tokens(c), depth)):
                table[d, c] = target.logit_table[ctx]
        return cls(target.vocab, target.context_len, table)

    def with_logits(self, logits: np.ndarray) -> "DraftHeads":
        return DraftHeads(self.vocab, self.context_len, logits)


def rollout_contexts(target: ToyModel, history: Sequence[int], depth: int) -> list[int]:
    """Context indices the target sees at depths 1..depth when continuing greedily."""
    hist = list(history)
    out = []
    for _ in range(depth):
        ctx = target.context_index(hist)
        out.append(ctx)
        hist.append(int(np.argmax(target.logit_table[ctx])))
    return out


@dataclass
class TokenTree:
    context: tuple[int, ...]
    tokens: list[int] = field(default_factory=list)  # node 0 is the root
    parents: list[int] = field(default_factory=list)
    depths: list[int] = field(default_factory=list)
    children: list[dict] = field(default_factory=list)

    @property
    def size(self) -> int:
        """Number of drafted nodes (the root is the last committed token, not a draft)."""
        return len(self.tokens) - 1

    def add(self, parent: int, token: int) -> int:
        idx = len(self.tokens)
        self.tokens.append(token)
        self.parents.append(parent)
        self.depths.append(self.depths[parent] + 1 if parent >= 0 else 0)
        self.children.append({})
        if parent >= 0:
            self.children[parent][token] = idx
        return idx

    def path(self, node: int) -> list[int]:
        out = []
        while node > 0:
            out.append(self.tokens[node])
            node = self.parents[node]
        return out[::-1]


def build_tree(heads: DraftHeads, context: Sequence[int], size: int) -> TokenTree:
    """Grow a draft tree by repeatedly attaching the most probable unexpanded child.

    Path probability is the product of head probabilities along the path.
    Ties go to the candidate pushed first (earlier parent, then lower token id).
    Candidates with probability below the clamp floor are never attached.
    """
    if size < 1:
        raise ConfigurationError("tree size must be >= 1")
    context = tuple(context)
    tree = TokenTree(context)
    tree.add(-1, context[-1] if context else -1)
    base = len(heads.vocab) + 1
    window = list(context[-heads.context_len:])
    ctx = 0
    for tok in [len(heads.vocab)] * (heads.context_len - len(window)) + window:
        ctx = ctx * base + tok
    depth_probs = [heads.probs(d, ctx) for d in range(1, heads.depth + 1)]
    heap: list[tuple[float, int, int, int]] = []
    counter = 0

    def push_children(node: int, prob: float):
        nonlocal counter
        d = tree.depths[node]
        if d >= heads.depth:
            return
        for tok, q in enumerate(depth_probs[d]):
            pq = prob * float(q)
            if pq >= PROB_FLOOR:
                heapq.heappush(heap, (-pq, counter, node, tok))
                counter += 1

    push_children(0, 1.0)
    while heap and tree.size < size:
        neg, _, parent, tok = heapq.heappop(heap)
        node = tree.add(parent, tok)
        push_children(node, -neg)
    return tree


def verify(target: ToyModel, tree: TokenTree, mode: str = "greedy") -> tuple[list[int], int]:
    """Walk the tree along the target's greedy choices.

    Returns ``(committed, n_accepted)``: the accepted draft tokens followed by
    one token from the target itself (omitted when an accepted token is eos).
    """
    if mode != "greedy":
        raise ConfigurationError("only greedy verification is supported")
    eos = target.vocab.eos_id
    history = list(tree.context)
    node = 0
    accepted: list[int] = []
    while True:
        tok = target.greedy_next(history + accepted)
        child = tree.children[node].get(tok)
        if child is None:
            return accepted + [tok], len(accepted)
        accepted.append(tok)
        node = child
        if tok == eos:
            return accepted, len(accepted)


@dataclass(frozen=True)
class DecodeStats:
    steps: int
    accepted_total: int  # committed tokens
    drafted_total: int
    accepted_drafts: int
    tree_size: int
    ceiling: int

    @property
    def acceptance_ratio(self) -> float:
        """Accepted draft tokens per drafted node."""
        return self.accepted_drafts / self.drafted_total if self.drafted_total else 0.0

    @property
    def mean_accepted_per_step(self) -> float:
        return self.accepted_drafts / self.steps if self.steps else 0.0

    @property
    def tokens_per_step(self) -> float:
        return self.accepted_total / self.steps if self.steps else 0.0

    @property
    def relative_cost(self) -> float:
        return max(1.0, self.tree_size / self.ceiling)

    @property
    def speedup(self) -> float:
        return self.tokens_per_step / self.relative_cost


def parallel_decode(target: ToyModel, heads: DraftHeads, prompt: Sequence[int], tree_size: int,
                    max_len: int) -> tuple[list[int], list[tuple[int, int, int]]]:
    """Decode one prompt; returns generated ids and per-step (drafted, accepted, committed)."""
    eos = target.vocab.eos_id
    history = list(prompt)
    out: list[int] = []
    steps = []
    while len(out) < max_len and not (out and out[-1] == eos):
        tree = build_tree(heads, history + out, tree_size)
        committed, n_acc = verify(target, tree)
        committed = committed[: max_len - len(out)]
        steps.append((tree.size, min(n_acc, len(committed)), len(committed)))
        out.extend(committed)
    return out, steps


def simulate_decode(target: ToyModel, heads: DraftHeads, prompts: Iterable[Sequence[int]], tree_size: int,
                    ceiling: int, max_len: int) -> DecodeStats:
    if ceiling < 1:
        raise ConfigurationError("ceiling must be >= 1")
    if target.vocab != heads.vocab or target.context_len != heads.context_len:
        raise StructuralError("draft heads and target disagree on vocab or context length")
    steps = committed = drafted = accepted = 0
    for prompt in prompts:
        _, trace = parallel_decode(target, heads, prompt, tree_size, max_len)
        for d, a, c in trace:
            steps += 1
            drafted += d
            accepted += a
            committed += c
    return DecodeStats(steps, committed, drafted, accepted, tree_size, ceiling)


def depth_targets(target: ToyModel, history: Sequence[int], depth: int) -> np.ndarray:
    """Clamped target log-probabilities for each draft depth, shape (depth, V)."""
    ctxs = rollout_contexts(target, history, depth)
    return np.maximum(log_softmax(target.logit_table[ctxs], axis=1), LOG_FLOOR)


def kl_and_grad(head_logits: np.ndarray, log_target: np.ndarray, direction: str = "forward"
                ) -> tuple[np.ndarray, np.ndarray]:
    """Per-row KL and its gradient with respect to ``head_logits`` (rows = depths).

    forward: KL(draft || target); reverse: KL(target || draft).  Log
    probabilities on both sides are clamped at log(1e-12).
    """
    log_a_raw = log_softmax(head_logits, axis=1)
    a = np.exp(log_a_raw)
    live = log_a_raw > LOG_FLOOR
    log_a = np.where(live, log_a_raw, LOG_FLOOR)
    dead = (~live).astype(float)
    if direction == "forward":
        diff = log_a - log_target
        kl = np.sum(a * diff, axis=1)
        # d/dz_i of sum_j a_j (clamped log a_j - log o_j), using sum_j a_j = 1
        correction = np.sum(a * dead, axis=1, keepdims=True) - dead
        grad = a * (diff - kl[:, None]) + a * correction
    elif direction == "reverse":
        o = np.exp(log_target)
        o = o / o.sum(axis=1, keepdims=True)
        kl = np.sum(o * (log_target - log_a), axis=1)
        grad = a * (1.0 - np.sum(o * dead, axis=1, keepdims=True)) - o * (1.0 - dead)
    else:
        raise ConfigurationError(f"unknown KL direction {direction!r}")
    return kl, grad


def online_kl_update(heads: DraftHeads, target: ToyModel, served_context: Sequence[int], lr: float,
                     direction: str = "forward") -> tuple[DraftHeads, float]:
    """One gradient step of the per-depth KL on a served context; returns the pre-update KL.

    The target side at depth ``d`` is the target's next-token distribution
    after the greedy continuation it actually served, so no labelled data is
    needed beyond the serving trace.
    """
    if len(served_context) < target.context_len:
        raise ConfigurationError(f"served context shorter than context_len={target.context_len}")
    if not lr >= 0:
        raise ConfigurationError("lr must be >= 0")
    ctx = target.context_index(list(served_context))
    log_target = depth_targets(target, served_context, heads.depth)
    kl, grad = kl_and_grad(heads.logits[:, ctx, :], log_target, direction)
    total = float(np.sum(kl))
    if not math.isfinite(total) or not np.all(np.isfinite(grad)):
        names = [target.vocab.symbols[t] if t < len(target.vocab) else "<pad>" for t in target.context_tokens(ctx)]
        raise NumericError(f"non-finite KL at context {ctx} {names}")
    if lr == 0 or not np.any(grad):
        return heads, max(total, 0.0)
    logits = heads.logits.copy()
    logits[:, ctx, :] -= lr * grad
    return heads.with_logits(logits), max(total, 0.0)


def served_contexts(target: ToyModel, prompts: Iterable[Sequence[int]], max_len: int) -> list[tuple[int, ...]]:
    """Every prefix the target conditions on while greedily serving ``prompts``."""
    eos = target.vocab.eos_id
    out = []
    for prompt in prompts:
        hist = list(prompt)
        for _ in range(max_len):
            out.append(tuple(hist))
            tok = target.greedy_next(hist)
            hist.append(tok)
            if tok == eos:
                break
    return out


def learn_online(heads: DraftHeads, target: ToyModel, contexts: Iterable[Sequence[int]], lr: float,
                 direction: str = "forward") -> tuple[DraftHeads, list[float]]:
    kls = []
    for ctx in contexts:
        heads, kl = online_kl_update(heads, target, ctx, lr, direction)
        kls.append(kl)
    return heads, kls


def stationary_stream(pool: Sequence[Sequence[int]], n: int, seed: int) -> list[tuple[int, ...]]:
    """``n`` contexts drawn i.i.d. (seeded) from a fixed pool of served contexts."""
    if not pool:
        raise ConfigurationError("empty context pool")
    idx = stream(seed, "served").integers(0, len(pool), n)
    return [tuple(pool[i]) for i in idx]


def write_sweep(stats: Sequence[DecodeStats], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tree_size", "acceptance_ratio", "tokens_per_step", "relative_cost", "speedup"])
        for s in stats:
            w.writerow([s.tree_size, repr(s.acceptance_ratio), repr(s.tokens_per_step), repr(s.relative_cost),
                        repr(s.speedup)])


def write_kl_trace(kls: Sequence[float], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["update_idx", "kl"])
        for i, v in enumerate(kls):
            w.writerow([i, repr(float(v))])
