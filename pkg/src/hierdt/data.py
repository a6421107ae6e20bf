"""Client datasets, the line-delimited dataset format, and a synthetic corpus.

File format, one record per line::

    <group_tag> TAB <prompt tokens, space separated> TAB <completion tokens>
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError
from .grammar import EOS, GrammarSpec, canonical_completion
from .rng import stream


@dataclass(frozen=True)
class Sample:
    prompt: tuple[str, ...]
    completion: tuple[str, ...]
    tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(self.prompt))
        object.__setattr__(self, "completion", tuple(self.completion))
        if not self.prompt and not self.completion:
            raise ConfigurationError("empty sample")
        if not self.completion or self.completion[-1] != EOS:
            raise ConfigurationError(f"completion must end with {EOS}: {self.completion}")


@dataclass(frozen=True)
class ClientDataset:
    samples: tuple[Sample, ...]
    group_tag: str = ""
    flags: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def tag_histogram(self) -> dict[str, int]:
        return dict(sorted(Counter(s.tag for s in self.samples).items()))

    def tokens(self) -> set[str]:
        out: set[str] = set()
        for s in self.samples:
            out.update(s.prompt)
            out.update(s.completion)
        return out


def read_dataset(path) -> list[ClientDataset]:
    """Read a dataset file into one ClientDataset per group tag (file order kept)."""
    by_tag: dict[str, list[Sample]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ConfigurationError(f"{path}:{lineno}: expected 3 tab-separated fields")
            tag, prompt, completion = parts
            by_tag.setdefault(tag, []).append(Sample(prompt.split(), completion.split(), tag))
    return [ClientDataset(tuple(s), tag) for tag, s in by_tag.items()]


def write_dataset(datasets: Iterable[ClientDataset], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ds in datasets:
            for s in ds.samples:
                tag = s.tag or ds.group_tag
                fh.write(f"{tag}\t{' '.join(s.prompt)}\t{' '.join(s.completion)}\n")


def merge_datasets(datasets: Sequence[ClientDataset], tag: str = "") -> ClientDataset:
    return ClientDataset(tuple(s for ds in datasets for s in ds.samples), tag)


def _random_prefix(rng: np.random.Generator, grammar: GrammarSpec, pair_weights, depth_bias: float,
                   length: int) -> list[str]:
    prefix: list[str] = []
    stack: list[str] = []
    openers = grammar.openers
    for _ in range(length):
        can_open = len(stack) < grammar.max_depth
        if stack and (not can_open or rng.random() > depth_bias):
            prefix.append(openers[stack.pop()])
        else:
            opener = grammar.pairs[rng.choice(len(grammar.pairs), p=pair_weights)][0]
            stack.append(opener)
            prefix.append(opener)
    return prefix


def synthetic_corpus(grammar: GrammarSpec, n_tags: int, samples_per_tag: int, seed: int,
                     corrupt_tags: Sequence[int] = (), max_prompt_len: int = 5) -> list[ClientDataset]:
    """Pool of per-tag datasets whose tags differ in bracket mix and nesting style.

    Each sample's completion is the canonical closure of its prompt.  Tags
    listed in ``corrupt_tags`` get syntactically broken completions (one
    closing bracket dropped), mimicking repositories with bad code.
    """
    n_pairs = len(grammar.pairs)
    pool = []
    for t in range(n_tags):
        rng = stream(seed, "corpus", t)
        # each tag favours one bracket family and a nesting tendency
        weights = np.full(n_pairs, 0.15 / max(n_pairs - 1, 1)) if n_pairs > 1 else np.ones(1)
        if n_pairs > 1:
            weights[t % n_pairs] = 0.85
        weights = weights / weights.sum()
        depth_bias = 0.35 + 0.4 * ((t * 7919) % 5) / 4
        tag = f"repo{t:02d}"
        samples = []
        for _ in range(samples_per_tag):
            length = int(rng.integers(1, max_prompt_len + 1))
            prompt = _random_prefix(rng, grammar, weights, depth_bias, length)
            completion = canonical_completion(prompt, grammar)
            if t in corrupt_tags and len(completion) > 1:
                completion = completion[1:]
            samples.append(Sample(prompt, completion, tag))
        pool.append(ClientDataset(tuple(samples), tag))
    return pool


def eval_split(pool: Sequence[ClientDataset], grammar: GrammarSpec, n: int, seed: int) -> ClientDataset:
    """A clean held-out set drawn with the same tag mix as ``pool``."""
    fresh = synthetic_corpus(grammar, len(pool), max(1, -(-n // len(pool))), seed)
    samples = [s for ds in fresh for s in ds.samples]
    rng = stream(seed, "eval-split")
    order = rng.permutation(len(samples))[:n]
    return ClientDataset(tuple(samples[i] for i in sorted(order)), "validation")


REFERENCE_PAIRS = (("(", ")"), ("[", "]"), ("{", "}"), ("<", ">"))


def reference_task(seed: int, n_tags: int = 8, samples_per_tag: int = 100, corrupt_tags: Sequence[int] = (3,),
                   n_validation: int = 40, n_test: int = 60):
    """The heterogeneous toy task used by the demos and acceptance tests.

    Returns ``(grammar, pool, validation, test)``: four bracket families,
    eight repository tags (one with broken completions), and clean held-out
    validation / test sets.
    """
    grammar = GrammarSpec(REFERENCE_PAIRS, max_depth=4)
    pool = synthetic_corpus(grammar, n_tags, samples_per_tag, seed, corrupt_tags)
    validation = eval_split(pool, grammar, n_validation, seed + 1000)
    test = eval_split(pool, grammar, n_test, seed + 2000)
    return grammar, pool, validation, test


def write_reference_files(out_dir, seed: int = 0) -> dict:
    """Write train / validation / test / vocab files for ``reference_task(seed)``."""
    import os

    grammar, pool, validation, test = reference_task(seed)
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f"{k}.tsv") for k in ("train", "validation", "test")}
    write_dataset(pool, paths["train"])
    write_dataset([validation], paths["validation"])
    write_dataset([test], paths["test"])
    paths["vocab"] = os.path.join(out_dir, "vocab.txt")
    grammar.vocab().to_file(paths["vocab"])
    return paths
