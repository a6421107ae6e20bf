"""Syntax / semantic accuracy of a model on an evaluation set."""
from __future__ import annotations

from dataclasses import dataclass

from .data import ClientDataset
from .errors import ConfigurationError, EmptyInputError
from .grammar import GrammarSpec, check_syntax
from .model import ToyModel
from .rng import derive_seed
from .sampling import SamplingStrategy, generate

DEFAULT_MAX_LEN = 16


@dataclass(frozen=True)
class EvalReport:
    syntax_accuracy: float
    semantic_accuracy: float
    n_generated: int
    seed: int


def best_of(model: ToyModel, prompt, strategy: SamplingStrategy, grammar: GrammarSpec, max_len: int,
            seed: int) -> list[str]:
    """One design: the first of ``n_candidates`` generations that passes the syntax check."""
    first = None
    for c in range(strategy.n_candidates):
        gen = generate(model, prompt, strategy, max_len, derive_seed(seed, c))
        if check_syntax(list(prompt) + gen, grammar):
            return gen
        if first is None:
            first = gen
    return first


def evaluate(model: ToyModel, eval_set: ClientDataset, grammar: GrammarSpec, n_samples: int,
             strategy: SamplingStrategy, seed: int, max_len: int = DEFAULT_MAX_LEN) -> EvalReport:
    """Generate ``n_samples`` designs per prompt and score them.

    A design is syntactically correct when prompt + generation is accepted by
    the grammar, and semantically correct when the generation equals the
    sample's canonical completion.  Randomness for draw ``j`` of sample ``i``
    comes from the stream keyed ``(seed, i, j)``.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    if len(eval_set) == 0:
        raise EmptyInputError("evaluation set is empty")
    strategy.validate()
    n_syntax = n_semantic = total = 0
    for i, sample in enumerate(eval_set.samples):
        for j in range(n_samples):
            gen = best_of(model, sample.prompt, strategy, grammar, max_len, derive_seed(seed, i, j))
            n_syntax += check_syntax(list(sample.prompt) + gen, grammar)
            n_semantic += tuple(gen) == sample.completion
            total += 1
    return EvalReport(n_syntax / total, n_semantic / total, total, seed)
