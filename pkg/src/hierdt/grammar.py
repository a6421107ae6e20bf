"""Vocabulary and the balanced-bracket toy language.

The language stands in for a hardware description language: a "design" is a
string of bracket pairs, nested at most ``max_depth`` deep and terminated by
a single end-of-sequence token.  Acceptance is decided by a stack machine, so
the syntax check is exact and cheap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConfigurationError, VocabularyMismatchError

EOS = "<eos>"


@dataclass(frozen=True)
class Vocab:
    symbols: tuple[str, ...]
    eos: str = EOS
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if len(symbols) < 2:
            raise ConfigurationError("vocab needs at least two symbols")
        if len(set(symbols)) != len(symbols):
            raise ConfigurationError("vocab symbols must be unique")
        if symbols.count(self.eos) != 1:
            raise ConfigurationError(f"vocab must contain {self.eos!r} exactly once")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def eos_id(self) -> int:
        return self._index[self.eos]

    def __contains__(self, symbol) -> bool:
        return symbol in self._index

    def encode(self, tokens: Iterable[str]) -> list[int]:
        try:
            return [self._index[t] for t in tokens]
        except KeyError as exc:
            raise VocabularyMismatchError(f"token {exc.args[0]!r} not in vocab") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.symbols[i] for i in ids]

    @classmethod
    def from_file(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            symbols = [line.strip() for line in fh if line.strip()]
        return cls(tuple(symbols))

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.symbols) + "\n")


@dataclass(frozen=True)
class GrammarSpec:
    """Balanced brackets over ``pairs`` with nesting depth at most ``max_depth``."""

    pairs: tuple[tuple[str, str], ...] = (("(", ")"),)
    max_depth: int = 4
    eos: str = EOS

    def __post_init__(self):
        pairs = tuple(tuple(p) for p in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if self.max_depth < 1:
            raise ConfigurationError("max_depth must be positive")
        flat = [s for p in pairs for s in p]
        if not pairs or len(set(flat)) != len(flat) or self.eos in flat:
            raise ConfigurationError("bracket symbols must be distinct and exclude eos")

    @property
    def openers(self) -> dict[str, str]:
        return {o: c for o, c in self.pairs}

    @property
    def closers(self) -> dict[str, str]:
        return {c: o for o, c in self.pairs}

    def vocab(self) -> Vocab:
        return Vocab(tuple(s for p in self.pairs for s in p) + (self.eos,), eos=self.eos)


def check_syntax(seq: Sequence[str], grammar: GrammarSpec) -> bool:
    """True iff ``seq`` is balanced, within depth, and ends with a single eos."""
    if not seq or seq[-1] != grammar.eos:
        return False
    openers = grammar.openers
    closers = grammar.closers
    stack: list[str] = []
    for tok in seq[:-1]:
        if tok in openers:
            stack.append(tok)
            if len(stack) > grammar.max_depth:
                return False
        elif tok in closers:
            if not stack or stack.pop() != closers[tok]:
                return False
        else:
            # stray eos or foreign symbol
            return False
    return not stack


def open_stack(prefix: Sequence[str], grammar: GrammarSpec) -> list[str] | None:
    """Unclosed openers of a valid prefix, or None if the prefix is already invalid."""
    openers = grammar.openers
    closers = grammar.closers
    stack: list[str] = []
    for tok in prefix:
        if tok in openers:
            stack.append(tok)
            if len(stack) > grammar.max_depth:
                return None
        elif tok in closers:
            if not stack or stack.pop() != closers[tok]:
                return None
        else:
            return None
    return stack


def canonical_completion(prompt: Sequence[str], grammar: GrammarSpec) -> list[str]:
    """Shortest completion closing every bracket left open by ``prompt``."""
    stack = open_stack(prompt, grammar)
    if stack is None:
        raise ConfigurationError(f"prompt {' '.join(prompt)!r} is not a valid prefix")
    openers = grammar.openers
    return [openers[o] for o in reversed(stack)] + [grammar.eos]
