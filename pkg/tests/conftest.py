import numpy as np
import pytest

from hierdt import ClientDataset, GrammarSpec, Sample, ToyModel, Vocab
from hierdt.grammar import EOS


@pytest.fixture
def paren():
    return GrammarSpec((("(", ")"),), max_depth=4)


@pytest.fixture
def paren_vocab(paren):
    return paren.vocab()


def one_hot_model(vocab: Vocab, context_len: int, choose) -> ToyModel:
    """Model whose next token is ``choose(context_ids)`` with probability 1 (up to float underflow)."""
    m = ToyModel.uniform(vocab, context_len)
    table = np.full((m.n_contexts, len(vocab)), -1000.0)
    for c in range(m.n_contexts):
        table[c, choose(m.context_tokens(c))] = 0.0
    return ToyModel.from_table(vocab, context_len, table)


def dataset(pairs, tag="t") -> ClientDataset:
    return ClientDataset(tuple(Sample(p.split(), c.split(), tag) for p, c in pairs), tag)


@pytest.fixture
def small_data():
    return dataset([("(", ") <eos>"), ("( (", ") ) <eos>"), ("", "<eos>"), ("( ) (", ") <eos>")])


def random_models(rng, vocab, n, context_len=2, scale=1.0):
    base = ToyModel.uniform(vocab, context_len)
    return [base.with_values(rng.normal(0, scale, len(base.params))) for _ in range(n)]
