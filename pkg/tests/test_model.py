import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierdt import NumericError, ToyModel, VocabularyMismatchError, cross_entropy, train_local
from hierdt.data import synthetic_corpus
from hierdt.model import cross_entropy_grad, fit, load_model, save_model
from hierdt.rng import stream

from hierdt import GrammarSpec

from conftest import dataset

VOCAB = GrammarSpec((("(", ")"),)).vocab()


def loss_by_hand(values, vocab, context_len, data):
    """Plain-Python mean cross-entropy, written independently of the vectorized path."""
    V = len(vocab)
    base = V + 1
    total = 0.0
    count = 0
    for s in data.samples:
        seq = [vocab.symbols.index(t) for t in s.prompt + s.completion]
        for pos in range(len(s.prompt), len(seq)):
            window = seq[max(0, pos - context_len):pos]
            window = [V] * (context_len - len(window)) + window
            ctx = 0
            for t in window:
                ctx = ctx * base + t
            row = [values[ctx * V + j] for j in range(V)]
            m = max(row)
            z = sum(math.exp(r - m) for r in row)
            p = math.exp(row[seq[pos]] - m) / z
            total -= math.log(max(p, 1e-12))
            count += 1
    return total / count


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_lr_zero_is_identity(paren_vocab, small_data):
    m = ToyModel.gaussian(paren_vocab, 2, seed=1)
    out = train_local(m, small_data, epochs=5, lr=0.0, seed=3)
    assert np.array_equal(out.params.values, m.params.values)
    assert out is not m


def test_original_model_unmodified(paren_vocab, small_data):
    m = ToyModel.uniform(paren_vocab, 2)
    before = m.params.values.copy()
    train_local(m, small_data, 3, 1.0)
    assert np.array_equal(m.params.values, before)


def test_single_sample_loss_strictly_decreases(paren_vocab):
    data = dataset([("( (", ") ) <eos>")] * 5)
    _, losses = fit(ToyModel.uniform(paren_vocab, 2), data, 60, 1.0)
    diffs = np.diff(losses)
    assert np.all(diffs < 0)
    assert losses[-1] < 0.05 * losses[0]


def test_loss_trajectory_matches_finite_difference_descent(paren):
    vocab = paren.vocab()
    pool = synthetic_corpus(paren, 1, 10, seed=7)
    data = pool[0]
    assert len(data) == 10
    model = ToyModel.gaussian(vocab, 2, seed=7)
    lr, epochs = 0.5, 5
    _, losses = fit(model, data, epochs, lr)

    f = lambda x: loss_by_hand(x, vocab, 2, data)
    x = model.params.values.copy()
    ref = []
    for _ in range(epochs):
        ref.append(f(x))
        x = x - lr * fd_grad(f, x)
    ref.append(f(x))
    np.testing.assert_allclose(losses, ref, rtol=0, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), context_len=st.integers(1, 2))
def test_gradient_matches_central_differences(seed, context_len):
    rng = stream(seed, "t")
    data = dataset([("(", ") <eos>"), ("( (", ") ) <eos>"), ("( ) (", ") <eos>"), ("", "( ) <eos>")])
    model = ToyModel.uniform(VOCAB, context_len).with_values(rng.normal(0, 1, (4 ** context_len) * 3))
    g = cross_entropy_grad(model, data)
    num = fd_grad(lambda x: cross_entropy(model.with_values(x), data), model.params.values.copy())
    touched = np.abs(num) > 1e-8
    assert np.all(np.abs(g[~touched]) < 1e-8)
    rel = np.abs(g[touched] - num[touched]) / np.maximum(np.abs(num[touched]), 1e-8)
    assert rel.max() < 1e-4


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), lr=st.floats(0.01, 20.0))
def test_conditionals_normalized_after_training(seed, lr):
    data = dataset([("(", ") <eos>"), ("( (", ") ) <eos>"), ("", "<eos>")])
    m = train_local(ToyModel.gaussian(VOCAB, 2, seed=seed, sigma=1.0), data, 3, lr)
    np.testing.assert_allclose(m.prob_table.sum(axis=1), 1.0, atol=1e-9)


def test_vocabulary_mismatch(paren_vocab):
    data = dataset([("[", "] <eos>")])
    with pytest.raises(VocabularyMismatchError):
        train_local(ToyModel.uniform(paren_vocab, 2), data, 1, 1.0)


def test_non_finite_parameters_rejected(paren_vocab):
    m = ToyModel.uniform(paren_vocab, 1)
    with pytest.raises(NumericError):
        m.with_values(np.full(len(m.params), np.inf))


def test_non_finite_gradient_reports_context(paren_vocab, small_data):
    m = ToyModel.gaussian(paren_vocab, 2, seed=0)
    with pytest.raises(NumericError, match="context"):
        fit(m, small_data, 3, float("inf"))


def test_context_index_roundtrip(paren_vocab):
    m = ToyModel.uniform(paren_vocab, 3)
    for c in range(m.n_contexts):
        assert m.context_index(m.context_tokens(c)) == c
    assert m.context_index([]) == m.context_index([m.pad_id] * 3)


def test_save_load_roundtrip(tmp_path, paren_vocab):
    m = ToyModel.gaussian(paren_vocab, 2, seed=4)
    save_model(m, tmp_path / "m.npz")
    back = load_model(tmp_path / "m.npz")
    assert back.vocab == m.vocab and back.context_len == 2
    assert np.array_equal(back.params.values, m.params.values)
