import csv
import math

import numpy as np
import pytest

from hierdt import (ConfigurationError, DraftHeads, NumericError, ToyModel, Vocab, build_tree,
                    online_kl_update, simulate_decode, verify)
from hierdt.model import log_softmax
from hierdt.pardecode import (TokenTree, kl_and_grad, learn_online, parallel_decode, served_contexts,
                              stationary_stream, write_kl_trace, write_sweep)
from hierdt.rng import stream

from conftest import one_hot_model

VOCAB = Vocab(("a", "b", "c", "<eos>"))


def synthetic_target(seed, vocab_size=8, context_len=2, sigma=1.5, eos_penalty=3.0):
    vocab = Vocab(tuple(f"t{i}" for i in range(vocab_size - 1)) + ("<eos>",))
    table = ToyModel.gaussian(vocab, context_len, seed, sigma).logit_table.copy()
    table[:, vocab.eos_id] -= eos_penalty
    return ToyModel.from_table(vocab, context_len, table)


def prompts_for(target, n, length, seed):
    rng = stream(seed, "prompts")
    non_eos = [i for i in range(len(target.vocab)) if i != target.vocab.eos_id]
    return [[non_eos[j] for j in rng.integers(0, len(non_eos), length)] for _ in range(n)]


def plain_greedy(target, prompt, max_len):
    hist, out = list(prompt), []
    while len(out) < max_len:
        tok = target.greedy_next(hist + out)
        out.append(tok)
        if tok == target.vocab.eos_id:
            break
    return out


def cycle_target():
    # a -> b -> c -> a ... never emits eos
    return one_hot_model(VOCAB, 1, lambda ctx: (ctx[-1] + 1) % 3 if ctx[-1] < 3 else 0)


def one_hot_heads(vocab, context_len, depth, choose):
    n_ctx = (len(vocab) + 1) ** context_len
    logits = np.full((depth, n_ctx, len(vocab)), -1000.0)
    for d in range(depth):
        for c in range(n_ctx):
            logits[d, c, choose(d, c)] = 0.0
    return DraftHeads(vocab, context_len, logits)


def test_head_distributions_normalized():
    heads = DraftHeads.gaussian(VOCAB, 2, 3, seed=0, sigma=2.0)
    for d in (1, 2, 3):
        for c in range(25):
            assert heads.probs(d, c).sum() == pytest.approx(1.0, abs=1e-9)


def test_size_one_tree_is_best_child():
    heads = DraftHeads.gaussian(VOCAB, 1, 2, seed=1, sigma=1.0)
    tree = build_tree(heads, [0], 1)
    assert tree.size == 1
    assert tree.tokens[1] == int(np.argmax(heads.probs(1, 0)))


def test_one_hot_heads_give_a_single_path():
    heads = one_hot_heads(VOCAB, 1, 4, lambda d, c: (d + 1) % 3)
    tree = build_tree(heads, [0], 10)
    assert tree.size == 4
    assert tree.path(4) == [1, 2, 0, 1]
    assert all(len(ch) <= 1 for ch in tree.children)


def test_uniform_heads_expand_breadth_first():
    vocab = Vocab(("x", "y", "<eos>"))
    tree = build_tree(DraftHeads.uniform(vocab, 1, 2), [0], 7)
    assert tree.size == 7
    assert tree.depths[1:4] == [1, 1, 1] and tree.tokens[1:4] == [0, 1, 2]
    assert tree.depths[4:] == [2, 2, 2, 2]
    assert tree.parents[4:7] == [1, 1, 1] and tree.parents[7] == 2


def test_tree_size_budget_and_shape():
    heads = DraftHeads.gaussian(VOCAB, 2, 3, seed=2, sigma=1.0)
    for size in (1, 5, 17, 40):
        tree = build_tree(heads, [1, 2], size)
        assert tree.size == min(size, 4 + 16 + 64)
        assert all(p < i for i, p in enumerate(tree.parents) if i > 0)
        assert max(tree.depths) <= 3
    with pytest.raises(ConfigurationError):
        build_tree(heads, [1], 0)


def test_trees_are_nested_in_size():
    heads = DraftHeads.gaussian(VOCAB, 2, 3, seed=3, sigma=1.0)
    small, big = build_tree(heads, [0, 1], 6), build_tree(heads, [0, 1], 12)
    assert big.tokens[:7] == small.tokens and big.parents[:7] == small.parents


def test_verify_hand_trace():
    a, b, c = 0, 1, 2
    target = one_hot_model(VOCAB, 1, lambda ctx: {a: b}.get(ctx[-1], a))
    tree = TokenTree((c,))
    tree.add(-1, c)
    n1 = tree.add(0, a)
    tree.add(n1, c)
    committed, n_acc = verify(target, tree)
    assert committed == [a, b] and n_acc == 1


def test_verify_accepts_all_when_draft_equals_target():
    target = cycle_target()
    heads = DraftHeads.from_target(target, 4)
    tree = build_tree(heads, [0], 4)
    committed, n_acc = verify(target, tree)
    assert n_acc == 4 and committed == [1, 2, 0, 1, 2]


def test_orthogonal_draft_commits_one_token():
    target = cycle_target()
    heads = one_hot_heads(VOCAB, 1, 3, lambda d, c: 3)  # always proposes eos, which the target never emits
    stats = simulate_decode(target, heads, [[0], [1]], tree_size=3, ceiling=8, max_len=10)
    assert stats.tokens_per_step == 1.0 and stats.accepted_drafts == 0


def test_accepted_eos_ends_the_step():
    target = one_hot_model(VOCAB, 1, lambda ctx: 3)
    heads = one_hot_heads(VOCAB, 1, 2, lambda d, c: 3)
    committed, _ = verify(target, build_tree(heads, [0], 2))
    assert committed == [3]


def test_verify_mode():
    with pytest.raises(ConfigurationError):
        verify(cycle_target(), build_tree(DraftHeads.uniform(VOCAB, 1, 1), [0], 1), mode="sampled")


@pytest.mark.parametrize("seed", range(5))
def test_single_node_tree_speedup_bounds(seed):
    target = synthetic_target(seed)
    heads = DraftHeads.gaussian(target.vocab, 2, 3, seed=seed, sigma=1.0)
    stats = simulate_decode(target, heads, prompts_for(target, 5, 3, seed), 1, 32, 24)
    assert 1.0 <= stats.speedup <= 2.0
    assert stats.accepted_total >= stats.steps


def test_perfect_path_speedup():
    target = cycle_target()
    heads = DraftHeads.from_target(target, 3)
    stats = simulate_decode(target, heads, [[0]], tree_size=3, ceiling=8, max_len=400)
    assert stats.speedup == pytest.approx(4.0, abs=0.05)


def test_cost_model():
    target = cycle_target()
    heads = DraftHeads.from_target(target, 3)
    stats = simulate_decode(target, heads, [[0]], tree_size=64, ceiling=32, max_len=40)
    assert stats.relative_cost == 2.0
    with pytest.raises(ConfigurationError):
        simulate_decode(target, heads, [[0]], 1, 0, 10)


def test_parallel_decoding_matches_plain_greedy():
    target = synthetic_target(11)
    heads = DraftHeads.gaussian(target.vocab, 2, 4, seed=5, sigma=2.0)
    for prompt in prompts_for(target, 30, 3, 12):
        for size in (1, 7, 40):
            out, _ = parallel_decode(target, heads, prompt, size, 32)
            assert out == plain_greedy(target, prompt, 32)


def test_kl_zero_when_heads_equal_target():
    target = synthetic_target(4)
    heads = DraftHeads.from_target(target, 3)
    for ctx in served_contexts(target, prompts_for(target, 5, 3, 4), 10):
        new, kl = online_kl_update(heads, target, ctx, lr=0.5)
        assert kl == 0.0
        assert np.array_equal(new.logits, heads.logits)


def test_kl_uniform_against_point_mass():
    target = one_hot_model(VOCAB, 1, lambda ctx: 0)
    heads = DraftHeads.uniform(VOCAB, 1, 1)
    _, forward = online_kl_update(heads, target, [1], lr=0.0)
    _, reverse = online_kl_update(heads, target, [1], lr=0.0, direction="reverse")
    # forward: uniform mass on three clamped zeros; reverse: the textbook ln 4
    assert forward == pytest.approx(math.log(0.25) + 0.75 * math.log(1e12), rel=1e-9)
    assert reverse == pytest.approx(math.log(4), abs=1e-9)


@pytest.mark.parametrize("direction", ["forward", "reverse"])
@pytest.mark.parametrize("seed", range(4))
def test_kl_gradient_matches_finite_differences(direction, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(0, 1.5, (3, 5))
    log_o = log_softmax(rng.normal(0, 2.0, (3, 5)), axis=1)
    _, grad = kl_and_grad(z, log_o, direction)
    h = 1e-5
    fd = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        fd[idx] = (kl_and_grad(zp, log_o, direction)[0].sum() - kl_and_grad(zm, log_o, direction)[0].sum()) / (2 * h)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)


def test_kl_update_validation():
    target = synthetic_target(0)
    heads = DraftHeads.uniform(target.vocab, 2, 2)
    with pytest.raises(ConfigurationError):
        online_kl_update(heads, target, [1], 0.1)
    with pytest.raises(ConfigurationError):
        online_kl_update(heads, target, [1, 2], -0.1)
    with pytest.raises(ConfigurationError):
        kl_and_grad(np.zeros((1, 3)), np.zeros((1, 3)), "sideways")


def test_learning_reduces_kl_on_heterogeneous_stream():
    target = synthetic_target(1)
    pool = served_contexts(target, prompts_for(target, 20, 3, 1), 32)
    heads = DraftHeads.uniform(target.vocab, 2, 4)
    _, kls = learn_online(heads, target, stationary_stream(pool, 400, 2), lr=0.5)
    assert np.mean(kls[-50:]) < 0.5 * np.mean(kls[:50])


def test_more_drafting_accepts_more_tokens():
    target = synthetic_target(3)
    prompts = prompts_for(target, 20, 3, 3)
    pool = served_contexts(target, prompts, 32)
    heads, _ = learn_online(DraftHeads.uniform(target.vocab, 2, 6), target, stationary_stream(pool, 300, 4), 0.5)
    accepted = [simulate_decode(target, heads, prompts, s, 32, 32).mean_accepted_per_step for s in (1, 4, 16, 64)]
    assert accepted == sorted(accepted) and accepted[-1] > accepted[0]


def test_heads_layout_checks():
    with pytest.raises(Exception):
        DraftHeads(VOCAB, 1, np.zeros((2, 3, 4)))
    with pytest.raises(NumericError):
        DraftHeads(VOCAB, 1, np.full((1, 5, 4), np.nan))


def test_csv_writers(tmp_path):
    target = cycle_target()
    heads = DraftHeads.from_target(target, 2)
    stats = [simulate_decode(target, heads, [[0]], s, 4, 12) for s in (1, 2)]
    write_sweep(stats, tmp_path / "s.csv")
    rows = list(csv.DictReader((tmp_path / "s.csv").open()))
    assert list(rows[0]) == ["tree_size", "acceptance_ratio", "tokens_per_step", "relative_cost", "speedup"]
    assert [int(r["tree_size"]) for r in rows] == [1, 2]
    write_kl_trace([], tmp_path / "k.csv")
    assert (tmp_path / "k.csv").read_text().splitlines() == ["update_idx,kl"]
