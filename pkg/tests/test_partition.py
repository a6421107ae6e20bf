from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierdt import ClientDataset, ConfigurationError, EmptyInputError, Sample
from hierdt.partition import (client_entropy, dirichlet, largest_remainder, partition_dirichlet,
                              partition_groups, size_entropy, write_manifest)
from hierdt.rng import stream


def make_pool(n_tags, per_tag):
    return [ClientDataset(tuple(Sample(("(",) * (i % 3), (")",) * (i % 3) + ("<eos>",), f"tag{t}")
                                for i in range(per_tag)), f"tag{t}") for t in range(n_tags)]


def multiset(datasets):
    return Counter((s.tag, s.prompt, s.completion) for ds in datasets for s in ds.samples)


def test_single_client_receives_everything():
    pool = make_pool(3, 7)
    (only,) = partition_dirichlet(pool, 0.5, 1, seed=0)
    assert len(only) == 21 and multiset([only]) == multiset(pool)


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.01, 1000), n_clients=st.integers(1, 30), seed=st.integers(0, 2**32),
       n_tags=st.integers(1, 4), per_tag=st.integers(1, 25))
def test_conservation(alpha, n_clients, seed, n_tags, per_tag):
    pool = make_pool(n_tags, per_tag)
    with pytest.warns(RuntimeWarning) if n_clients > n_tags * per_tag else _nothing():
        clients = partition_dirichlet(pool, alpha, n_clients, seed)
    assert len(clients) == n_clients
    assert sum(len(c) for c in clients) == n_tags * per_tag
    assert multiset(clients) == multiset(pool)
    for c in clients:
        assert ("empty" in c.flags) == (len(c) == 0)


class _nothing:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def test_small_alpha_concentrates_client_sizes():
    pool = make_pool(8, 500)
    low = size_entropy(partition_dirichlet(pool, 0.1, 40, seed=42))
    high = size_entropy(partition_dirichlet(pool, 100.0, 40, seed=42))
    assert low < high


def test_tag_entropy_nondecreasing_in_alpha():
    pool = make_pool(8, 100)
    means = []
    for alpha in (0.1, 1.0, 10.0, 100.0):
        per_seed = [np.mean([client_entropy(c) for c in partition_dirichlet(pool, alpha, 20, seed) if len(c)])
                    for seed in range(20)]
        means.append(np.mean(per_seed))
    assert all(a <= b for a, b in zip(means, means[1:])), means


def test_partition_is_deterministic():
    pool = make_pool(4, 30)
    a = partition_dirichlet(pool, 0.3, 10, seed=5)
    b = partition_dirichlet(pool, 0.3, 10, seed=5)
    c = partition_dirichlet(pool, 0.3, 10, seed=6)
    assert a == b
    assert a != c


def test_more_clients_than_samples_warns_and_flags():
    with pytest.warns(RuntimeWarning):
        clients = partition_dirichlet(make_pool(1, 3), 1.0, 5, seed=0)
    assert sum("empty" in c.flags for c in clients) >= 2


@pytest.mark.parametrize("alpha", [0.0, -1.0])
def test_bad_alpha(alpha):
    with pytest.raises(ConfigurationError):
        partition_dirichlet(make_pool(1, 3), alpha, 2, 0)


def test_empty_pool():
    with pytest.raises(EmptyInputError):
        partition_dirichlet([], 1.0, 2, 0)


def test_largest_remainder():
    assert largest_remainder(np.array([1, 1, 1]), 10).tolist() == [4, 3, 3]
    assert largest_remainder(np.array([0.5, 0.25, 0.25]), 3).tolist() == [1, 1, 1]
    assert largest_remainder(np.array([5, 3, 2]), 4).tolist() == [2, 1, 1]
    rng = np.random.default_rng(0)
    for _ in range(100):
        shares = rng.random(7)
        total = int(rng.integers(0, 50))
        counts = largest_remainder(shares, total)
        assert counts.sum() == total
        assert np.all(np.abs(counts - shares / shares.sum() * total) < 1)


def test_dirichlet_draws_are_on_simplex_with_right_mean():
    draws = np.array([dirichlet(stream(1, i), 2.0, 4) for i in range(4000)])
    np.testing.assert_allclose(draws.sum(axis=1), 1.0)
    np.testing.assert_allclose(draws.mean(axis=0), 0.25, atol=0.01)
    tiny = dirichlet(stream(0), 1e-4, 5)
    assert tiny.sum() == pytest.approx(1.0)


def test_groups_of_nine():
    groups, isolated = partition_groups(40, 4, 4, seed=42)
    assert [len(g) for g in groups] == [9, 9, 9, 9] and len(isolated) == 4
    assert sorted(sum(groups, []) + isolated) == list(range(40))


def test_degenerate_group_layouts():
    groups, isolated = partition_groups(12, 1, 0, seed=1)
    assert groups == [list(range(12))] and isolated == []
    groups, isolated = partition_groups(12, 0, 12, seed=1)
    assert groups == [] and isolated == list(range(12))


@pytest.mark.parametrize("n_groups,n_isolated", [(0, 0), (5, 6), (11, 0), (0, 3), (-1, 2)])
def test_infeasible_group_layouts(n_groups, n_isolated):
    with pytest.raises(ConfigurationError):
        partition_groups(10, n_groups, n_isolated, seed=0)


def test_manifest(tmp_path):
    clients = partition_dirichlet(make_pool(2, 10), 1.0, 4, seed=0)
    groups, isolated = partition_groups(clients, 1, 2, seed=0)
    path = tmp_path / "m.tsv"
    write_manifest(clients, groups, isolated, path)
    rows = [line.split("\t") for line in path.read_text().splitlines()]
    assert len(rows) == 4
    assert sum(int(r[2]) for r in rows) == 20
    assert sorted(r[1] for r in rows) == ["group0", "group0", "isolated", "isolated"]
