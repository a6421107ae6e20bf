"""Dirichlet client partitioning and group / isolated assignment."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ClientDataset
from .errors import ConfigurationError, EmptyInputError
from .rng import stream


@dataclass(frozen=True)
class PartitionPlan:
    alpha: float
    n_clients: int
    seed: int
    assignment: tuple[int, ...]  # pooled sample index -> client index
    empty_clients: tuple[int, ...] = ()


def largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total``, proportional to ``shares``.

    Leftover units go to the largest fractional parts; ties to the lower index.
    """
    shares = np.asarray(shares, dtype=np.float64)
    exact = shares / shares.sum() * total
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        frac = exact - counts
        order = np.lexsort((np.arange(len(frac)), -frac))
        counts[order[:short]] += 1
    return counts


def dirichlet(rng: np.random.Generator, alpha: float, n: int) -> np.ndarray:
    """Dirichlet(alpha, ..., alpha) via normalized Gamma draws."""
    g = rng.standard_gamma(alpha, n)
    total = g.sum()
    if total == 0:
        # tiny alpha can underflow every draw; put all mass on the largest log-draw
        out = np.zeros(n)
        out[int(np.argmax(np.log(rng.random(n)) / alpha))] = 1.0
        return out
    return g / total


def plan_dirichlet(pool: Sequence[ClientDataset], alpha: float, n_clients: int, seed: int) -> PartitionPlan:
    if not pool or sum(len(ds) for ds in pool) == 0:
        raise EmptyInputError("pool is empty")
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha}")
    if n_clients < 1:
        raise ConfigurationError("n_clients must be >= 1")
    assignment: list[int] = []
    for t, ds in enumerate(pool):
        rng = stream(seed, "dirichlet", t)
        counts = largest_remainder(dirichlet(rng, alpha, n_clients), len(ds))
        owner = np.repeat(np.arange(n_clients), counts)
        # shuffle which samples of this tag land in which block
        order = rng.permutation(len(ds))
        tag_assign = np.empty(len(ds), dtype=np.int64)
        tag_assign[order] = owner
        assignment.extend(tag_assign.tolist())
    sizes = np.bincount(assignment, minlength=n_clients)
    empty = tuple(int(i) for i in np.flatnonzero(sizes == 0))
    return PartitionPlan(alpha, n_clients, seed, tuple(assignment), empty)


def partition_dirichlet(pool: Sequence[ClientDataset], alpha: float, n_clients: int, seed: int) -> list[ClientDataset]:
    """Split per-tag pools across ``n_clients`` with Dirichlet(alpha) shares per tag.

    Empty clients are allowed; they carry the ``"empty"`` flag and trigger a
    warning when there are more clients than samples.
    """
    plan = plan_dirichlet(pool, alpha, n_clients, seed)
    total = sum(len(ds) for ds in pool)
    if n_clients > total:
        warnings.warn(f"{n_clients} clients for {total} samples: some clients are empty", RuntimeWarning)
    buckets: list[list] = [[] for _ in range(n_clients)]
    flat = [s for ds in pool for s in ds.samples]
    for sample, client in zip(flat, plan.assignment):
        buckets[client].append(sample)
    return [ClientDataset(tuple(b), f"client{c:03d}", ("empty",) if not b else ())
            for c, b in enumerate(buckets)]


def partition_groups(clients: Sequence[ClientDataset] | int, n_groups: int, n_isolated: int,
                     seed: int) -> tuple[list[list[int]], list[int]]:
    """Shuffle client indices, take ``n_isolated`` as isolated, deal the rest round-robin."""
    n = clients if isinstance(clients, int) else len(clients)
    if n_groups < 0 or n_isolated < 0:
        raise ConfigurationError("group and isolated counts must be non-negative")
    if n_groups + n_isolated < 1:
        raise ConfigurationError("need at least one group or isolated client")
    if n_groups + n_isolated > n:
        raise ConfigurationError(f"{n_groups} groups + {n_isolated} isolated exceeds {n} clients")
    if n_groups == 0 and n_isolated != n:
        raise ConfigurationError("with no groups every client must be isolated")
    order = stream(seed, "groups").permutation(n).tolist()
    isolated = sorted(order[:n_isolated])
    rest = order[n_isolated:]
    groups = [sorted(rest[g::n_groups]) for g in range(n_groups)]
    return groups, isolated


def client_entropy(ds: ClientDataset) -> float:
    hist = np.array(list(ds.tag_histogram().values()), dtype=float)
    if hist.sum() == 0:
        return 0.0
    p = hist / hist.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def size_entropy(clients: Sequence[ClientDataset]) -> float:
    """Entropy of the client-size distribution normalized by log(n_clients)."""
    sizes = np.array([len(c) for c in clients], dtype=float)
    if len(sizes) < 2:
        return 1.0
    p = sizes[sizes > 0] / sizes.sum()
    return float(-(p * np.log(p)).sum() / np.log(len(sizes)))


def write_manifest(clients: Sequence[ClientDataset], groups: Sequence[Sequence[int]], isolated: Sequence[int],
                   path) -> None:
    """``client_id TAB group_or_isolated TAB sample_count TAB tag histogram`` per line."""
    role = {c: "isolated" for c in isolated}
    for g, members in enumerate(groups):
        for c in members:
            role[c] = f"group{g}"
    with open(path, "w", encoding="utf-8") as fh:
        for c, ds in enumerate(clients):
            hist = ",".join(f"{k}:{v}" for k, v in ds.tag_histogram().items())
            fh.write(f"{c}\t{role.get(c, 'unassigned')}\t{len(ds)}\t{hist}\n")
