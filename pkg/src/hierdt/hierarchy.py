"""Two-tier hierarchical training: FL per group plus isolated local training, then one merge."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

from .data import ClientDataset
from .errors import ConfigurationError
from .fed import FLConfig, RoundRecord, _federate, score
from .ledger import CommLedger
from .merge import MergeConfig, merge
from .model import ToyModel, train_local
from .rng import derive_seed


@dataclass(frozen=True, eq=False)
class HierarchyConfig:
    groups: tuple[tuple[int, ...], ...]
    isolated: tuple[int, ...]
    fl_cfg: FLConfig
    merge_cfg: MergeConfig
    init: ToyModel
    local_epochs: int | None = None  # None: rounds * epochs_per_round
    outer_rounds: int = 1
    workers: int = 1

    def __post_init__(self):
        groups = tuple(tuple(g) for g in self.groups)
        isolated = tuple(self.isolated)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "isolated", isolated)
        seen = [c for g in groups for c in g] + list(isolated)
        if len(seen) != len(set(seen)):
            raise ConfigurationError("groups and isolated clients must be pairwise disjoint")
        if any(len(g) == 0 for g in groups):
            raise ConfigurationError("empty federated group")
        if not seen:
            raise ConfigurationError("no clients assigned")
        if self.outer_rounds < 1:
            raise ConfigurationError("outer_rounds must be >= 1")
        if self.local_epochs is not None and self.local_epochs < 0:
            raise ConfigurationError("local_epochs must be >= 0")

    @property
    def effective_local_epochs(self) -> int:
        if self.local_epochs is not None:
            return self.local_epochs
        return self.fl_cfg.rounds * self.fl_cfg.epochs_per_round


@dataclass
class Audit:
    """Per-stage snapshots of a hierarchical run."""

    group_models: list[ToyModel] = field(default_factory=list)
    group_rounds: list[list[RoundRecord]] = field(default_factory=list)
    local_models: list[ToyModel] = field(default_factory=list)
    merge_ids: list[str] = field(default_factory=list)
    merge_models: list[ToyModel] = field(default_factory=list)
    merge_scores: list[float] = field(default_factory=list)
    merge_sizes: list[int] = field(default_factory=list)
    global_models: list[ToyModel] = field(default_factory=list)


def _ledger_for(model: ToyModel) -> CommLedger:
    return CommLedger(bytes_per_transfer=len(model.params) * 8)


def run_hierarchy(clients: Sequence[ClientDataset], cfg: HierarchyConfig,
                  ledger: CommLedger | None = None) -> tuple[ToyModel, CommLedger, Audit]:
    """Tier 1 (FL within each group, local training for isolated clients), then Tier 2 merge.

    Every model gathered for the merge is charged as one central transfer,
    so a single outer round adds exactly ``G + N_L`` central transfers.
    """
    if len(clients) == 0:
        raise ConfigurationError("no clients")
    n = len(clients)
    for c in [c for g in cfg.groups for c in g] + list(cfg.isolated):
        if not 0 <= c < n:
            raise ConfigurationError(f"client index {c} out of range for {n} clients")
    vocab = cfg.init.vocab
    for ds in clients:
        missing = ds.tokens() - set(vocab.symbols)
        if missing:
            raise ConfigurationError(f"client {ds.group_tag!r} uses tokens outside the vocab: {sorted(missing)}")
    ledger = ledger if ledger is not None else _ledger_for(cfg.init)
    audit = Audit()
    current = cfg.init
    for outer in range(cfg.outer_rounds):
        def fl_group(g):
            members = cfg.groups[g]
            fl_cfg = replace(cfg.fl_cfg, seed=derive_seed(cfg.fl_cfg.seed, "group", g, outer))
            return _federate([clients[c] for c in members], current, fl_cfg, ledger, members, central=False)

        def lt_client(c):
            return train_local(current, clients[c], cfg.effective_local_epochs, cfg.fl_cfg.lr,
                               derive_seed(cfg.fl_cfg.seed, "local", c, outer))

        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                group_out = list(pool.map(fl_group, range(len(cfg.groups))))
                local_models = list(pool.map(lt_client, cfg.isolated))
        else:
            group_out = [fl_group(g) for g in range(len(cfg.groups))]
            local_models = [lt_client(c) for c in cfg.isolated]

        gathered = [m for m, _ in group_out] + local_models
        sizes = [sum(len(clients[c]) for c in g) for g in cfg.groups] + [len(clients[c]) for c in cfg.isolated]
        ledger.charge_central(len(gathered))
        scores = [score(cfg.merge_cfg.metric, m, s) for m, s in zip(gathered, sizes)]
        merge_cfg = cfg.merge_cfg
        if merge_cfg.method == "dare":
            merge_cfg = replace(merge_cfg, base=merge_cfg.base if merge_cfg.base is not None else current,
                                seed=derive_seed(merge_cfg.seed, "merge", outer))
        current = merge(gathered, scores, merge_cfg)

        audit.group_models.extend(m for m, _ in group_out)
        audit.group_rounds.extend(r for _, r in group_out)
        audit.local_models.extend(local_models)
        audit.merge_ids.extend([f"group{g}" for g in range(len(cfg.groups))] +
                               [f"local{c}" for c in cfg.isolated])
        audit.merge_models.extend(gathered)
        audit.merge_scores.extend(scores)
        audit.merge_sizes.extend(sizes)
        audit.global_models.append(current)
    return current, ledger, audit


def run_flat_fl(clients: Sequence[ClientDataset], cfg: FLConfig, init: ToyModel,
                ledger: CommLedger | None = None) -> tuple[ToyModel, CommLedger, list[RoundRecord]]:
    """Standard FL over all clients: every upload goes to the central server."""
    if len(clients) == 0:
        raise ConfigurationError("no clients")
    ledger = ledger if ledger is not None else _ledger_for(init)
    model, records = _federate(list(clients), init, cfg, ledger, None, central=True)
    return model, ledger, records


def run_local_only(clients: Sequence[ClientDataset], init: ToyModel, epochs: int, lr: float,
                   seed: int = 0) -> list[ToyModel]:
    """Every client trains alone; nothing is communicated."""
    return [train_local(init, ds, epochs, lr, derive_seed(seed, "local", c)) for c, ds in enumerate(clients)]
