"""
Two-tier training against its baselines
=======================================

Federated groups plus isolated clients, merged once at the end, compared
with merging isolated local models only and with flat FL over everyone.
The communication ledger shows what the central server has to receive.
"""
from hierdt import (AggregationMetric, FLConfig, HierarchyConfig, MergeConfig, SamplingStrategy, ToyModel,
                    evaluate, run_flat_fl, run_hierarchy)
from hierdt.data import reference_task
from hierdt.fed import EvalConfig
from hierdt.partition import partition_dirichlet, partition_groups

grammar, pool, validation, test = reference_task(seed=0)
clients = partition_dirichlet(pool, 0.5, 40, seed=42)
groups, isolated = partition_groups(clients, 4, 4, seed=42)
init = ToyModel.uniform(grammar.vocab(), 3)
strategy = SamplingStrategy("temperature")
metric = AggregationMetric("syntax_accuracy", EvalConfig(validation, grammar, 2, strategy, seed=3))
fl = FLConfig(rounds=10, participation=0.1, epochs_per_round=5, lr=10.0, metric=metric, seed=7,
              zero_score_fallback="uniform")
merge = MergeConfig("dare", 0.5, init, metric, seed=11, zero_score_fallback="uniform")


def accuracy(model):
    return evaluate(model, test, grammar, 4, strategy, seed=13).syntax_accuracy


hier, hier_ledger, audit = run_hierarchy(clients, HierarchyConfig(groups, isolated, fl, merge, init))
merged, merge_ledger, _ = run_hierarchy(clients, HierarchyConfig((), range(40), fl, merge, init))
flat, flat_ledger, _ = run_flat_fl(clients, fl, init)

print(f"{'pipeline':>12} {'syntax acc':>10} {'central':>8} {'in-group':>9}")
for name, model, ledger in (("init", init, None), ("hierarchy", hier, hier_ledger),
                            ("merge only", merged, merge_ledger), ("flat FL", flat, flat_ledger)):
    central = "-" if ledger is None else ledger.central_transfers
    group = "-" if ledger is None else ledger.group_transfers
    print(f"{name:>12} {accuracy(model):>10.3f} {central:>8} {group:>9}")
print("merge weights (group models first):", [round(s, 2) for s in audit.merge_scores])
