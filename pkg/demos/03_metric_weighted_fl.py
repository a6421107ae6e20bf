"""
Federated learning with a quality-weighted average
==================================================

FedAvg weighs client models by data size.  Here the server can instead
weigh each trained client model by the syntax accuracy it reaches on a
held-out validation set.  The weights are printed per client so the effect
of the metric can be inspected round by round.
"""
import numpy as np

from hierdt import AggregationMetric, FLConfig, ToyModel, evaluate, run_fl
from hierdt.fed import EvalConfig
from hierdt.data import reference_task
from hierdt.sampling import SamplingStrategy

grammar, pool, validation, test = reference_task(seed=0)
# one client per tag; tag 3 has its completions truncated, which the validation score may or may not expose
clients = list(pool)
init = ToyModel.uniform(grammar.vocab(), 3)
strategy = SamplingStrategy("temperature")
ev = EvalConfig(validation, grammar, n_samples=2, strategy=strategy, seed=5)

for kind in ("sample_ratio", "syntax_accuracy"):
    metric = AggregationMetric(kind, ev if kind != "sample_ratio" else None)
    cfg = FLConfig(rounds=5, participation=1.0, epochs_per_round=5, lr=10.0, metric=metric, seed=1,
                   zero_score_fallback="uniform")
    model, records = run_fl(clients, init, cfg)
    acc = evaluate(model, test, grammar, 4, strategy, seed=9).syntax_accuracy
    print(f"{kind:>16}: test syntax accuracy {acc:.3f}")
    for rec in records:
        print(f"    round {rec.round} weights", np.round(rec.weights, 3))
