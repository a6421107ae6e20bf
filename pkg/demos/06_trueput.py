"""
How many samples per request?
=============================

Drawing k samples raises the chance that one is correct, but a batch larger
than the accelerator capacity B costs extra passes.  The rate of correct
designs per unit time therefore peaks, and the peak moves with B.
"""
from hierdt import LatencyModel, PassStats, SamplingStrategy, ToyModel, TrueputProfile, optimal_k
from hierdt import pass_at_k_analytic, pass_at_k_unbiased, strategy_grid_search
from hierdt.data import merge_datasets, reference_task
from hierdt.model import fit

p = 0.3
for capacity in (1, 2, 4, 8):
    opt = optimal_k(TrueputProfile(p, LatencyModel("batched", 1.0, 0.0, capacity), k_max=32))
    curve = " ".join(f"{v:.2f}" for v in opt.curve[:10])
    print(f"B={capacity}: k*={opt.k:2d} trueput*={opt.trueput:.3f}  curve k=1..10: {curve}")

# a per-sample cost moves the optimum below the capacity
opt = optimal_k(TrueputProfile(p, LatencyModel("batched", 1.0, 0.2, 8), k_max=32))
print(f"B=8 with 0.2 s per sample: k*={opt.k}")

# estimating pass@k from n generated samples of which c pass
stats = PassStats(n=20, c=6)
print("pass@k estimated from 6/20 vs analytic with p=0.3:",
      [(k, round(pass_at_k_unbiased(stats, k), 3), round(pass_at_k_analytic(0.3, k), 3)) for k in (1, 2, 5, 10)])

# at a fixed budget of generations, which decoding strategy wins?
grammar, pool, validation, _ = reference_task(seed=0)
model, _ = fit(ToyModel.uniform(grammar.vocab(), 3), merge_datasets(pool), 50, 10.0)
grid = [SamplingStrategy("greedy"), SamplingStrategy("temperature", 0.7), SamplingStrategy("top_k", top_k=3),
        SamplingStrategy("nucleus", top_p=0.9), SamplingStrategy("beam", beam_width=4),
        SamplingStrategy("temperature", 1.0, n_candidates=4)]
ranked, rejected = strategy_grid_search(model, validation, grammar, grid, budget_samples=4, seed=0)
for i, r in enumerate(ranked, 1):
    print(f"{i}. {r.strategy.label():>28} syntax accuracy {r.syntax_accuracy:.3f} over {r.n_designs} designs")
