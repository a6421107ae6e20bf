"""
Draft heads, token trees and the compute ceiling
================================================

Draft heads guess several future tokens at once; the target accepts the
longest path it agrees with.  Heads are learned online from nothing but
the contexts seen while serving.  Bigger trees accept more tokens per step
until the tree no longer fits in the idle compute, then speedup falls.
"""
import numpy as np

from hierdt import DraftHeads, simulate_decode
from hierdt.cli import decode_setup
from hierdt.config import parse_config
from hierdt.pardecode import learn_online, parallel_decode, served_contexts, stationary_stream

cfg = parse_config({"decode": {"learn_steps": 500}})
target, prompts = decode_setup(cfg)
pool = served_contexts(target, prompts, cfg.decode.max_len)
print(f"target over {len(target.vocab)} tokens; {len(pool)} contexts served for {len(prompts)} prompts")

heads = DraftHeads.uniform(target.vocab, target.context_len, cfg.decode.depth)
heads, kls = learn_online(heads, target, stationary_stream(pool, 500, seed=1), lr=0.5)
print("KL per 100 updates:", [round(float(np.mean(kls[i:i + 100])), 3) for i in range(0, 500, 100)])

print(f"{'tree':>5} {'accepted/step':>13} {'tokens/step':>11} {'cost':>5} {'speedup':>7}")
for size in (1, 2, 4, 8, 16, 24, 32, 48, 64, 96, 128):
    s = simulate_decode(target, heads, prompts, size, ceiling=32, max_len=cfg.decode.max_len)
    print(f"{size:>5} {s.mean_accepted_per_step:>13.2f} {s.tokens_per_step:>11.2f} {s.relative_cost:>5.2f} "
          f"{s.speedup:>7.2f}")

out, steps = parallel_decode(target, heads, prompts[0], 24, cfg.decode.max_len)
print("first prompt decoded in", len(steps), "steps for", len(out), "tokens:",
      " ".join(target.vocab.decode(out)))
