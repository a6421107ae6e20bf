"""
Heterogeneous clients from a Dirichlet split
============================================

The concentration parameter controls how unevenly each repository tag is
spread over clients.  Small alpha gives clients dominated by one tag.
"""
import numpy as np

from hierdt.data import reference_task
from hierdt.partition import client_entropy, partition_dirichlet, partition_groups, size_entropy

_, pool, _, _ = reference_task(seed=0)
print("pool:", sum(len(ds) for ds in pool), "samples over", len(pool), "tags")

for alpha in (0.1, 0.5, 1.0, 10.0, 100.0):
    clients = partition_dirichlet(pool, alpha, n_clients=40, seed=42)
    sizes = np.array([len(c) for c in clients])
    tag_h = np.mean([client_entropy(c) for c in clients if len(c)])
    print(f"alpha={alpha:>6}: sizes min/median/max {sizes.min():3d}/{int(np.median(sizes)):3d}/{sizes.max():3d}, "
          f"size entropy {size_entropy(clients):.3f}, mean tag entropy {tag_h:.3f} nats, "
          f"empty clients {sum('empty' in c.flags for c in clients)}")

# the layout used throughout: four federated groups and four isolated clients
clients = partition_dirichlet(pool, 0.5, 40, seed=42)
groups, isolated = partition_groups(clients, n_groups=4, n_isolated=4, seed=42)
for g, members in enumerate(groups):
    print(f"group {g}: clients {members} holding {sum(len(clients[c]) for c in members)} samples")
print("isolated:", isolated)
print("client 0 tag histogram:", clients[groups[0][0]].tag_histogram())
