"""
Simulate probes and recover link losses
=======================================

Build the 15-link binary tree of depth three, push a million probes through
it and estimate every link's loss rate from what the eight receivers saw.
"""
# %%
import numpy as np

from losstomo import SeedSpec, estimate_tree, simulate
from losstomo.topology import complete_tree, derive_params

topo = complete_tree(2, 3)
rng = np.random.default_rng(1)
alpha = np.concatenate([[1.0], rng.uniform(0.97, 0.999, topo.n_links)])
params = derive_params(topo, alpha)

obs = simulate(topo, params, 1_000_000, SeedSpec(master_seed=1))
print(obs)

# %%
report = estimate_tree(obs, topo)
print(f"{'link':>4} {'true loss':>10} {'estimate':>10}")
for k in range(1, topo.n_nodes):
    print(f"{k:>4} {1 - alpha[k]:>10.5f} {report.links[k].loss_hat:>10.5f}")

# %%
# Any subset estimator can be plugged in per node; here an explicit pair
# estimator at every internal node.
from losstomo.estimators import EstimatorSpec

pairs = estimate_tree(obs, topo, lambda stats, topo, k: EstimatorSpec("ibe", subset=topo.children(k)[:2]))
err = [abs(pairs.links[k].loss_hat - (1 - alpha[k])) for k in range(1, topo.n_nodes)]
print("largest absolute error with pair estimators:", max(err))
