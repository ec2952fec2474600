"""
Picking which receivers to use
==============================

Half of the eight receivers sit behind lossy links.  The explicit estimators
only need a few subtrees, and the best ones are those the probes reach most
often, which the receivers can see directly through their end-to-end rates.
"""
# %%
import os

import numpy as np

from losstomo import SeedSpec, build_stats, simulate
from losstomo.analysis import efficiency_order, select_model
from losstomo.estimators import estimate_node
from losstomo.harness import ExperimentConfig

here = os.path.dirname(os.path.abspath(__file__))
cfg = ExperimentConfig.from_file(os.path.join(here, "..", "configs", "lossy_half.cfg"))
topo, params = cfg.topology, cfg.params

order = efficiency_order(params, topo, 1)
print("most informative subsets at the true rates:", order.ranking[:4])
print("least informative:", order.worst)

# %%
losses = []
chosen = {}
for r in range(50):
    stats = build_stats(simulate(topo, params, 2700, SeedSpec(cfg.master_seed, r)), topo)
    spec = select_model(stats, topo, 1, budget=2)
    chosen[spec.tag] = chosen.get(spec.tag, 0) + 1
    losses.append(1 - estimate_node(stats, topo, 1, spec).A_hat)
print("chosen subsets:", dict(sorted(chosen.items(), key=lambda kv: -kv[1])))
print(f"root link loss: mean {np.mean(losses):.4f}, true {1 - params.alpha[1]:.4f}")
