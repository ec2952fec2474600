"""
Variance of four estimators at one node
=======================================

A node with three receivers below it, every link passing probes with
probability ``alpha``.  How much does each estimator pay, per probe, compared
with measuring the path directly?
"""
# %%
from losstomo import analysis
from losstomo.estimators import OMLE, EstimatorSpec
from losstomo.topology import derive_params, star_tree

for alpha in (0.9, 0.99, 0.999):
    v = analysis.worked_example(alpha)
    print(f"alpha={alpha}: direct {v.direct:.6f}  omle {v.omle:.6f}  "
          f"pair {v.ibe_pair:.6f}  triple {v.ibe_triple:.6f}")

# %%
# The closed forms are special cases of the general bound A/delta - A^2.
alpha = 0.99
topo = star_tree(3)
params = derive_params(topo, [1.0] + [alpha] * 4)
for spec in (OMLE, EstimatorSpec("ibe", subset=(2, 3)), EstimatorSpec("ibe")):
    res = analysis.node_info(params, topo, 1, spec)
    print(f"{spec.tag:<10} delta={res.delta:.6f}  bound per probe={res.crlb_var_per_obs:.6f}")
