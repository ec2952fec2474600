"""
Replication study on an eight-receiver node
===========================================

Runs the shipped experiment config: twenty replications per sample size,
five estimators, all links at 1% loss.  The table prints the mean and the
cross-replication variance of the estimated root-link loss.
"""
# %%
import os

from losstomo.harness import ExperimentConfig, run_experiment

here = os.path.dirname(os.path.abspath(__file__))
cfg = ExperimentConfig.from_file(os.path.join(here, "..", "configs", "uniform_loss.cfg"))
report = run_experiment(cfg)
print(report.table())

# %%
# Each cell also carries the variance bound at the true parameters.  BWE
# only has a range.
for c in report.cells:
    if c["n"] == 2700:
        print(c["estimator"], c["var"], c["crlb"])
