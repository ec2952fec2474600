"""Loss tomography on multicast trees.

Simulate multicast probing over a tree, count what the receivers see, and
estimate every link's loss rate with the full-likelihood estimator or one of
the explicit composite-likelihood estimators.  The analysis module gives the
matching Fisher information and variance bounds.
"""

from .analysis import (
    PassRates,
    beta_subset,
    bwe_info_bounds,
    efficiency_order,
    fisher,
    psi,
    select_model,
    worked_example,
)
from .estimators import EstimatorSpec, EstimateReport, NodeEstimate, bwe, estimate_tree, ibe, omle, rse
from .simulator import ObservationMatrix, SeedSpec, empirical_rates, simulate
from .statistics import ExpectedStats, StatsTable, build_stats, enumerate_subsets, inclusion_exclusion_check
from .topology import (
    LinkParams,
    Topology,
    complete_tree,
    derive_params,
    links_from_paths,
    load_topology,
    parse_topology,
    serialize_topology,
    star_tree,
)

__version__ = "0.1.0"
