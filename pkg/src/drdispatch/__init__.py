"""Security-constrained dispatch under a data-driven polyhedral uncertainty set."""

__version__ = "0.1.0"

from .network import (  # noqa: E402
    Contingency, NetworkCase, compute_all_ptdfs, compute_ptdf, enumerate_contingencies,
    load_bundled, load_case,
)
from .compact import CompactProblem, build_compact  # noqa: E402
from .uncertainty import PartitionSpec, SampleSet, generate_samples  # noqa: E402
from .drset import RobustSet, build_xirob  # noqa: E402
from .robust import DispatchSolution, solve_drpoly, solve_scenario, solve_worstcase  # noqa: E402
