import os

import numpy as np
import pytest

from drdispatch import build_compact, compute_all_ptdfs, enumerate_contingencies, load_bundled
from drdispatch.network import case_from_dict
from drdispatch.uncertainty import PartitionSpec, default_generator


@pytest.fixture(scope="session")
def rts24():
    return load_bundled("rts24")


@pytest.fixture(scope="session")
def rts24_problem(rts24):
    conts = enumerate_contingencies(rts24)
    return build_compact(rts24, conts, compute_all_ptdfs(rts24, conts), 0.05)


@pytest.fixture(scope="session")
def rts24_generator(rts24):
    return default_generator(rts24)


@pytest.fixture(scope="session")
def rts24_partition(rts24, rts24_generator):
    return PartitionSpec.from_case(rts24, rts24_generator.groups)


def small_case(buses, lines, gens, winds=(), loads=None, slack=None):
    """Build a case from terse tuples.

    lines: (id, from, to, x, limit); gens: (id, bus, pmin, pmax, rmax, h);
    winds: (id, bus, forecast, lo, hi); loads: {bus: MW}.
    """
    data = {
        "buses": list(buses),
        "lines": [dict(id=i, from_bus=f, to_bus=t, reactance=x, flow_limit=lim) for i, f, t, x, lim in lines],
        "generators": [dict(id=i, bus=b, p_min=lo, p_max=hi, r_max=r, h=h, h_plus=h / 2, h_minus=h / 3,
                            h_con=h / 2) for i, b, lo, hi, r, h in gens],
        "wind_units": [dict(id=i, bus=b, forecast=fc, support_lower=lo, support_upper=hi)
                       for i, b, fc, lo, hi in winds],
        "loads": [dict(bus=b, demand=d) for b, d in (loads or {}).items()],
        "slack_bus": slack,
        "excluded_lines": [],
    }
    return case_from_dict(data)


@pytest.fixture
def triangle():
    return small_case(
        [1, 2, 3],
        [("1-2", 1, 2, 0.1, 100.0), ("1-3", 1, 3, 0.1, 100.0), ("2-3", 2, 3, 0.1, 100.0)],
        [("g1", 1, 0.0, 200.0, 50.0, 10.0), ("g2", 3, 0.0, 200.0, 50.0, 20.0)],
        winds=[("w1", 2, 30.0, 20.0, 40.0)],
        loads={2: 120.0},
        slack=3,
    )


def random_connected_case(rng, n_bus, extra_edges):
    """Random spanning tree plus extra edges, random reactances."""
    lines = []
    order = rng.permutation(n_bus) + 1
    for i in range(1, n_bus):
        a, b = int(order[i]), int(order[rng.integers(0, i)])
        lines.append((f"t{i}", a, b, float(rng.uniform(0.05, 0.5)), 100.0))
    for j in range(extra_edges):
        a, b = rng.choice(n_bus, 2, replace=False) + 1
        lines.append((f"e{j}", int(a), int(b), float(rng.uniform(0.05, 0.5)), 100.0))
    gens = [("g1", 1, 0.0, 500.0, 100.0, 10.0)]
    return small_case(list(range(1, n_bus + 1)), lines, gens, loads={n_bus: 50.0}, slack=int(rng.integers(1, n_bus + 1)))


@pytest.fixture(params=["numba", "numpy"])
def kernel_impl(request):
    """Yields the kernels module functions for one implementation."""
    from drdispatch import kernels
    from drdispatch._accel import NUMBA_AVAILABLE
    if request.param == "numba" and not NUMBA_AVAILABLE:
        pytest.skip("numba unavailable or disabled")
    suffix = "_nb" if request.param == "numba" else "_np"
    return {name: getattr(kernels, name + suffix)
            for name in ("box_hyperplane_distance", "worst_case_prob", "jacobi_eig", "count_violations")}


def pytest_report_header(config):
    from drdispatch._accel import backend_name
    return f"drdispatch kernels: {backend_name()} (DRDISPATCH_NO_NUMBA={os.environ.get('DRDISPATCH_NO_NUMBA', '')})"


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
