import json

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import small_case
from drdispatch import (build_compact, compute_all_ptdfs, enumerate_contingencies, solve_drpoly,
                        solve_scenario, solve_worstcase)
from drdispatch.compact import CompactProblem, DecisionLayout
from drdispatch.drset import RobustSet, build_xirob, point_set, polyhedron_set, support_set
from drdispatch.errors import DimensionMismatch, InfeasibleRobust
from drdispatch.lp import INFEASIBLE, OPTIMAL, solve_lp
from drdispatch.robust import (DispatchSolution, VertexSet, check_solution, duality_audit,
                               reformulate_robust, scenario_lp, solve_nominal, support_function)
from drdispatch.uncertainty import PartitionSpec, SampleSet, generate_samples
from oracles import polytope_vertices


def toy_problem(x_value, h):
    """One decision fixed to ``x_value`` by deterministic rows and one
    uncertain row ``0.5 x + x xi <= h``."""
    layout = DecisionLayout(1, 0)
    n = layout.n_x
    A = sp.csr_matrix(np.vstack([np.eye(n), -np.eye(n)]))
    fixed = np.zeros(n)
    fixed[0] = x_value
    E = np.zeros((1, n))
    E[0, 0] = 0.5
    return CompactProblem(
        c=np.zeros(n), A=A, b=np.concatenate([fixed, -fixed]), E=sp.csr_matrix(E), f=np.zeros((1, 1)),
        F_rows=np.array([0]), F_cols=np.array([0]), F_xi=np.array([0]), F_vals=np.array([1.0]),
        h=np.array([h]), epsilon=0.05, layout=layout, n_xi=1, contingencies=[],
        row_family=np.array([0]), row_contingency=np.array([0]), row_element=["x"])


UNIT = polyhedron_set([[1.0], [-1.0]], [1.0, 0.0])


@pytest.mark.parametrize("x", [-1.0, 0.4])
@pytest.mark.parametrize("gap", [-1e-3, 1e-3])
def test_scalar_toy_reformulation(x, gap):
    threshold = max(x, 0.0) + 0.5 * x
    res = solve_lp(reformulate_robust(toy_problem(x, threshold + gap), UNIT))
    assert res.status == (OPTIMAL if gap > 0 else INFEASIBLE)


def test_scalar_toy_dual_value():
    res = solve_lp(reformulate_robust(toy_problem(0.4, 10.0), UNIT))
    y = res.x[4:]
    # G'y = F'x forces y1 - y2 = 0.4, so g'y = y1 >= 0.4 = max(x, 0)
    assert y[0] - y[1] == pytest.approx(0.4)
    assert y @ UNIT.g >= 0.4 - 1e-9


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        reformulate_robust(toy_problem(0.0, 1.0), polyhedron_set(np.eye(2), np.ones(2)))


@pytest.fixture(scope="module")
def reduced(rts24):
    """rts24 with the intact case and five outages: same structure, small K."""
    conts = enumerate_contingencies(rts24)[:6]
    return build_compact(rts24, conts, compute_all_ptdfs(rts24, conts), 0.05)


@pytest.fixture(scope="module")
def reduced_set(rts24_generator, rts24_partition):
    s = generate_samples(rts24_generator, 50, 0)
    return s, build_xirob(s, rts24_partition, [2, 2], 1e-3, 0.05)


def test_lp_counts(reduced, reduced_set):
    _, rs = reduced_set
    lp = reformulate_robust(reduced, rs)
    K, q, n_xi = reduced.K, rs.q, reduced.n_xi
    assert lp.n == reduced.n_x + K * q
    assert lp.A_ub.shape[0] == reduced.A.shape[0] + K
    assert lp.A_eq.shape[0] == K * n_xi


def test_full_rts24_counts(rts24_problem, reduced_set):
    _, rs = reduced_set
    lp = reformulate_robust(rts24_problem, rs)
    assert (rts24_problem.K, rs.q) == (4926, 20)
    assert lp.n == 1248 + 4926 * 20
    assert lp.A_ub.shape[0] + lp.A_eq.shape[0] == rts24_problem.A.shape[0] + 4926 * 7


def test_cuts_match_dual(reduced, reduced_set):
    _, rs = reduced_set
    dual = solve_drpoly(reduced, rs, formulation="dual")
    cuts = solve_drpoly(reduced, rs, formulation="cuts")
    assert cuts.cost == pytest.approx(dual.cost, rel=1e-9)
    assert cuts.stats["formulation"] == "cuts" and dual.stats["formulation"] == "dual"
    assert dual.y.shape == (reduced.K, rs.q) and (dual.y >= -1e-9).all()
    for sol in (dual, cuts):
        assert duality_audit(reduced, sol, rs)[0] <= 1e-6
        assert check_solution(reduced, sol) == []
    with pytest.raises(ValueError):
        solve_drpoly(reduced, rs, formulation="magic")


def test_support_set_is_worstcase(reduced, rts24_partition):
    a = solve_worstcase(reduced, rts24_partition)
    b = solve_drpoly(reduced, support_set(rts24_partition), formulation="dual")
    assert a.method == "worstcase"
    assert a.cost == pytest.approx(b.cost, rel=1e-9)


def test_point_set_is_single_scenario(reduced, rts24_generator):
    xi0 = generate_samples(rts24_generator, 1, 9).samples[0]
    a = solve_drpoly(reduced, point_set(xi0), formulation="dual")
    b = solve_scenario(reduced, SampleSet(xi0[None, :]))
    assert a.cost == pytest.approx(b.cost, rel=1e-7)


def test_forecast_scenario_is_deterministic_dispatch(reduced, rts24):
    forecast = np.array([w.forecast for w in rts24.wind_units])
    a = solve_scenario(reduced, SampleSet(forecast[None, :]))
    b = solve_nominal(reduced)
    assert a.cost == pytest.approx(b.cost, rel=1e-7)


def test_scenario_in_sample(reduced, reduced_set):
    s, _ = reduced_set
    sol = solve_scenario(reduced, s)
    offset, coef = reduced.affine_in_xi(sol.x)
    assert (offset[None, :] + s.samples @ coef.T).max() <= 1e-6
    assert sol.stats["n_samples"] == 50


def test_cost_ordering(reduced, reduced_set, rts24_partition):
    s, rs = reduced_set
    scen = solve_scenario(reduced, s).cost
    dr = solve_drpoly(reduced, rs).cost
    worst = solve_worstcase(reduced, rts24_partition).cost
    tol = 1e-7 * worst
    assert dr <= worst + tol
    if rs.contains(s.samples).all():
        assert scen <= dr + tol


def test_no_uncertainty_equals_nominal():
    case = small_case([1, 2], [("1-2", 1, 2, 0.1, 100.0)],
                      [("g1", 1, 0.0, 200.0, 50.0, 10.0), ("g2", 2, 0.0, 200.0, 50.0, 30.0)],
                      loads={2: 80.0}, slack=1)
    conts = enumerate_contingencies(case)
    prob = build_compact(case, conts, compute_all_ptdfs(case, conts), 0.05)
    assert prob.n_xi == 0 and prob.K == 0
    sol = solve_drpoly(prob, RobustSet(np.zeros((0, 0)), np.zeros(0)))
    assert sol.cost == pytest.approx(solve_nominal(prob).cost)


def _three_wind_case(seed):
    rng = np.random.default_rng(seed)
    lines = [("1-2", 1, 2, 0.1, 150.0), ("2-3", 2, 3, 0.1, 150.0), ("3-4", 3, 4, 0.1, 150.0),
             ("4-1", 4, 1, 0.1, 150.0), ("1-3", 1, 3, 0.15, 150.0)]
    gens = [("g1", 1, 0.0, 300.0, 80.0, 10.0 + rng.uniform(0, 5)),
            ("g2", 3, 0.0, 300.0, 80.0, 20.0 + rng.uniform(0, 5)),
            ("g3", 4, 0.0, 300.0, 80.0, 15.0 + rng.uniform(0, 5))]
    winds = [("w1", 2, 20.0, 10.0, 30.0), ("w2", 4, 20.0, 10.0, 30.0), ("w3", 3, 20.0, 10.0, 30.0)]
    case = small_case([1, 2, 3, 4], lines, gens, winds, loads={2: 120.0, 4: 90.0}, slack=1)
    conts = enumerate_contingencies(case)
    return build_compact(case, conts, compute_all_ptdfs(case, conts), 0.05)


def _random_polytope(rng, n):
    centre = np.full(n, 20.0)
    extra = rng.normal(size=(int(rng.integers(0, 8 - 2 * n + 1)), n))
    G = np.vstack([np.eye(n), -np.eye(n), extra])
    g = np.concatenate([centre + rng.uniform(1, 8, n), -centre + rng.uniform(1, 8, n),
                        extra @ centre + rng.uniform(0.5, 6, extra.shape[0])])
    return G, g


@pytest.mark.parametrize("seed", range(8))
def test_vertex_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    prob = _three_wind_case(seed)
    G, g = _random_polytope(rng, 3)
    assert G.shape[0] <= 8
    verts = polytope_vertices(G, g)
    rs = polyhedron_set(G, g)
    dual = solve_drpoly(prob, rs, formulation="dual")
    by_vertices = solve_lp(scenario_lp(prob, verts))
    assert by_vertices.status == OPTIMAL
    assert dual.cost == pytest.approx(by_vertices.objective, abs=1e-6 * max(1.0, abs(dual.cost)))


def test_vertex_set_support_function():
    rng = np.random.default_rng(4)
    G, g = _random_polytope(rng, 3)
    rs = polyhedron_set(G, g)
    coef = rng.normal(size=(10, 3))
    verts = polytope_vertices(G, g)
    np.testing.assert_allclose(support_function(rs, coef), (coef @ verts.T).max(axis=1), atol=1e-9)
    assert len(VertexSet(rs).all_vertices()) == len(verts)


def test_vertex_set_blocks(rts24_partition):
    vs = VertexSet(support_set(rts24_partition))
    assert len(vs.blocks) == 6 and all(v.shape == (2, 1) for _, v in vs.blocks)
    assert vs.all_vertices().shape == (64, 6)


def test_infeasible_diagnosis():
    case = small_case([1, 2], [("1-2", 1, 2, 0.1, 500.0)],
                      [("g1", 1, 0.0, 300.0, 5.0, 10.0), ("g2", 1, 0.0, 300.0, 5.0, 20.0)],
                      winds=[("w1", 2, 50.0, 0.0, 100.0)], loads={2: 150.0}, slack=1)
    conts = [c for c in enumerate_contingencies(case) if c.kind == "intact"]
    prob = build_compact(case, conts, compute_all_ptdfs(case, conts), 0.05)
    part = PartitionSpec.from_case(case)
    with pytest.raises(InfeasibleRobust) as err:
        solve_worstcase(prob, part)
    diag = err.value.diagnosis
    assert diag["family"] in ("reserve_up", "reserve_down")
    assert diag["violation"] > 0
    assert diag["contingency"] == conts[0].label


def test_solution_json_round_trip(reduced, reduced_set, rts24):
    _, rs = reduced_set
    sol = solve_drpoly(reduced, rs)
    d = json.loads(sol.dumps(reduced, rts24))
    assert [gen["id"] for gen in d["generators"]] == [gen.id for gen in rts24.generators]
    assert len(d["contingencies"]) == len(reduced.contingencies)
    back = DispatchSolution.from_dict(d, reduced)
    np.testing.assert_array_equal(back.x, sol.x)
    assert back.cost == sol.cost and back.theta == sol.theta
