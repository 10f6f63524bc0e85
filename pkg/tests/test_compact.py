import numpy as np
import pytest
import scipy.sparse as sp

from drdispatch.compact import (DOWN, FAMILY_NAMES, LINE, UP, DecisionLayout, build_compact,
                                count_uncertain_rows, dump_lp, evaluate_row)
from drdispatch.errors import DimensionMismatch, IndexOutOfRange
from drdispatch.network import Contingency, compute_all_ptdfs, compute_ptdf, enumerate_contingencies
from drdispatch.robust import check_solution, solve_nominal

from conftest import small_case


def longhand_rows(case, contingencies, x, xi):
    """Chance-constraint rows written out directly from the dispatch model,
    keyed by (family, contingency label, element)."""
    G = len(case.generators)
    C = len(contingencies)
    p = x[:G]
    rp, rm = x[G:2 * G], x[2 * G:3 * G]
    alpha = x[4 * G:4 * G + C * G].reshape(C, G)
    delta = x[4 * G + C * G:].reshape(C, G)
    mis = sum(w.forecast for w in case.wind_units) - float(np.sum(xi))
    out = {}
    for c, cont in enumerate(contingencies):
        ptdf = compute_ptdf(case, cont)
        col = {b: i for i, b in enumerate(ptdf.buses)}
        for g, gen in enumerate(case.generators):
            out[("reserve_up", cont.label, gen.id)] = alpha[c, g] * mis - rp[g]
            out[("reserve_down", cont.label, gen.id)] = -alpha[c, g] * mis - rm[g]
        for li, lid in enumerate(ptdf.line_ids):
            row = ptdf.entries[li]
            flow = sum(row[col[gen.bus]] * (p[g] + alpha[c, g] * mis + delta[c, g])
                       for g, gen in enumerate(case.generators))
            flow += sum(row[col[w.bus]] * xi[j] for j, w in enumerate(case.wind_units))
            flow += sum(row[col[ld.bus]] * (-ld.demand) for ld in case.loads)
            limit = case.line(lid).flow_limit
            out[("line", cont.label, "+" + lid)] = flow - limit
            out[("line", cont.label, "-" + lid)] = -flow - limit
    return out


def compact_rows(problem, x, xi):
    return {(FAMILY_NAMES[problem.row_family[k]], problem.contingencies[problem.row_contingency[k]].label,
             problem.row_element[k]): evaluate_row(problem, k, x, xi) for k in range(problem.K)}


def build(case, conts=None, eps=0.05):
    conts = conts if conts is not None else enumerate_contingencies(case)
    return build_compact(case, conts, compute_all_ptdfs(case, conts), eps)


class TestLayout:
    def test_bijective(self):
        lay = DecisionLayout(3, 4)
        idx = [lay.p(g) for g in range(3)] + [lay.r_plus(g) for g in range(3)]
        idx += [lay.r_minus(g) for g in range(3)] + [lay.r_con(g) for g in range(3)]
        idx += [lay.alpha(c, g) for c in range(4) for g in range(3)]
        idx += [lay.delta(c, g) for c in range(4) for g in range(3)]
        assert sorted(idx) == list(range(lay.n_x))
        assert lay.n_x == 4 * 3 + 2 * 4 * 3
        assert len(lay.names()) == lay.n_x

    def test_decode_shape(self):
        lay = DecisionLayout(2, 3)
        parts = lay.decode(np.arange(lay.n_x, dtype=float))
        assert parts["alpha"].shape == (3, 2)
        assert parts["alpha"][1, 0] == lay.alpha(1, 0)
        with pytest.raises(DimensionMismatch):
            lay.decode(np.zeros(3))


class TestCounts:
    def test_intact_only_formula(self, triangle):
        prob = build(triangle, [Contingency.intact()])
        assert prob.K == 2 * 1 * (2 + 3) == 10

    def test_rts24_count(self, rts24, rts24_problem):
        conts = rts24_problem.contingencies
        assert rts24_problem.K == count_uncertain_rows(rts24, conts)
        n_line_outs = sum(c.kind == "line" for c in conts)
        assert rts24_problem.K == 2 * len(conts) * (12 + 38) - 2 * n_line_outs
        assert rts24_problem.n_x == 4 * 12 + 2 * len(conts) * 12

    def test_bilinear_only_in_alpha_columns(self, rts24_problem):
        alpha = set(rts24_problem.layout.alpha_columns().tolist())
        assert set(np.unique(rts24_problem.F_cols).tolist()) <= alpha
        assert np.isfinite(rts24_problem.h).all()

    def test_family_counts(self, rts24_problem):
        C = len(rts24_problem.contingencies)
        assert np.sum(rts24_problem.row_family == UP) == C * 12
        assert np.sum(rts24_problem.row_family == DOWN) == C * 12
        assert np.sum(rts24_problem.row_family == LINE) == rts24_problem.K - 2 * C * 12


class TestEvaluateRow:
    def test_zero_vectors(self, rts24_problem):
        x = np.zeros(rts24_problem.n_x)
        xi = np.zeros(rts24_problem.n_xi)
        for k in (0, 17, rts24_problem.K - 1):
            assert evaluate_row(rts24_problem, k, x, xi) == pytest.approx(-rts24_problem.h[k])

    def test_up_reserve_hand_value(self):
        winds = [(f"w{i}", 2, 100.0, 80.0, 120.0) for i in range(6)]
        case = small_case([1, 2], [("1-2", 1, 2, 0.1, 1000.0)], [("g", 1, 0.0, 900.0, 100.0, 5.0)],
                          winds=winds, loads={2: 700.0})
        prob = build(case, [Contingency.intact()])
        k = next(k for k in range(prob.K) if prob.row_family[k] == UP)
        x = np.zeros(prob.n_x)
        x[prob.layout.alpha(0, 0)] = 0.5
        x[prob.layout.r_plus(0)] = 10.0
        assert evaluate_row(prob, k, x, np.full(6, 100.0)) == pytest.approx(-10.0)

    def test_line_load_only(self):
        case = small_case([1, 2], [("1-2", 1, 2, 0.1, 50.0)], [("g", 1, 0.0, 200.0, 10.0, 5.0)],
                          winds=[("w", 1, 0.0, 0.0, 10.0)], loads={2: 100.0})
        prob = build(case, [Contingency.intact()])
        k = prob.row_element.index("+1-2")
        assert evaluate_row(prob, k, np.zeros(prob.n_x), np.zeros(1)) == pytest.approx(50.0)

    def test_bad_index(self, rts24_problem):
        with pytest.raises(IndexOutOfRange):
            evaluate_row(rts24_problem, rts24_problem.K, np.zeros(rts24_problem.n_x), np.zeros(6))


class TestLonghandOracle:
    @pytest.mark.parametrize("seed", range(5))
    def test_rts24_random_points(self, rts24, rts24_problem, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-50, 150, rts24_problem.n_x)
        xi = rng.uniform(80, 120, rts24_problem.n_xi)
        got = compact_rows(rts24_problem, x, xi)
        want = longhand_rows(rts24, rts24_problem.contingencies, x, xi)
        assert got.keys() == want.keys()
        for fam in FAMILY_NAMES:
            a = np.array([v for key, v in got.items() if key[0] == fam])
            b = np.array([want[key] for key in got if key[0] == fam])
            np.testing.assert_allclose(a, b, atol=1e-9, rtol=0)
            assert a.sum() == pytest.approx(b.sum(), abs=1e-6)

    def test_affine_form_matches(self, rts24_problem):
        rng = np.random.default_rng(7)
        x = rng.normal(size=rts24_problem.n_x)
        xi = rng.normal(size=rts24_problem.n_xi)
        off, coef = rts24_problem.affine_in_xi(x)
        direct = np.array([evaluate_row(rts24_problem, k, x, xi) for k in range(0, rts24_problem.K, 97)])
        np.testing.assert_allclose((off + coef @ xi)[::97], direct, atol=1e-9)

    def test_rows_at_matches_evaluation(self, rts24_problem):
        rng = np.random.default_rng(8)
        rows = rng.choice(rts24_problem.K, 40, replace=False)
        pts = rng.uniform(80, 120, (40, rts24_problem.n_xi))
        x = rng.normal(size=rts24_problem.n_x)
        M, rhs = rts24_problem.rows_at(rows, pts)
        direct = np.array([evaluate_row(rts24_problem, k, x, p) for k, p in zip(rows, pts)])
        np.testing.assert_allclose(M @ x - rhs, direct, atol=1e-9)


class TestDeterministicRows:
    def test_nominal_solution_invariants(self, rts24, rts24_problem):
        sol = solve_nominal(rts24_problem)
        assert check_solution(rts24_problem, sol) == []
        G = len(rts24.generators)
        for c, cont in enumerate(rts24_problem.contingencies):
            if cont.kind == "gen":
                gc = rts24.generator_position(cont.element)
                assert sol.alpha[c, gc] == pytest.approx(0.0, abs=1e-9)
                assert sol.delta[c, gc] == pytest.approx(-sol.p[gc], abs=1e-6)
                others = [g for g in range(G) if g != gc]
                assert np.all(sol.delta[c, others] >= -1e-9)
                assert np.all(sol.delta[c, others] <= sol.r_con[others] + 1e-6)
            if cont.kind == "line":
                assert np.allclose(sol.delta[c], 0.0, atol=1e-9)
        assert sol.p.sum() == pytest.approx(rts24.total_demand - rts24.total_forecast, abs=1e-6)

    def test_equalities_are_paired(self, triangle):
        prob = build(triangle, [Contingency.intact()])
        labels = prob.det_labels
        assert "balance:le" in labels and "balance:ge" in labels
        le, ge = labels.index("balance:le"), labels.index("balance:ge")
        np.testing.assert_array_equal(prob.A[le].toarray(), -prob.A[ge].toarray())
        assert prob.b[le] == -prob.b[ge]

    def test_no_wind_merges_rows(self):
        case = small_case([1, 2], [("1-2", 1, 2, 0.1, 50.0)], [("g", 1, 0.0, 200.0, 10.0, 5.0)], loads={2: 40.0})
        # a lone generator cannot survive its own outage, so intact only
        prob = build(case, [Contingency.intact()])
        assert prob.K == 0 and prob.n_xi == 0
        assert prob.A.shape[0] > 0
        sol = solve_nominal(prob)
        assert sol.p[0] == pytest.approx(40.0)

    def test_reserve_shortfall_warning(self):
        case = small_case([1, 2], [("1-2", 1, 2, 0.1, 500.0)], [("g", 1, 0.0, 500.0, 5.0, 5.0)],
                          winds=[("w", 2, 100.0, 0.0, 200.0)], loads={2: 200.0})
        prob = build(case)
        assert any("reserve" in m for m in prob.diagnostics)

    def test_mismatched_ptdfs(self, triangle):
        conts = enumerate_contingencies(triangle)
        ptdfs = compute_all_ptdfs(triangle, conts)
        with pytest.raises(DimensionMismatch):
            build_compact(triangle, conts, ptdfs[:-1], 0.05)
        with pytest.raises(DimensionMismatch):
            build_compact(triangle, conts, ptdfs[::-1], 0.05)
        with pytest.raises(ValueError):
            build_compact(triangle, conts, ptdfs, 1.5)


def test_dump_lp_lists_every_row(triangle):
    prob = build(triangle)
    text = dump_lp(prob)
    assert text.startswith(f"# n_x={prob.n_x}")
    assert text.count("\n") == 1 + 2 + 1 + prob.A.shape[0] + 1 + prob.K
    assert "line[intact, +1-2]" in text


def test_flat_F_consistent(triangle):
    prob = build(triangle)
    flat = prob._flat_F()
    for k in range(prob.K):
        _, _, Fk, _ = prob.row(k)
        block = flat[k * prob.n_xi:(k + 1) * prob.n_xi].toarray().T
        np.testing.assert_array_equal(block, Fk.toarray())
    assert sp.issparse(flat)
