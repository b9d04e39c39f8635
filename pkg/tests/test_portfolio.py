import json

import numpy as np
import pytest

from oracles import brute_force_hedge, w_tilde_quadrature
from robusthedge.errors import ConditioningError, ShapeError, ValidationError
from robusthedge.model import make_smooth_call, make_smooth_put, quadratic_penalty
from robusthedge.montecarlo import simulate_paths
from robusthedge.portfolio import (LiquidSet, QuadraticMeasure, check_measure_axioms, combine,
                                   gram_system, optimize_static_hedge, product_matrix,
                                   product_matrix_mc, uncertainty_measure)
from robusthedge.reference import price_reference


@pytest.fixture(scope="module")
def calls(unit):
    return [price_reference(make_smooth_call(k, 0.1, 0.2, unit.bounds), unit.vol, unit.grid)
            for k in (0.8, 1.0, 1.2)]


@pytest.fixture(scope="module")
def liquid(unit, calls):
    return LiquidSet.from_greeks(calls, unit.bounds.s0, ["C80", "C100", "C120"])


class TestProductMatrix:
    def test_diagonal_is_the_cash_equivalent(self, unit):
        M = product_matrix([unit.greeks], unit.vol, unit.penalty)
        assert M[0, 0] == pytest.approx(unit.bundle.at_origin(unit.bounds)[0], rel=1e-10)
        assert M[0, 0] == pytest.approx(w_tilde_quadrature(1.0, 1.0, 0.2, 1.0, 0.1), rel=1e-3)

    def test_symmetric_psd(self, unit, calls):
        M = product_matrix(calls + [unit.greeks], unit.vol, unit.penalty)
        assert np.array_equal(M, M.T)
        assert np.linalg.eigvalsh(M)[0] > -1e-12 * np.abs(M).max()

    def test_pde_against_monte_carlo(self, unit, calls):
        M = product_matrix(calls, unit.vol, unit.penalty)
        paths = simulate_paths(unit.vol, 1.0, unit.grid, 20000, 13, unit.bounds)
        m, se = product_matrix_mc(calls, unit.vol, unit.penalty, paths)
        assert m.shape == (3, 3)
        assert np.all(np.abs(M - m) <= 3 * se)

    def test_gram_routes(self, unit, calls, liquid):
        paths = simulate_paths(unit.vol, 1.0, unit.grid, 500, 13, unit.bounds)
        G, b, c = gram_system(unit.greeks, liquid, unit.vol, unit.penalty, route="mc", paths=paths)
        assert G.shape == (3, 3) and b.shape == (3,) and c > 0
        with pytest.raises(ValueError):
            gram_system(unit.greeks, liquid, unit.vol, unit.penalty, route="mc")
        with pytest.raises(ValueError):
            gram_system(unit.greeks, liquid, unit.vol, unit.penalty, route="tree")

    def test_grid_mismatch(self, unit, calls):
        from robusthedge.grid import make_grid
        other = price_reference(unit.put, unit.vol, make_grid(unit.bounds, 401, 100, "log"))
        with pytest.raises(ShapeError):
            product_matrix([calls[0], other], unit.vol, unit.penalty)


class TestStaticHedge:
    def test_book_in_the_liquid_set_is_hedged_perfectly(self, unit, calls, liquid):
        res = optimize_static_hedge(gram_system(calls[1], liquid, unit.vol, unit.penalty),
                                    liquid.labels)
        np.testing.assert_allclose(res.lambda_star, [0, 1, 0], atol=1e-6)
        assert abs(res.mu) <= 1e-8 * res.unhedged

    def test_parity_put_is_hedged_by_its_call(self, unit, calls, liquid):
        res = optimize_static_hedge(gram_system(unit.greeks, liquid, unit.vol, unit.penalty))
        np.testing.assert_allclose(res.lambda_star, [0, 1, 0], atol=1e-5)

    def test_empty_set_leaves_unhedged(self, unit):
        empty = LiquidSet([], [], 1.0)
        res = optimize_static_hedge(gram_system(unit.greeks, empty, unit.vol, unit.penalty))
        assert res.mu == res.unhedged == pytest.approx(unit.bundle.at_origin(unit.bounds)[0],
                                                       rel=1e-10)
        assert res.lambda_star.size == 0

    def test_uncorrelated_load_gives_no_hedge(self):
        res = optimize_static_hedge((np.diag([2.0, 3.0]), np.zeros(2), 5.0))
        assert np.all(res.lambda_star == 0) and res.mu == 5.0

    def test_two_instruments_against_brute_force(self, unit, calls):
        book = price_reference(make_smooth_put(0.9, 0.1, 0.2, unit.bounds), unit.vol, unit.grid)
        two = LiquidSet.from_greeks([calls[0], calls[2]], 1.0)
        G, b, c = gram_system(book, two, unit.vol, unit.penalty)
        res = optimize_static_hedge((G, b, c))
        lam, best = brute_force_hedge(G, b, c)
        np.testing.assert_allclose(res.lambda_star, lam, atol=1e-3)
        assert res.mu <= best + 1e-12
        assert res.mu == pytest.approx(best, rel=1e-4, abs=1e-9 * c)

    def test_first_order_conditions(self, unit, liquid):
        G, b, c = gram_system(unit.greeks.scaled(-0.7), liquid, unit.vol, unit.penalty)
        res = optimize_static_hedge((G, b, c))
        grad = 2 * (G @ res.lambda_star - b)
        assert np.linalg.norm(grad) <= 1e-8 * np.linalg.norm(b)

    def test_duplicate_instrument_splits_the_weight(self, unit, calls):
        dup = LiquidSet.from_greeks([calls[1], calls[1]], 1.0)
        res = optimize_static_hedge(gram_system(calls[1], dup, unit.vol, unit.penalty))
        np.testing.assert_allclose(res.lambda_star, [0.5, 0.5], rtol=1e-6)
        assert res.conditioning == float("inf")

    def test_indefinite_gram(self):
        with pytest.raises(ConditioningError):
            optimize_static_hedge((np.diag([1.0, -1.0]), np.ones(2), 1.0))

    def test_serialisation(self, unit, liquid, tmp_path):
        res = optimize_static_hedge(gram_system(unit.greeks, liquid, unit.vol, unit.penalty),
                                    liquid.labels)
        d = json.loads(res.to_json())
        assert d["labels"] == ["C80", "C100", "C120"] and len(d["lambda_star"]) == 3
        p = tmp_path / "g.csv"
        res.gram_csv(p, header=["route=pde"])
        lines = p.read_text().splitlines()
        assert lines[0] == "# route=pde"
        assert lines[1] == "instrument,C80,C100,C120,load"
        assert len(lines) == 5


class TestMeasure:
    def test_quadratic_scaling(self, unit, liquid):
        m1 = uncertainty_measure(unit.greeks, liquid.subset([0, 2]), unit.vol, unit.penalty)
        m3 = uncertainty_measure(unit.greeks.scaled(3.0), liquid.subset([0, 2]), unit.vol,
                                 unit.penalty)
        assert m1 > 0
        assert m3 == pytest.approx(9 * m1, rel=1e-10)

    def test_cash_and_forward_have_zero_measure(self, unit, calls, liquid):
        const = combine([0.0], [calls[0]], "cash", const=2.0, forward=-1.5)
        assert uncertainty_measure(const, liquid, unit.vol, unit.penalty) == 0.0

    def test_static_hedge_invariance(self, unit, calls, liquid):
        sub = liquid.subset([0, 2])
        hedged = combine([1.0, 0.3, -1.1], [unit.greeks, calls[0], calls[2]])
        a = uncertainty_measure(unit.greeks, sub, unit.vol, unit.penalty)
        b = uncertainty_measure(hedged, sub, unit.vol, unit.penalty)
        assert b == pytest.approx(a, rel=1e-8)

    def test_penalty_curvature_scales_measure(self, unit, liquid):
        sub = liquid.subset([1])
        book = price_reference(make_smooth_put(0.9, 0.1, 0.2, unit.bounds), unit.vol, unit.grid)
        a = uncertainty_measure(book, sub, unit.vol, unit.penalty)
        b = uncertainty_measure(book, sub, unit.vol, quadratic_penalty(2.0))
        assert b == pytest.approx(a / 2, rel=1e-10)

    def test_quadratic_measure_matches_direct_route(self, unit, calls, liquid):
        Q = QuadraticMeasure(calls + [unit.greeks], unit.vol, unit.penalty)
        direct = uncertainty_measure(unit.greeks, liquid.subset([0, 2]), unit.vol, unit.penalty)
        assert Q.mu(np.array([0, 0, 0, 1.0]), [0, 2]) == pytest.approx(direct, rel=1e-8)

    def test_axioms_hold(self, unit, calls):
        puts = [price_reference(make_smooth_put(k, 0.1, 0.2, unit.bounds), unit.vol, unit.grid)
                for k in (0.7, 0.9, 1.1, 1.3)]
        rng = np.random.default_rng(2)
        claims = [combine(rng.normal(size=4), puts, f"book{i}") for i in range(4)]
        rep = check_measure_axioms([[0, 2], [0, 1, 2]], calls, claims, unit.vol, unit.penalty,
                                   seed=1)
        assert rep.passed, rep.to_dict()
        assert rep["monotonicity in the liquid set"].n_cases == 4

    def test_axioms_need_two_claims(self, unit, calls):
        with pytest.raises(ValueError):
            check_measure_axioms([[0]], calls, [calls[1]], unit.vol, unit.penalty)


class TestLiquidSet:
    def test_price_mismatch(self, unit, calls):
        with pytest.raises(ValidationError, match="inconsistent"):
            LiquidSet([calls[0]], [1.0], 1.0)

    def test_count_mismatch(self, calls):
        with pytest.raises(ShapeError):
            LiquidSet(calls, [0.1], 1.0)

    def test_subset_keeps_labels(self, liquid):
        assert liquid.subset([2, 0]).labels == ["C120", "C80"]
        assert len(liquid) == 3
