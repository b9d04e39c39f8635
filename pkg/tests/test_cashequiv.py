import numpy as np
import pytest

from oracles import g_hat_node, w_tilde_quadrature
from robusthedge.cashequiv import (barrier_cash_equivalent, cash_equivalent_bundle,
                                   compute_w_tilde, indifference_prices, source_first_order)
from robusthedge.errors import PenaltyValidationError, UtilityDegeneracyError
from robusthedge.grid import GridField, make_grid
from robusthedge.model import (AffineG, DomainBounds, PenaltySpec, UtilitySpec, Vanilla,
                               make_knockout_call, make_smooth_call, quadratic_penalty,
                               scale_payoff, taper_vol)
from robusthedge.reference import GreeksField, price_any, price_reference

# int_0^1 E[(0.2 Gamma$)^2 / 2] du for the unit put (0.1y smoothing), from
# oracles.w_tilde_quadrature(1, 1, 0.2, 1, 0.1)
W_TILDE_UNIT_PUT = 0.09012392112376752


def flat_gamma_greeks(grid, gamma):
    z = np.zeros((grid.times.size, grid.n_space))
    return GreeksField(GridField(grid, z), GridField(grid, z), GridField(grid, z + gamma))


class TestSource:
    def test_zero_gamma(self, unit):
        fwd = price_reference(Vanilla(AffineG(0.0, 1.0)), unit.vol, unit.grid)
        g = source_first_order(fwd, unit.penalty, unit.vol)
        assert np.max(np.abs(g.values)) < 1e-14

    def test_arithmetic(self, unit):
        g = source_first_order(flat_gamma_greeks(unit.grid, 198.0), unit.penalty, unit.vol)
        j = unit.grid.space_index(1.0)
        assert g.values[0, j] == pytest.approx(784.08, rel=1e-12)
        assert np.all(g.values[:, [0, -1]] == 0.0)

    def test_peak_follows_cash_gamma(self, unit):
        g = source_first_order(unit.greeks, unit.penalty, unit.vol)
        row, cg = g.values[0], unit.greeks.cash_gamma.values[0]
        assert np.argmax(row) == np.argmax(cg)
        assert row[0] == 0 and row[-1] == 0
        assert row[np.argmin(np.abs(unit.grid.space - 3.0))] < 1e-4 * row.max()

    def test_low_curvature_rejected(self, unit):
        with pytest.raises(PenaltyValidationError, match="below 1/K"):
            source_first_order(unit.greeks, quadratic_penalty(0.05), unit.vol)


class TestFirstOrder:
    def test_matches_quadrature_oracle(self, unit):
        assert unit.bundle.at_origin(unit.bounds)[0] == pytest.approx(W_TILDE_UNIT_PUT, rel=1e-3)

    def test_oracle_is_reproducible(self):
        assert w_tilde_quadrature(1.0, 1.0, 0.2, 1.0, 0.1) == pytest.approx(W_TILDE_UNIT_PUT,
                                                                             rel=1e-9)

    def test_forward_has_none(self, unit):
        fwd = price_reference(Vanilla(AffineG(0.0, 1.0)), unit.vol, unit.grid)
        b = cash_equivalent_bundle(fwd, unit.penalty, unit.utility, unit.vol)
        for f in (b.w_tilde, b.w_hat, b.theta_tilde, b.sigma_tilde):
            assert np.max(np.abs(f.values)) < 1e-9

    def test_zero_data(self, unit):
        w = unit.bundle.w_tilde.values
        assert np.all(w[-1] == 0) and np.all(w[:, 0] == 0) and np.all(w[:, -1] == 0)

    def test_quadratic_in_quantity(self, unit):
        double = price_any(scale_payoff(unit.put, 2.0), unit.vol, unit.grid)
        w2 = compute_w_tilde(double, unit.penalty, unit.vol).values
        w1 = unit.bundle.w_tilde.values
        np.testing.assert_allclose(w2, 4 * w1, rtol=1e-8, atol=1e-8 * np.abs(w1).max())

    def test_inverse_in_curvature(self, unit):
        w3 = compute_w_tilde(unit.greeks, quadratic_penalty(3.0), unit.vol).values
        w1 = unit.bundle.w_tilde.values
        np.testing.assert_allclose(w3, w1 / 3, rtol=1e-8, atol=1e-8 * np.abs(w1).max())

    def test_y_dependent_penalty_varies_in_y(self, unit):
        pen = PenaltySpec("quadratic", beta=0.5)
        w = compute_w_tilde(unit.greeks, pen, unit.vol)
        j = unit.grid.space_index(1.0)
        col = w.values[0, j]
        # f'' = exp(0.5 y) so w~ scales like exp(-0.5 y) exactly
        np.testing.assert_allclose(col, col[4] * np.exp(-0.5 * (w.y_nodes - w.y_nodes[4])),
                                   rtol=1e-10)


class TestControls:
    def test_sigma_sign_follows_gamma(self):
        b = DomainBounds(T=1.0, s0=1.0, K=10.0)
        v = taper_vol(0.2, b)
        g = make_grid(b, 401, 100, "log")
        call = price_reference(make_smooth_call(1.0, 0.1, 0.2, b), v, g)
        for gf in (call, call.scaled(-1.0)):
            bd = cash_equivalent_bundle(gf, quadratic_penalty(), UtilitySpec(), v,
                                        second_order=False)
            st = bd.sigma_tilde.values[..., 0]
            vss = gf.cash_gamma.values
            big = np.abs(vss) > 1e-8
            assert np.all(np.sign(st[big]) == np.sign(vss[big]))

    def test_theta_equals_w_s_for_y_free_penalty(self, unit):
        assert np.array_equal(unit.bundle.theta_tilde.values, unit.bundle.w_s.values)

    def test_theta_with_y_dependent_penalty(self, unit):
        pen = PenaltySpec("quadratic", beta=0.5)
        bd = cash_equivalent_bundle(unit.greeks, pen, unit.utility, unit.vol, second_order=False)
        y = bd.y_nodes
        expect = bd.w_s.values + (unit.utility.d1(y) / unit.utility.d2(y)) * bd.w_sy.values
        np.testing.assert_allclose(bd.theta_tilde.values, expect, rtol=1e-12, atol=1e-15)
        assert np.abs(bd.w_sy.values).max() > 0

    def test_degenerate_utility(self, unit):
        with pytest.raises(UtilityDegeneracyError):
            cash_equivalent_bundle(unit.greeks, unit.penalty, UtilitySpec(1e-13), unit.vol)


class TestSecondOrder:
    def nodes(self, grid, n=10, seed=4):
        rng = np.random.default_rng(seed)
        ks = rng.integers(0, grid.n_time, n)
        js = rng.integers(150, 250, n)
        return zip(ks, js, rng.integers(0, 9, n))

    def check(self, bundle, greeks, pen, ut, vol):
        g = greeks.grid
        for k, j, m in self.nodes(g):
            s = g.space[j]
            sb = float(vol(g.times[k], s))
            y = bundle.y_nodes[m]
            vss = greeks.cash_gamma.values[k, j] / s ** 2
            f2, f3 = float(pen.d2(sb, sb, y)), float(pen.d3(sb, sb, y))
            st = sb * s * s * vss / f2
            pick = lambda f: float(f.values[k, j, m])
            expect = g_hat_node(st, sb, s, vss, f2, f3, pick(bundle.w_tilde), pick(bundle.w_s),
                                pick(bundle.w_ss), pick(bundle.w_y), pick(bundle.w_sy),
                                float(ut.d1(y)), float(ut.d2(y)))
            assert pick(bundle.g_hat) == pytest.approx(expect, rel=1e-10, abs=1e-14)

    def test_reduced_form_on_random_nodes(self, unit):
        self.check(unit.bundle, unit.greeks, unit.penalty, unit.utility, unit.vol)

    def test_full_form_with_skewed_y_dependent_penalty(self, unit):
        pen = PenaltySpec("exponential", scale=1.0, kappa=3.0, beta=0.3)
        ut = UtilitySpec(2.0)
        bd = cash_equivalent_bundle(unit.greeks, pen, ut, unit.vol)
        self.check(bd, unit.greeks, pen, ut, unit.vol)

    def test_zero_gamma(self, unit):
        fwd = price_reference(Vanilla(AffineG(1.0, 1.0)), unit.vol, unit.grid)
        b = cash_equivalent_bundle(fwd, unit.penalty, unit.utility, unit.vol)
        assert np.max(np.abs(b.g_hat.values)) < 1e-12
        assert np.max(np.abs(b.w_hat.values)) < 1e-12

    def test_w_hat_converges_under_refinement(self):
        b = DomainBounds(T=1.0, s0=1.0, K=10.0)
        v = taper_vol(0.2, b)
        put = make_smooth_call(1.0, 0.1, 0.2, b)
        vals = []
        for n_s, n_t in ((201, 100), (401, 200), (801, 400)):
            g = make_grid(b, n_s, n_t, "sinh", center=1.0, center_spacing=8.0 / (n_s - 1) * 0.25)
            bd = cash_equivalent_bundle(price_reference(put, v, g), quadratic_penalty(),
                                        UtilitySpec(), v)
            vals.append(bd.at_origin(b)[1])
        assert abs(vals[2] - vals[1]) < 0.5 * abs(vals[1] - vals[0])


class TestBarrier:
    b = DomainBounds(T=1.0, s0=1.0, K=10.0)
    v = taper_vol(0.2, b)
    g = make_grid(b, 401, 200, "log", space_anchors=[1.2, 7.0])

    def test_zero_at_barrier(self):
        ko = price_any(make_knockout_call(1.0, 1.2, 0.1, 0.2, bounds=self.b), self.v, self.g)
        w = barrier_cash_equivalent(ko, quadratic_penalty(), self.v)
        j = self.g.space_index(1.2)
        assert np.all(w.values[:, j:] == 0.0)
        assert w.values[0, self.g.space_index(1.0)].min() > 0

    def test_far_barrier_matches_vanilla(self):
        ko = price_any(make_knockout_call(1.0, 7.0, 0.1, 0.2, bounds=self.b), self.v, self.g)
        van = price_reference(make_smooth_call(1.0, 0.1, 0.2, self.b), self.v, self.g)
        wk = barrier_cash_equivalent(ko, quadratic_penalty(), self.v).at(0.0, 1.0, 0.0)
        wv = compute_w_tilde(van, quadratic_penalty(), self.v).at(0.0, 1.0, 0.0)
        assert float(wk) == pytest.approx(float(wv), rel=1e-6)


class TestIndifference:
    def test_zero_cash_equivalent(self):
        assert indifference_prices(5.0, 0.0, 1e-3) == (5.0, 5.0)

    def test_symmetry(self):
        bid, ask = indifference_prices(5.0, 1171.6, 1e-3)
        assert ask - 5.0 == 5.0 - bid
        assert ask - bid == pytest.approx(2 * 1171.6e-3)

    @pytest.mark.parametrize("psi,w", [(0.0, 1.0), (1e-3, -1.0)])
    def test_rejects(self, psi, w):
        with pytest.raises(ValueError):
            indifference_prices(1.0, w, psi)


def test_bundle_csv(unit, tmp_path):
    p = tmp_path / "b.csv"
    unit.bundle.to_csv(p)
    with open(p) as fh:
        head = fh.readline().strip()
        first = fh.readline().split(",")
    assert head == "t,s,y,w_tilde,w_hat,theta_tilde,sigma_tilde"
    assert len(first) == 7
