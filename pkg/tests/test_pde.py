import numpy as np
import pytest

from oracles import bs_call, bs_cash_gamma, bs_put, composed_vol
from robusthedge.errors import ConvergenceError, NumericError, ShapeError
from robusthedge.grid import GridField, make_grid
from robusthedge.model import DomainBounds, make_smooth_call, make_smooth_put, taper_vol
from robusthedge.pde import differentiate_field, solve_backward_parabolic, solve_bsb

B = DomainBounds(T=1.0, s0=1.0, K=10.0)
VOL = taper_vol(0.2, B)


def diffusion(vol):
    def a(t, s):
        v = vol(t, s)
        return 0.5 * v * v * s * s
    return a


def call_boundary(t, side):
    return 0.0 if side == "lo" else B.K - 1.0


@pytest.fixture(scope="module")
def call_solution():
    g = make_grid(B, 401, 400, "log")
    return solve_backward_parabolic(g, diffusion(VOL), terminal=np.maximum(g.space - 1.0, 0.0),
                                    boundary=call_boundary)


def test_call_matches_closed_form(call_solution):
    v = float(call_solution.at(0.0, 1.0))
    assert v == pytest.approx(bs_call(1.0, 1.0, 0.2, 1.0), rel=1e-3)


def test_call_cash_gamma_near_money(call_solution):
    g = call_solution.grid
    gam = g.space ** 2 * differentiate_field(call_solution, 2).values[0]
    near = (g.space > 0.9) & (g.space < 1.1)
    ref = bs_cash_gamma(g.space[near], 1.0, 0.2, 1.0)
    assert np.max(np.abs(gam[near] / ref - 1)) < 5e-3


def test_boundary_columns_are_exact(call_solution):
    assert np.all(call_solution.values[:, 0] == 0.0)
    assert np.all(call_solution.values[:, -1] == B.K - 1.0)


def test_pure_source_is_linear_in_time():
    g = make_grid(B, 101, 60, "log", time_grading=1.7)
    out = solve_backward_parabolic(g, 0.0, source=2.5, terminal=0.0, boundary=(0.0, 0.0))
    expect = 2.5 * (B.T - g.times)
    assert np.max(np.abs(out.values[:, 1:-1] - expect[:, None])) < 1e-12


def test_nonfinite_coefficient_names_the_node():
    g = make_grid(B, 101, 60, "log")
    src = np.zeros((g.times.size, g.n_space))
    src[10, 50] = np.nan
    with pytest.raises(NumericError, match=r"non-finite source at t=\S+, s=1\b"):
        solve_backward_parabolic(g, diffusion(VOL), source=src, terminal=0.0,
                                 boundary=(0.0, 0.0))


class TestBSB:
    g = make_grid(B, 401, 200, "log")

    def test_degenerate_band_equals_linear_solver(self):
        put = make_smooth_put(1.0, 0.1, 0.2, B)
        G = put(self.g.space)
        lin = solve_backward_parabolic(self.g, diffusion(VOL), terminal=G, boundary=None)
        bsb = solve_bsb(self.g, VOL, 0.0, 0.0, G)
        assert np.max(np.abs(bsb.values - lin.values)) <= 1e-10

    def test_convex_payoff_prices_at_the_upper_vol(self):
        put = make_smooth_put(1.0, 0.1, 0.2, B)
        bsb = solve_bsb(self.g, VOL, -0.05, 0.05, put(self.g.space))
        ref = bs_put(1.0, 1.0, composed_vol(0.25, 1.0, 0.2, 0.1), 1.0)
        assert float(bsb.at(0.0, 1.0)) == pytest.approx(ref, rel=2e-3)

    def test_butterfly_dominates_fixed_vols(self):
        fly = lambda s: (make_smooth_call(0.9, 0.1, 0.2, B)(s) + make_smooth_call(1.1, 0.1, 0.2, B)(s)
                         - 2 * make_smooth_call(1.0, 0.1, 0.2, B)(s))
        G = fly(self.g.space)
        bsb = solve_bsb(self.g, VOL, -0.05, 0.05, G)
        for off in (-0.05, 0.05):
            fixed = solve_backward_parabolic(self.g, diffusion(taper_vol(0.2 + off, B)), terminal=G)
            assert np.min(bsb.values - fixed.values) >= -1e-9
        # gamma changes sign, so neither endpoint alone reproduces the worst case
        hi = solve_backward_parabolic(self.g, diffusion(taper_vol(0.25, B)), terminal=G)
        assert float(bsb.at(0.0, 1.0)) > float(hi.at(0.0, 1.0)) + 1e-6

    def test_sweep_budget_exhaustion(self):
        fly = lambda s: (make_smooth_call(0.9, 0.1, 0.2, B)(s) + make_smooth_call(1.1, 0.1, 0.2, B)(s)
                         - 2 * make_smooth_call(1.0, 0.1, 0.2, B)(s))
        with pytest.raises(ConvergenceError) as info:
            solve_bsb(self.g, VOL, -0.15, 0.15, fly(self.g.space), max_sweeps=1, tol=0.0)
        assert info.value.residual >= 0


class TestDifferentiate:
    g = make_grid(B, 101, 50, "price")

    def field(self, fn):
        return GridField(self.g, np.tile(fn(self.g.space), (self.g.times.size, 1)))

    def test_linear_exact(self):
        f = self.field(lambda s: 3 * s + 1)
        assert np.allclose(differentiate_field(f, 1).values, 3.0, atol=1e-9)
        assert np.allclose(differentiate_field(f, 2).values, 0.0, atol=1e-9)

    def test_quadratic_exact(self):
        f = self.field(lambda s: s * s)
        assert np.allclose(differentiate_field(f, 2).values, 2.0, atol=1e-8)

    def test_quadratic_on_log_grid(self):
        g = make_grid(B, 101, 50, "log")
        f = GridField(g, np.tile(g.space ** 2, (g.times.size, 1)))
        assert np.allclose(differentiate_field(f, 2).values, 2.0, atol=1e-8)

    def test_missing_y_axis(self):
        with pytest.raises(ShapeError):
            differentiate_field(self.field(lambda s: s), 1, axis="y")

    def test_y_axis(self):
        y = np.linspace(-1, 1, 9)
        vals = np.broadcast_to(self.g.space[None, :, None] * y[None, None, :] ** 2,
                               (self.g.times.size, self.g.n_space, 9)).copy()
        f = GridField(self.g, vals, y)
        d = differentiate_field(f, 1, axis="y").values
        assert np.allclose(d, 2 * self.g.space[None, :, None] * y, atol=1e-9)
