import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from robusthedge.cashequiv import compute_w_tilde
from robusthedge.grid import make_grid
from robusthedge.model import (DomainBounds, PenaltySpec, UtilitySpec, make_knockout_call,
                               make_smooth_put, quadratic_penalty, smoothstep, taper_vol)
from robusthedge.montecarlo import simulate_paths
from robusthedge.pde import solve_backward_parabolic
from robusthedge.portfolio import optimize_static_hedge
from robusthedge.reference import net_book_greeks, price_barrier_reference, price_reference

B = DomainBounds(T=1.0, s0=1.0, K=10.0)
VOL = taper_vol(0.2, B)
SMALL = make_grid(B, 101, 50, "log")
FAST = settings(max_examples=25, deadline=None)
PUT_GREEKS = price_reference(make_smooth_put(1.0, 0.1, 0.2, B), VOL,
                             make_grid(B, 201, 50, "sinh", center=1.0, center_spacing=0.01))

finite = st.floats(-3.0, 3.0)


def diffusion(t, s):
    v = VOL(t, s)
    return 0.5 * v * v * s * s


penalties = st.builds(
    PenaltySpec,
    kind=st.sampled_from(["quadratic", "exponential"]),
    scale=st.floats(0.1, 10.0),
    beta=st.floats(-1.0, 1.0),
    kappa=st.one_of(st.floats(-5.0, -0.1), st.floats(0.1, 5.0)),
)


@FAST
@given(penalties, st.floats(0.05, 1.0), st.floats(-0.5, 0.5), finite)
def test_penalty_is_convex_and_vanishes_at_reference(pen, sb, dx, y):
    assert pen.f(sb, sb, y) == 0 and pen.d1(sb, sb, y) == 0
    assert pen.f(sb + dx, sb, y) >= 0
    assert pen.d2(sb + dx, sb, y) > 0
    assert np.isclose(pen.curvature_at_ref(y), pen.d2(sb, sb, y), rtol=1e-14)


@FAST
@given(st.floats(0.01, 20.0), finite)
def test_utility_shape(gamma, y):
    u = UtilitySpec(gamma)
    assert u.d1(y) > 0 and u.d2(y) < 0
    assert np.isclose(u.d1_over_d2(y), u.d1(y) / u.d2(y), rtol=1e-12)


@FAST
@given(st.floats(-1.0, 2.0))
def test_smoothstep_clamped_and_monotone(x):
    v = smoothstep(x)
    assert 0.0 <= v <= 1.0
    assert smoothstep(x + 1e-3) >= v


@FAST
@given(st.floats(0.01, 2.0), st.floats(-2.3, 2.3))
def test_taper_never_exceeds_raw(sigma, x):
    v = taper_vol(sigma, B)
    s = np.exp(x)
    assert 0.0 <= float(v(0.0, s)) <= sigma + 1e-15


@FAST
@given(st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4), st.floats(0.1, 2.0))
def test_maximum_principle(coefs, height):
    x = np.log(SMALL.space)
    G = height * np.tanh(coefs[0] * x + coefs[1]) + coefs[2] * np.cos(coefs[3] * x)
    sol = solve_backward_parabolic(SMALL, diffusion, terminal=G, boundary=(G[0], G[-1]))
    assert sol.values.max() <= G.max() + 1e-12
    assert sol.values.min() >= G.min() - 1e-12


@FAST
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0), st.floats(0.7, 1.4), st.floats(0.7, 1.4))
def test_solver_is_linear(a, b, k1, k2):
    G1 = make_smooth_put(k1, 0.1, 0.2, B)(SMALL.space)
    G2 = np.sin(np.log(SMALL.space))
    solve = lambda G: solve_backward_parabolic(SMALL, diffusion, terminal=G).values
    lhs = solve(a * G1 + b * G2)
    rhs = a * solve(G1) + b * solve(G2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.abs(rhs).max())


@settings(max_examples=10, deadline=None)
@given(st.floats(1.15, 3.0))
def test_barrier_greeks_vanish_beyond_barrier(barrier):
    g = make_grid(B, 201, 50, "log", space_anchors=[barrier])
    gf = price_barrier_reference(make_knockout_call(1.0, barrier, 0.1, 0.2, bounds=B), VOL, g)
    j = g.space_index(barrier)
    assert np.all(gf.value.values[:-1, j:] == 0.0)
    assert np.all(gf.cash_gamma.values[:, j:] == 0.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 300))
def test_paths_reproducible_and_prefix_stable(seed, n):
    times = np.linspace(0.0, 1.0, 11)
    a = simulate_paths(VOL, 1.0, times, n, seed, B).materialize()[0]
    b = simulate_paths(VOL, 1.0, times, n + 7, seed, B).materialize()[0]
    assert np.array_equal(a, b[:, :n])


@settings(max_examples=10, deadline=None)
@given(st.floats(-4.0, 4.0).filter(lambda q: abs(q) > 1e-3), st.floats(0.2, 5.0))
def test_cash_equivalent_scaling(q, m):
    gf = PUT_GREEKS
    base = compute_w_tilde(gf, quadratic_penalty(), VOL).values
    w = compute_w_tilde(gf.scaled(q), quadratic_penalty(m), VOL).values
    assert np.max(np.abs(w - q * q / m * base)) <= 1e-9 * q * q / m * np.abs(base).max()


@FAST
@given(st.integers(1, 5), st.integers(0, 10 ** 6))
def test_static_hedge_never_worse_than_unhedged(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n + 1, n + 3))
    M = A @ A.T
    G, b, c = M[1:, 1:], M[1:, 0], float(M[0, 0])
    res = optimize_static_hedge((G, b, c))
    assert -1e-9 * c <= res.mu <= c * (1 + 1e-12)
    lam = rng.normal(size=n)
    other = lam @ G @ lam - 2 * b @ lam + c
    assert res.mu <= other + 1e-9 * max(c, 1.0)


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3))
def test_cash_equivalent_is_nonnegative(weights):
    g = PUT_GREEKS.grid
    legs = [price_reference(make_smooth_put(k, 0.1, 0.2, B), VOL, g) for k in (0.9, 1.0, 1.1)]
    book = net_book_greeks(list(zip(weights, legs)))
    w = compute_w_tilde(book, quadratic_penalty(), VOL).values
    assert w.min() >= -1e-12 * max(np.abs(w).max(), 1e-300)
