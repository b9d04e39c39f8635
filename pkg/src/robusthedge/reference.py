"""Reference values and greeks under the local-volatility model."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ResolutionError, ShapeError
from .grid import GridField, GridSpec
from .model import (Asian, Book, KnockOut, LocalVolSurface, PayoffSpec, SmoothPut, Vanilla,
                    VarianceSwap)
from .pde import derivative_along, solve_backward_parabolic


@dataclass
class GreeksField:
    """Value, delta and cash gamma (s^2 V_ss) on one grid.

    ``variance_sens`` (dV/da) is set for variance swaps, whose stored value is
    the a = 0 slice.  ``barrier`` is set for knock-outs; ``knockout_mask``
    flags nodes at or beyond it.
    """

    value: GridField
    delta: GridField
    cash_gamma: GridField
    variance_sens: Optional[GridField] = None
    barrier: Optional[float] = None
    label: str = ""

    @property
    def grid(self) -> GridSpec:
        return self.value.grid

    @property
    def knockout_mask(self) -> Optional[np.ndarray]:
        if self.barrier is None:
            return None
        return self.grid.space >= self.barrier * (1 - 1e-12)

    def effective_cash_gamma(self) -> np.ndarray:
        """Gamma entering the cash-equivalent source: 2 V_a + s^2 V_ss."""
        g = self.cash_gamma.values
        if self.variance_sens is not None:
            g = g + 2.0 * self.variance_sens.values
        return g

    def scaled(self, c: float) -> "GreeksField":
        vs = None if self.variance_sens is None else self.variance_sens.scaled(c)
        return GreeksField(self.value.scaled(c), self.delta.scaled(c), self.cash_gamma.scaled(c),
                           vs, self.barrier, f"{c:g}x{self.label}")

    def to_csv(self, path, header: Sequence[str] = (), digits: int = 12):
        g = self.grid
        with open(path, "w") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            fh.write("t,s,value,delta,cash_gamma\n")
            V, D, C = self.value.values, self.delta.values, self.cash_gamma.values
            for k, t in enumerate(g.times):
                for j, s in enumerate(g.space):
                    fh.write(f"{t:.{digits}g},{s:.{digits}g},{V[k, j]:.{digits}g},"
                             f"{D[k, j]:.{digits}g},{C[k, j]:.{digits}g}\n")


def _greeks_from_value(value: np.ndarray, grid: GridSpec, label: str, barrier=None,
                       variance_sens=None) -> GreeksField:
    s = grid.space
    delta = derivative_along(value, s, 1, 1)
    cg = derivative_along(value, s, 2, 1) * s * s
    return GreeksField(GridField(grid, value, None, label),
                       GridField(grid, delta, None, label + "_delta"),
                       GridField(grid, cg, None, label + "_cash_gamma"),
                       variance_sens, barrier, label)


def _check_resolution(payoff, grid: GridSpec):
    sds = []

    def visit(p):
        if isinstance(p, Book):
            for _, q in p.items:
                visit(q)
        elif isinstance(p, SmoothPut):
            sds.append((p.strike, p.smoothing_sd))

    visit(payoff)
    x = np.log(grid.space)
    for strike, sd in sds:
        c = math.log(strike)
        inside = int(np.sum(np.abs(x - c) <= 0.5 * sd))
        if inside < 4:
            raise ResolutionError(
                f"only {inside} price nodes within half a smoothing standard deviation "
                f"({sd:.4g} in log-price) of strike {strike:g}; need at least 4")


def _maturity_index(grid: GridSpec, maturity: Optional[float]) -> int:
    if maturity is None or maturity >= grid.T - 1e-12:
        return grid.n_time
    return grid.time_index(maturity)


def _diffusion(vol: LocalVolSurface):
    def a(t, s):
        sig = vol(t, s)
        return 0.5 * sig * sig * s * s
    return a


def _solve_value(G, vol, grid: GridSpec, maturity, upper=None):
    """Value of terminal claim G paid at ``maturity``; frozen at G afterwards."""
    k_mat = _maturity_index(grid, maturity)
    sub = grid.truncated(n_times=k_mat + 1, n_space=upper)
    terminal = np.asarray(G(sub.space), dtype=float)
    if upper is not None:
        terminal[-1] = 0.0
        boundary = (terminal[0], 0.0)
    else:
        boundary = None
    v = solve_backward_parabolic(sub, _diffusion(vol), terminal=terminal,
                                 boundary=boundary).values
    out = np.zeros((grid.times.size, grid.space.size))
    out[:k_mat + 1, :v.shape[1]] = v
    if k_mat < grid.n_time:
        full = np.asarray(G(grid.space), dtype=float)
        if upper is not None:
            full[upper - 1:] = 0.0
        out[k_mat + 1:] = full
    return out, k_mat


def _warn_if_kinked(payoff: Vanilla, K: float, h: float = 1e-4):
    """Warn when s^2 G'' exceeds K on a fine log-price lattice.

    A kink shows up as a spike of height ~ s * jump(G') / h in the lattice
    second difference wherever it falls.
    """
    x = np.arange(-math.log(K) + h, math.log(K) - h / 2, h)
    G = np.asarray(payoff(np.exp(x)), dtype=float)
    d2x = (G[2:] - 2 * G[1:-1] + G[:-2]) / (h * h)
    d1x = (G[2:] - G[:-2]) / (2 * h)
    worst = float(np.max(np.abs(d2x - d1x)))
    if worst > K:
        warnings.warn(f"payoff {payoff.label!r} has terminal cash gamma up to {worst:.3g} > K={K:g}; "
                      "it looks kinked or under-smoothed, consider a smooth payoff", RuntimeWarning)


def price_reference(payoff: PayoffSpec, vol: LocalVolSurface, grid: GridSpec) -> GreeksField:
    """Reference value of a vanilla (or smooth) payoff with delta and cash gamma.

    Edges carry payoff-asymptotic Dirichlet data, which is exact here because
    the tapered volatility vanishes at both edges.  After the payoff's own
    maturity the value stays at G and delta, gamma are zero.
    """
    if isinstance(payoff, Book):
        return net_book_greeks([(w, price_any(p, vol, grid)) for w, p in payoff.items],
                               label=payoff.label)
    if not isinstance(payoff, (Vanilla, SmoothPut)):
        raise TypeError(f"price_reference handles vanilla payoffs, got {type(payoff).__name__}")
    _check_resolution(payoff, grid)
    if isinstance(payoff, Vanilla):
        _warn_if_kinked(payoff, vol.bounds.K)
    value, k_mat = _solve_value(payoff, vol, grid, payoff.maturity)
    gf = _greeks_from_value(value, grid, payoff.label)
    if k_mat < grid.n_time:
        gf.delta.values[k_mat + 1:] = 0.0
        gf.cash_gamma.values[k_mat + 1:] = 0.0
    return gf


def price_barrier_reference(payoff: KnockOut, vol: LocalVolSurface, grid: GridSpec) -> GreeksField:
    """Up-and-out value: solved on [1/K, B] with V(t, B) = 0, zero beyond B.

    The barrier must be a price node (build the grid with ``space_anchors``).
    """
    B = payoff.barrier
    bounds = vol.bounds
    if not bounds.s0 < B:
        raise DomainError(f"barrier {B} must exceed s0={bounds.s0}")
    if B >= bounds.K:
        g = price_reference(Vanilla(payoff.G, payoff.label, payoff.maturity), vol, grid)
        g.barrier = B
        return g
    jB = grid.space_index(B, rtol=1e-9)
    value, k_mat = _solve_value(payoff.G, vol, grid, payoff.maturity, upper=jB + 1)
    value[:, jB:] = 0.0
    sub_s = grid.space[:jB + 1]
    delta = np.zeros_like(value)
    cg = np.zeros_like(value)
    delta[:, :jB + 1] = derivative_along(value[:, :jB + 1], sub_s, 1, 1)
    cg[:, :jB + 1] = derivative_along(value[:, :jB + 1], sub_s, 2, 1) * sub_s ** 2
    # at and beyond the barrier the claim is dead
    delta[:, jB:] = 0.0
    cg[:, jB:] = 0.0
    if k_mat < grid.n_time:
        delta[k_mat + 1:] = 0.0
        cg[k_mat + 1:] = 0.0
    lab = payoff.label
    return GreeksField(GridField(grid, value, None, lab), GridField(grid, delta, None, lab + "_delta"),
                       GridField(grid, cg, None, lab + "_cash_gamma"), None, B, lab)


def remaining_variance(vol: LocalVolSurface, grid: GridSpec) -> GridField:
    """R(t,s) = E[int_t^T sigma_bar^2 du | S_t = s]."""

    def source(t, s):
        sig = vol(t, s)
        return sig * sig

    return solve_backward_parabolic(grid, _diffusion(vol), source=source, label="R")


def price_variance_swap_reference(strike_vol: float, vol: LocalVolSurface, grid: GridSpec,
                                  label: str = "variance_swap") -> GreeksField:
    """Variance swap paying A_T/T - strike_vol^2 with A the realised variance.

    value(t,s,a) = (a + R(t,s))/T - strike_vol^2; the stored value is a = 0.
    """
    T = grid.T
    R = remaining_variance(vol, grid).values
    gf = _greeks_from_value(R / T - strike_vol ** 2, grid, label)
    gf.variance_sens = GridField(grid, np.full_like(R, 1.0 / T), None, label + "_va")
    return gf


def net_book_greeks(book: Sequence[Tuple[float, GreeksField]], label: str = "book") -> GreeksField:
    """Weighted nodewise sum of greeks fields sharing one grid."""
    if not book:
        raise ShapeError("empty book")
    grid = book[0][1].grid
    for _, g in book:
        if not g.grid.same_as(grid):
            raise ShapeError("all greeks in a book must share one grid")
    V = sum(w * g.value.values for w, g in book)
    D = sum(w * g.delta.values for w, g in book)
    C = sum(w * g.cash_gamma.values for w, g in book)
    vs = [(w, g.variance_sens) for w, g in book if g.variance_sens is not None]
    VS = GridField(grid, sum(w * f.values for w, f in vs), None, label + "_va") if vs else None
    barriers = {g.barrier for _, g in book}
    barrier = barriers.pop() if len(barriers) == 1 else None
    return GreeksField(GridField(grid, V, None, label), GridField(grid, D, None, label + "_delta"),
                       GridField(grid, C, None, label + "_cash_gamma"), VS, barrier, label)


def price_any(payoff: PayoffSpec, vol: LocalVolSurface, grid: GridSpec) -> GreeksField:
    """Dispatch on the payoff variant (Asian payoffs have no grid route)."""
    if isinstance(payoff, Book):
        if len(payoff.items) == 1 and payoff.items[0][0] == 1.0:
            return price_any(payoff.items[0][1], vol, grid)
        return net_book_greeks([(w, price_any(p, vol, grid)) for w, p in payoff.items],
                               label=payoff.label)
    if isinstance(payoff, KnockOut):
        return price_barrier_reference(payoff, vol, grid)
    if isinstance(payoff, VarianceSwap):
        return price_variance_swap_reference(payoff.strike_vol, vol, grid, payoff.label)
    if isinstance(payoff, Asian):
        raise TypeError("Asian payoffs are priced through the Monte Carlo oracle only")
    return price_reference(payoff, vol, grid)
