"""First- and second-order cash equivalents and the candidate controls."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import PenaltyValidationError, ShapeError, UtilityDegeneracyError
from .grid import GridField, GridSpec, chebyshev_y_nodes
from .model import LocalVolSurface, PenaltySpec, UtilitySpec
from .pde import derivative_along, march_backward
from .reference import GreeksField


def vol_on_grid(vol: LocalVolSurface, grid: GridSpec) -> np.ndarray:
    return np.asarray(vol(grid.times[:, None], grid.space[None, :]), dtype=float)


def _reference_curvature(penalty: PenaltySpec, sig: np.ndarray, y_nodes, K: float):
    """f'' at the reference volatility, shape (nt+1, ns, ny)."""
    y = np.asarray(y_nodes, dtype=float)
    f2 = penalty.d2(sig[..., None], sig[..., None], y[None, None, :])
    f2 = np.broadcast_to(f2, sig.shape + (y.size,))
    bad = f2 < 1.0 / K
    if np.any(bad):
        k, j, m = np.argwhere(bad)[0]
        raise PenaltyValidationError(
            f"f'' = {f2[k, j, m]:.3g} below 1/K = {1 / K:.3g} at node "
            f"(t-index {k}, s-index {j}, y={y[m]:.4g})")
    return f2


def _boundary_mask(greeks: GreeksField) -> np.ndarray:
    """True at price nodes where the correction fields vanish."""
    mask = np.zeros(greeks.grid.n_space, dtype=bool)
    mask[0] = mask[-1] = True
    if greeks.barrier is not None:
        mask |= greeks.knockout_mask
    return mask


def source_first_order(greeks: GreeksField, penalty: PenaltySpec, vol: LocalVolSurface,
                       y: float = 0.0) -> GridField:
    """g~ = (sigma_bar * Gamma$)^2 / (2 f''), forced to zero at the edges.

    For variance swaps Gamma$ is replaced by 2 V_a + Gamma$.
    """
    g = _first_order_source(greeks, penalty, vol, np.array([y]))
    return GridField(greeks.grid, g[..., 0], None, "g_tilde")


def _first_order_source(greeks, penalty, vol, y_nodes):
    grid = greeks.grid
    sig = vol_on_grid(vol, grid)
    f2 = _reference_curvature(penalty, sig, y_nodes, vol.bounds.K)
    gam = greeks.effective_cash_gamma()
    src = (sig * gam)[..., None] ** 2 / (2.0 * f2)
    src[:, _boundary_mask(greeks), :] = 0.0
    return src


def _solve_zero_data(grid: GridSpec, vol: LocalVolSurface, source: np.ndarray,
                     barrier_index: Optional[int]) -> np.ndarray:
    """Solve w_t + 0.5 sigma_bar^2 s^2 w_ss + source = 0 with zero data on all edges."""
    def diffusion(t, s):
        sig = vol(t, s)
        return 0.5 * sig * sig * s * s

    if barrier_index is None:
        sol = march_backward(grid, diffusion, source=source,
                             terminal=np.zeros(source.shape[1:]), boundary=(0.0, 0.0))
    else:
        n = barrier_index + 1
        sub = grid.truncated(n_space=n)
        part = march_backward(sub, diffusion, source=source[:, :n],
                              terminal=np.zeros((n,) + source.shape[2:]), boundary=(0.0, 0.0))
        sol = np.zeros_like(source)
        sol[:, :n] = part
    return sol


def _barrier_index(greeks: GreeksField):
    if greeks.barrier is None or greeks.barrier >= greeks.grid.space[-1]:
        return None
    return greeks.grid.space_index(greeks.barrier, rtol=1e-9)


def compute_w_tilde(greeks: GreeksField, penalty: PenaltySpec, vol: LocalVolSurface,
                    grid: Optional[GridSpec] = None, y_grid=None) -> GridField:
    """First-order cash equivalent on (t, s, y) with zero terminal and edge data.

    With a y-independent penalty the single solve is replicated across y.
    Knock-out greeks add the condition w~(t, B, y) = 0.
    """
    if grid is not None and not grid.same_as(greeks.grid):
        raise ShapeError("greeks are not on the requested grid")
    grid = greeks.grid
    y_nodes = chebyshev_y_nodes(vol.bounds.y0) if y_grid is None else np.asarray(y_grid, float)
    jb = _barrier_index(greeks)
    if penalty.y_independent:
        src = _first_order_source(greeks, penalty, vol, y_nodes[:1])
        one = _solve_zero_data(grid, vol, src, jb)
        vals = np.repeat(one, y_nodes.size, axis=2)
    else:
        src = _first_order_source(greeks, penalty, vol, y_nodes)
        vals = _solve_zero_data(grid, vol, src, jb)
    return GridField(grid, vals, y_nodes, "w_tilde")


def barrier_cash_equivalent(barrier_greeks: GreeksField, penalty: PenaltySpec,
                            vol: LocalVolSurface, grid: Optional[GridSpec] = None,
                            y_grid=None) -> GridField:
    if barrier_greeks.barrier is None:
        raise ShapeError("barrier greeks carry no barrier")
    return compute_w_tilde(barrier_greeks, penalty, vol, grid, y_grid)


@dataclass
class CashEquivalentBundle:
    """w~, w^ and the control fields, all on (t, s, y)."""

    w_tilde: GridField
    w_s: GridField
    w_ss: GridField
    w_y: GridField
    w_sy: GridField
    sigma_tilde: GridField
    theta_tilde: GridField
    w_hat: Optional[GridField] = None
    g_hat: Optional[GridField] = None
    psi: float = 1e-3

    @property
    def grid(self) -> GridSpec:
        return self.w_tilde.grid

    @property
    def y_nodes(self):
        return self.w_tilde.y_nodes

    def at_origin(self, bounds) -> Tuple[float, float]:
        """(w~, w^) at (0, s0, y0)."""
        wt = float(self.w_tilde.at(0.0, bounds.s0, bounds.y0))
        wh = float(self.w_hat.at(0.0, bounds.s0, bounds.y0)) if self.w_hat is not None else np.nan
        return wt, wh

    def to_csv(self, path, header=(), digits: int = 12):
        g = self.grid
        cols = [self.w_tilde, self.w_hat, self.theta_tilde, self.sigma_tilde]
        with open(path, "w") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            fh.write("t,s,y,w_tilde,w_hat,theta_tilde,sigma_tilde\n")
            for k, t in enumerate(g.times):
                for j, s in enumerate(g.space):
                    for m, y in enumerate(self.y_nodes):
                        vals = [np.nan if c is None else c.values[k, j, m] for c in cols]
                        fh.write(",".join(f"{v:.{digits}g}" for v in (t, s, y, *vals)) + "\n")


def w_tilde_partials(w_tilde: GridField):
    s = w_tilde.grid.space
    v = w_tilde.values
    ws = derivative_along(v, s, 1, 1)
    wss = derivative_along(v, s, 2, 1)
    y = w_tilde.y_nodes
    if y.size >= 3:
        wy = derivative_along(v, y, 1, 2)
        wsy = derivative_along(ws, y, 1, 2)
    else:
        wy = np.zeros_like(v)
        wsy = np.zeros_like(v)
    mk = lambda a, lab: w_tilde.with_values(a, lab)
    return mk(ws, "w_s"), mk(wss, "w_ss"), mk(wy, "w_y"), mk(wsy, "w_sy")


def candidate_controls(w_tilde: GridField, w_s: GridField, w_sy: GridField, greeks: GreeksField,
                       penalty: PenaltySpec, utility: UtilitySpec, vol: LocalVolSurface):
    """theta~ = w~_s + (U'/U'') w~_sy  and  sigma~ = sigma_bar Gamma$ / f''."""
    y = w_tilde.y_nodes
    u2 = utility.d2(y)
    if np.any(np.abs(u2) < 1e-12):
        m = int(np.argmin(np.abs(u2)))
        raise UtilityDegeneracyError(f"|U''| below 1e-12 at y={y[m]:.6g}")
    sig = vol_on_grid(vol, greeks.grid)
    f2 = _reference_curvature(penalty, sig, y, vol.bounds.K)
    sigma_t = (sig * greeks.effective_cash_gamma())[..., None] / f2
    sigma_t[:, _boundary_mask(greeks), :] = 0.0
    if penalty.y_independent:
        theta_t = w_s.values.copy()
    else:
        theta_t = w_s.values + (utility.d1(y) / u2)[None, None, :] * w_sy.values
    return (w_tilde.with_values(theta_t, "theta_tilde"),
            w_tilde.with_values(sigma_t, "sigma_tilde"))


def second_order_source(greeks: GreeksField, penalty: PenaltySpec, utility: UtilitySpec,
                        vol: LocalVolSurface, w_tilde, w_s, w_ss, w_y, theta_t, sigma_t) -> np.ndarray:
    grid = greeks.grid
    if greeks.variance_sens is not None:
        raise NotImplementedError("second-order term is only available for terminal payoffs")
    y = w_tilde.y_nodes
    s2 = (grid.space ** 2)[None, :, None]
    sig = vol_on_grid(vol, grid)[..., None]
    gam = greeks.cash_gamma.values[..., None]
    f2 = _reference_curvature(penalty, sig[..., 0], y, vol.bounds.K)
    f3 = np.broadcast_to(penalty.d3(sig, sig, y[None, None, :]), f2.shape)
    st = sigma_t.values
    ratio = utility.d2_over_d1(y)[None, None, :]
    g = (st ** 3 * f3 / 6.0
         - 0.5 * st ** 2 * gam
         + st * sig * (gam * w_y.values - s2 * w_ss.values)
         - ratio * (0.5 * sig ** 2 * s2 * theta_t.values ** 2 - st ** 2 * f2 * w_tilde.values))
    g[:, _boundary_mask(greeks), :] = 0.0
    return g


def compute_w_hat(bundle: CashEquivalentBundle, greeks: GreeksField, penalty: PenaltySpec,
                  utility: UtilitySpec, vol: LocalVolSurface,
                  grid: Optional[GridSpec] = None) -> GridField:
    src = second_order_source(greeks, penalty, utility, vol, bundle.w_tilde, bundle.w_s,
                              bundle.w_ss, bundle.w_y, bundle.theta_tilde, bundle.sigma_tilde)
    bundle.g_hat = bundle.w_tilde.with_values(src, "g_hat")
    vals = _solve_zero_data(greeks.grid, vol, src, _barrier_index(greeks))
    return GridField(greeks.grid, vals, bundle.y_nodes, "w_hat")


def cash_equivalent_bundle(greeks: GreeksField, penalty: PenaltySpec, utility: UtilitySpec,
                           vol: LocalVolSurface, y_grid=None, psi: float = 1e-3,
                           second_order: bool = True) -> CashEquivalentBundle:
    """Assemble w~, its partials, the controls and (optionally) w^."""
    wt = compute_w_tilde(greeks, penalty, vol, y_grid=y_grid)
    ws, wss, wy, wsy = w_tilde_partials(wt)
    theta_t, sigma_t = candidate_controls(wt, ws, wsy, greeks, penalty, utility, vol)
    b = CashEquivalentBundle(wt, ws, wss, wy, wsy, sigma_t, theta_t, psi=psi)
    if second_order and greeks.variance_sens is None:
        b.w_hat = compute_w_hat(b, greeks, penalty, utility, vol)
    return b


def indifference_prices(ref_value: float, w_tilde_at_state: float, psi: float):
    """First-order (bid, ask) = V -/+ w~ psi."""
    if not psi > 0:
        raise ValueError("psi must be positive")
    if w_tilde_at_state < 0:
        raise ValueError("cash equivalent must be nonnegative")
    half = w_tilde_at_state * psi
    return ref_value - half, ref_value + half
