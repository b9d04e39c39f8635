"""Uncertain-volatility comparison: first-order UVM term, BSB spreads, spread tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import CalibrationError, DomainError
from .grid import GridField, GridSpec
from .model import ConstantVol, DomainBounds, LocalVolSurface, PayoffSpec, taper_vol
from .pde import _resolve, march_backward, solve_bsb
from .reference import GreeksField


def first_order_uvm_value(vol: LocalVolSurface, band_lo, band_hi, greeks: GreeksField,
                          grid: Optional[GridSpec] = None) -> GridField:
    """First-order UVM correction with source sup_{v in [lo, hi]} v sigma_bar s^2 V_ss.

    Bands may be scalars, callables (t, s) or arrays over the grid.
    """
    grid = greeks.grid if grid is None else grid
    nt = grid.n_time
    lo = np.array([np.broadcast_to(_resolve(band_lo, grid, k), grid.space.shape)
                   for k in range(nt + 1)])
    hi = np.array([np.broadcast_to(_resolve(band_hi, grid, k), grid.space.shape)
                   for k in range(nt + 1)])
    if np.any(lo > 1e-15) or np.any(hi < -1e-15):
        raise DomainError("band must satisfy lo <= 0 <= hi")
    sig = np.asarray(vol(grid.times[:, None], grid.space[None, :]), dtype=float)
    gam = greeks.cash_gamma.values
    src = sig * (hi * np.maximum(gam, 0.0) + lo * np.minimum(gam, 0.0))
    src[:, [0, -1]] = 0.0

    def diffusion(t, s):
        v = vol(t, s)
        return 0.5 * v * v * s * s

    vals = march_backward(grid, diffusion, source=src, terminal=np.zeros(grid.n_space),
                          boundary=(0.0, 0.0))
    return GridField(grid, vals, None, "uvm_first_order")


def matching_band(sigma_tilde: GridField, y_index: int = 0):
    """Band +/- sigma~/2 * sign(V_ss) that makes the UVM term equal w~."""
    st = sigma_tilde.values[..., y_index] if sigma_tilde.has_y else sigma_tilde.values
    half = 0.5 * np.abs(st)
    return -half, half


def _band_surface(bounds: DomainBounds, vol_lo: float, vol_hi: float):
    mid = 0.5 * (vol_lo + vol_hi)
    ref = taper_vol(ConstantVol(mid), bounds, epsilon=min(1e-3, mid), check=False)

    def lo(t, s):
        return (vol_lo - mid) * ref.taper_factor(s)

    def hi(t, s):
        return (vol_hi - mid) * ref.taper_factor(s)

    return ref, lo, hi


def uvm_spread(payoff, vol_lo: float, vol_hi: float, grid: GridSpec,
               bounds: DomainBounds) -> GridField:
    """Worst-case ask minus worst-case bid for a constant volatility band.

    Computed as BSB(G) + BSB(-G); the band is tapered with the same ramp as
    the reference volatility so that both edges freeze.
    """
    if not 0 < vol_lo <= vol_hi:
        raise DomainError("need 0 < vol_lo <= vol_hi")
    if vol_lo == vol_hi:
        return GridField(grid, np.zeros((grid.times.size, grid.n_space)), None, "uvm_spread")
    ref, lo, hi = _band_surface(bounds, vol_lo, vol_hi)
    G = np.asarray(payoff(grid.space), dtype=float)
    ask = solve_bsb(grid, ref, lo, hi, G)
    neg_bid = solve_bsb(grid, ref, lo, hi, -G)
    return GridField(grid, ask.values + neg_bid.values, None, "uvm_spread")


def _spread_at(payoff, vol_lo, vol_hi, grid, bounds, s):
    return float(uvm_spread(payoff, vol_lo, vol_hi, grid, bounds).at(0.0, s))


def calibrate_band(payoff, sigma_ref: float, target_spread: float, grid: GridSpec,
                   bounds: DomainBounds, s_atm: Optional[float] = None,
                   tol: float = 1e-9) -> Tuple[float, float]:
    """Symmetric band [sigma - h, sigma + h] whose spread at s_atm hits the target."""
    s_atm = bounds.s0 if s_atm is None else s_atm

    def gap(h):
        return _spread_at(payoff, sigma_ref - h, sigma_ref + h, grid, bounds, s_atm) - target_spread

    lo_h, hi_h = 1e-6, sigma_ref * (1 - 1e-3)
    g_lo, g_hi = gap(lo_h), gap(hi_h)
    if not g_lo < 0 < g_hi:
        raise CalibrationError(
            f"cannot bracket the target spread {target_spread:.6g}: gaps {g_lo:.3g}, {g_hi:.3g}")
    h = brentq(gap, lo_h, hi_h, xtol=tol)
    return sigma_ref - h, sigma_ref + h


@dataclass
class SpreadTable:
    s: np.ndarray
    model_spread: np.ndarray
    uvm_spread: np.ndarray
    band: Tuple[float, float]
    psi: float
    label: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.uvm_spread > 0, self.model_spread / self.uvm_spread, np.nan)

    def rows(self):
        return list(zip(self.s, self.model_spread, self.uvm_spread, self.ratio))

    def to_csv(self, path, header: Sequence[str] = (), log_scale: bool = False, digits: int = 12):
        with open(path, "w") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            fh.write(f"# band=[{self.band[0]:.{digits}g},{self.band[1]:.{digits}g}] "
                     f"psi={self.psi:.{digits}g} payoff={self.label}\n")
            if log_scale:
                fh.write("s,log10_model_spread,log10_uvm_spread,ratio\n")
            else:
                fh.write("s,model_spread,uvm_spread,ratio\n")
            for s, m, u, r in self.rows():
                if log_scale:
                    m = math.log10(m) if m > 0 else float("nan")
                    u = math.log10(u) if u > 0 else float("nan")
                fh.write(f"{s:.{digits}g},{m:.{digits}g},{u:.{digits}g},{r:.{digits}g}\n")


def spread_comparison_table(w_tilde: GridField, payoff: PayoffSpec, bounds: DomainBounds,
                            psi: float, s_samples: Sequence[float],
                            band: Optional[Tuple[float, float]] = None,
                            calibrate: bool = False, sigma_ref: Optional[float] = None,
                            y: Optional[float] = None) -> SpreadTable:
    """Model spread 2 w~ psi next to the UVM spread at t = 0.

    With ``calibrate`` the band is the symmetric one around ``sigma_ref``
    whose spread matches the model spread at s0.
    """
    grid = w_tilde.grid
    y = bounds.y0 if y is None else y
    wt = w_tilde.y_slice(y) if w_tilde.has_y else w_tilde
    s_samples = np.asarray(s_samples, dtype=float)
    model = 2.0 * psi * np.asarray(wt.at(0.0, s_samples), dtype=float)
    if calibrate:
        if sigma_ref is None:
            raise CalibrationError("calibrated mode needs sigma_ref")
        target = 2.0 * psi * float(wt.at(0.0, bounds.s0))
        band = calibrate_band(payoff, sigma_ref, target, grid, bounds)
    if band is None:
        raise CalibrationError("either band or calibrate=True is required")
    uvm = uvm_spread(payoff, band[0], band[1], grid, bounds)
    u = np.asarray(uvm.at(0.0, s_samples), dtype=float)
    label = getattr(payoff, "label", "payoff")
    return SpreadTable(s_samples, model, u, (float(band[0]), float(band[1])), psi, label)
