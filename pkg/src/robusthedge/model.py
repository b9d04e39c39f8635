"""Market-model primitives: domain, reference volatility, payoffs, penalty, utility.

All types are frozen dataclasses and every evaluation is a pure function of
its arguments, so instances can be shared freely between workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from . import blackscholes as bs
from .errors import DomainError, VolatilityValidationError

ArrayLike = "float | np.ndarray"


@dataclass(frozen=True)
class DomainBounds:
    """Truncated state domain.

    Prices live in [1/K, K] and the cash variable in (y_l, y_u).  The cash
    bounds default to a comfortable margin outside the admissibility band
    ``y0 -/+ (2 + K^3 T / 2)``; explicit values are accepted even if they
    violate it so that :func:`validate_assumptions` can report the failure.

    ``taper_width`` is measured in log-price, see :func:`taper_vol`.
    """

    T: float
    s0: float
    y0: float = 0.0
    K: float = 10.0
    y_l: Optional[float] = None
    y_u: Optional[float] = None
    taper_width: float = 0.25

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise DomainError(f"maturity T must be positive, got {self.T}")
        if not self.s0 > 0:
            raise DomainError(f"s0 must be positive, got {self.s0}")
        if not self.K > max(self.s0, 1.0 / self.s0):
            raise DomainError(
                f"K={self.K} must exceed max(s0, 1/s0)={max(self.s0, 1 / self.s0)}")
        if not 0 < self.taper_width < math.log(self.K) / 2:
            raise DomainError(
                f"taper_width={self.taper_width} must lie in (0, ln(K)/2)")
        margin = 3.0 + 0.5 * self.K ** 3 * self.T
        if self.y_l is None:
            object.__setattr__(self, "y_l", self.y0 - margin)
        if self.y_u is None:
            object.__setattr__(self, "y_u", self.y0 + margin)
        if not self.y_l < self.y0 < self.y_u:
            raise DomainError("y0 must lie strictly inside (y_l, y_u)")

    @property
    def s_lo(self) -> float:
        return 1.0 / self.K

    @property
    def s_hi(self) -> float:
        return self.K

    @property
    def admissible_cash_margin(self) -> float:
        return 2.0 + 0.5 * self.K ** 3 * self.T

    def contains_price(self, s) -> np.ndarray:
        s = np.asarray(s)
        return (s > self.s_lo) & (s < self.s_hi)


def smoothstep(x):
    """Cubic ramp 3x^2 - 2x^3 clipped to [0, 1]; C^1 at both ends."""
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass(frozen=True)
class ConstantVol:
    sigma: float

    def __call__(self, t, s):
        return np.full(np.broadcast(np.asarray(t, float), np.asarray(s, float)).shape,
                       float(self.sigma))


@dataclass(frozen=True)
class TanhVol:
    """sigma(s) = a + b tanh(log(s) / scale); a state-dependent test surface."""

    a: float = 0.2
    b: float = 0.05
    scale: float = 1.0

    def __call__(self, t, s):
        t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
        return self.a + self.b * np.tanh(np.log(s) / self.scale)


@dataclass(frozen=True)
class LocalVolSurface:
    """Reference volatility with a boundary taper.

    ``base_vol(t, s)`` is the untapered surface.  Calling the surface returns
    ``base_vol * taper_factor(s)``, which vanishes at s = 1/K and s = K.
    """

    base_vol: Callable
    bounds: DomainBounds
    epsilon: float = 1e-3

    def taper_factor(self, s):
        s = np.asarray(s, dtype=float)
        dist = math.log(self.bounds.K) - np.abs(np.log(s))
        return smoothstep(dist / self.bounds.taper_width)

    def raw(self, t, s):
        return np.asarray(self.base_vol(t, s), dtype=float)

    def __call__(self, t, s):
        return self.raw(t, s) * self.taper_factor(s)

    def core_mask(self, s):
        """Nodes where the taper is inactive."""
        s = np.asarray(s, dtype=float)
        return math.log(self.bounds.K) - np.abs(np.log(s)) >= self.bounds.taper_width


def _sample_interior(bounds: DomainBounds, n: int = 201):
    t = np.linspace(0.0, bounds.T, n)
    x = np.linspace(-math.log(bounds.K), math.log(bounds.K), n)[1:-1]
    return t, np.exp(x)


def taper_vol(raw, bounds: DomainBounds, epsilon: float = 1e-3,
              check: bool = True) -> LocalVolSurface:
    """Wrap ``raw`` into a tapered :class:`LocalVolSurface`.

    The ramp is a cubic smoothstep in the log-distance to the nearest price
    boundary, so the midpoint of the band carries half the raw value.  When
    ``raw`` is already a surface its untapered base is re-tapered, which makes
    the operation idempotent.
    """
    if isinstance(raw, LocalVolSurface):
        raw = raw.base_vol
    if isinstance(raw, (int, float)):
        raw = ConstantVol(float(raw))
    if check:
        t, s = _sample_interior(bounds)
        tt, ss = np.meshgrid(t, s, indexing="ij")
        vals = np.asarray(raw(tt, ss), dtype=float)
        bad = ~np.isfinite(vals) | (vals < epsilon) | (vals > bounds.K - epsilon)
        if bad.any():
            idx = np.argwhere(bad)[:5]
            nodes = ", ".join(f"(t={tt[i, j]:.4g}, s={ss[i, j]:.4g}, vol={vals[i, j]:.4g})"
                              for i, j in idx)
            raise VolatilityValidationError(
                f"raw volatility outside [{epsilon}, {bounds.K - epsilon}] at "
                f"{int(bad.sum())} nodes, e.g. {nodes}")
    return LocalVolSurface(base_vol=raw, bounds=bounds, epsilon=epsilon)


# ---------------------------------------------------------------- payoffs


class PayoffSpec:
    """Marker base class for payoff variants."""

    maturity: Optional[float] = None
    label: str = "payoff"


@dataclass(frozen=True)
class Vanilla(PayoffSpec):
    G: Callable
    label: str = "vanilla"
    maturity: Optional[float] = None

    def __call__(self, s):
        return np.asarray(self.G(np.asarray(s, dtype=float)), dtype=float)


@dataclass(frozen=True)
class SmoothPut(PayoffSpec):
    """Black-Scholes value of a short-dated put (or call) used as a payoff.

    The short residual maturity mollifies the kink at the strike while
    keeping the cash gamma bounded.
    """

    strike: float
    smoothing_maturity: float
    smoothing_vol: float
    maturity: Optional[float] = None
    call: bool = False

    @property
    def label(self):
        return f"smooth_{'call' if self.call else 'put'}_{self.strike:g}"

    @property
    def total_var(self):
        return self.smoothing_vol ** 2 * self.smoothing_maturity

    @property
    def smoothing_sd(self):
        """Log-price standard deviation of the mollifier."""
        return math.sqrt(self.total_var)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.call:
            return bs.call_value(s, self.strike, self.total_var)
        return bs.put_value(s, self.strike, self.total_var)

    def cash_gamma(self, s):
        return bs.cash_gamma(s, self.strike, self.total_var)


def make_smooth_put(strike, smoothing_maturity, smoothing_vol, bounds=None,
                    maturity=None) -> SmoothPut:
    if bounds is not None and not bounds.s_lo < strike < bounds.s_hi:
        raise DomainError(f"strike {strike} outside ({bounds.s_lo}, {bounds.s_hi})")
    if not smoothing_maturity > 0:
        raise DomainError("smoothing_maturity must be positive")
    if not smoothing_vol > 0:
        raise DomainError("smoothing_vol must be positive")
    return SmoothPut(float(strike), float(smoothing_maturity), float(smoothing_vol),
                     maturity=maturity)


def make_smooth_call(strike, smoothing_maturity, smoothing_vol, bounds=None,
                     maturity=None) -> SmoothPut:
    p = make_smooth_put(strike, smoothing_maturity, smoothing_vol, bounds, maturity)
    return SmoothPut(p.strike, p.smoothing_maturity, p.smoothing_vol, maturity, call=True)


@dataclass(frozen=True)
class BarrierFade:
    """Payoff multiplied by a smoothstep that reaches zero at the barrier.

    A knock-out payoff that is nonzero at the barrier has a cash gamma that
    blows up near (T, B) fast enough to make the cash equivalent diverge.
    Fading the payoff over ``width`` (log-price) below B keeps it finite.
    """

    inner: Callable
    barrier: float
    width: float = 0.1

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        ramp = smoothstep((math.log(self.barrier) - np.log(s)) / self.width)
        return np.where(s < self.barrier, np.asarray(self.inner(s), float) * ramp, 0.0)


@dataclass(frozen=True)
class KnockOut(PayoffSpec):
    """Up-and-out claim paying G(S_T) unless S touched ``barrier``."""

    G: Callable
    barrier: float
    label: str = "knock_out"
    maturity: Optional[float] = None

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s < self.barrier, np.asarray(self.G(s), float), 0.0)


def make_knockout_call(strike, barrier, smoothing_maturity, smoothing_vol,
                       fade_width=0.1, bounds=None) -> KnockOut:
    if bounds is not None and not bounds.s0 < barrier < bounds.K:
        raise DomainError(f"barrier {barrier} must lie in ({bounds.s0}, {bounds.K})")
    call = make_smooth_call(strike, smoothing_maturity, smoothing_vol, bounds)
    return KnockOut(BarrierFade(call, float(barrier), float(fade_width)), float(barrier),
                    label=f"knock_out_call_{strike:g}_{barrier:g}")


@dataclass(frozen=True)
class VarianceSwap(PayoffSpec):
    """Pays A_T / T - strike_vol^2 where A is the realised integrated variance."""

    strike_vol: float
    label: str = "variance_swap"
    maturity: Optional[float] = None


@dataclass(frozen=True)
class Asian(PayoffSpec):
    """Pays G(S_T, A_T) with A_t the running time-integral of S."""

    G: Callable
    label: str = "asian"
    maturity: Optional[float] = None

    def __call__(self, s, a):
        return np.asarray(self.G(np.asarray(s, float), np.asarray(a, float)), float)


@dataclass(frozen=True)
class Book(PayoffSpec):
    items: Tuple[Tuple[float, PayoffSpec], ...] = ()
    label: str = "book"
    maturity: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "items", tuple((float(w), p) for w, p in self.items))

    def scaled(self, c: float) -> "Book":
        return Book(tuple((c * w, p) for w, p in self.items), label=f"{c:g}x{self.label}")


def scale_payoff(payoff: PayoffSpec, c: float) -> Book:
    if isinstance(payoff, Book):
        return payoff.scaled(c)
    return Book(((c, payoff),), label=f"{c:g}x{payoff.label}")


@dataclass(frozen=True)
class AffineG:
    """G(s) = a + b s."""

    a: float = 0.0
    b: float = 1.0

    def __call__(self, s):
        return self.a + self.b * np.asarray(s, dtype=float)


@dataclass(frozen=True)
class ProductG:
    """Pointwise product of two payoff functions."""

    f: Callable
    g: Callable

    def __call__(self, s):
        return np.asarray(self.f(s), float) * np.asarray(self.g(s), float)


# ---------------------------------------------------------------- penalty


@dataclass(frozen=True)
class PenaltySpec:
    """Convex cost rate f(varsigma) for deviating from the reference vol.

    ``kind='quadratic'``: f = m(y) (varsigma - sigma_bar)^2 / 2.
    ``kind='exponential'``: f = m(y) (exp(k x) - 1 - k x) / k^2 with
    x = varsigma - sigma_bar; a skewed penalty with nonzero third derivative.

    The y-dependence enters through m(y) = scale * exp(beta (y - y_ref)),
    i.e. f = (...) / h(y) with h decreasing when beta > 0.
    """

    kind: str = "quadratic"
    scale: float = 1.0
    beta: float = 0.0
    kappa: float = 0.0
    y_ref: float = 0.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "exponential"):
            raise DomainError(f"unknown penalty kind {self.kind!r}")
        if self.kind == "exponential" and self.kappa == 0:
            raise DomainError("exponential penalty needs kappa != 0")

    @property
    def y_independent(self) -> bool:
        return self.beta == 0.0

    def _m(self, y):
        if self.beta == 0.0:
            return self.scale
        return self.scale * np.exp(self.beta * (np.asarray(y, float) - self.y_ref))

    def f(self, varsigma, sigma_bar, y=0.0):
        x = np.asarray(varsigma, float) - sigma_bar
        if self.kind == "quadratic":
            return 0.5 * self._m(y) * x * x
        k = self.kappa
        return self._m(y) * np.expm1(k * x) / (k * k) - self._m(y) * x / k

    def d1(self, varsigma, sigma_bar, y=0.0):
        x = np.asarray(varsigma, float) - sigma_bar
        if self.kind == "quadratic":
            return self._m(y) * x
        return self._m(y) * np.expm1(self.kappa * x) / self.kappa

    def d2(self, varsigma, sigma_bar, y=0.0):
        x = np.asarray(varsigma, float) - sigma_bar
        if self.kind == "quadratic":
            return self._m(y) * np.ones_like(x)
        return self._m(y) * np.exp(self.kappa * x)

    def d3(self, varsigma, sigma_bar, y=0.0):
        x = np.asarray(varsigma, float) - sigma_bar
        if self.kind == "quadratic":
            return np.zeros(np.broadcast(x, np.asarray(y, float)).shape)
        return self._m(y) * self.kappa * np.exp(self.kappa * x)

    def d4(self, varsigma, sigma_bar, y=0.0):
        x = np.asarray(varsigma, float) - sigma_bar
        if self.kind == "quadratic":
            return np.zeros(np.broadcast(x, np.asarray(y, float)).shape)
        return self._m(y) * self.kappa ** 2 * np.exp(self.kappa * x)

    def curvature_at_ref(self, y=0.0):
        """f'' evaluated at varsigma = sigma_bar."""
        return np.asarray(self._m(y), float) * 1.0

    def third_at_ref(self, y=0.0):
        if self.kind == "quadratic":
            return np.zeros_like(np.asarray(y, float))
        return np.asarray(self._m(y), float) * self.kappa


def quadratic_penalty(scale: float = 1.0) -> PenaltySpec:
    return PenaltySpec("quadratic", scale=scale)


# ---------------------------------------------------------------- utility


@dataclass(frozen=True)
class UtilitySpec:
    """Exponential utility U(y) = -exp(-gamma y) / gamma."""

    gamma: float = 1.0
    kind: str = "exponential"

    def __post_init__(self):
        if self.kind != "exponential":
            raise DomainError(f"unknown utility kind {self.kind!r}")
        if not self.gamma > 0:
            raise DomainError("risk aversion gamma must be positive")

    def U(self, y):
        return -np.exp(-self.gamma * np.asarray(y, float)) / self.gamma

    def d1(self, y):
        return np.exp(-self.gamma * np.asarray(y, float))

    def d2(self, y):
        return -self.gamma * np.exp(-self.gamma * np.asarray(y, float))

    def d3(self, y):
        return self.gamma ** 2 * np.exp(-self.gamma * np.asarray(y, float))

    def d1_over_d2(self, y):
        """U'/U'' (constant for exponential utility)."""
        return np.full(np.shape(y), -1.0 / self.gamma)

    def d2_over_d1(self, y):
        return np.full(np.shape(y), -self.gamma)


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class ClauseResult:
    name: str
    passed: bool
    worst: float = 0.0
    note: str = ""


@dataclass(frozen=True)
class ValidationReport:
    clauses: Tuple[ClauseResult, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def failed(self) -> Sequence[ClauseResult]:
        return [c for c in self.clauses if not c.passed]

    def __getitem__(self, name) -> ClauseResult:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed,
                "clauses": [{"name": c.name, "passed": c.passed, "worst": c.worst,
                             "note": c.note} for c in self.clauses]}


def _clause(name, violation, note=""):
    """``violation`` <= 0 means pass; the value is reported as the worst case."""
    v = float(violation)
    return ClauseResult(name, bool(np.isfinite(v) and v <= 0.0), v, note)


def validate_assumptions(bounds: DomainBounds, vol: LocalVolSurface, payoff: PayoffSpec,
                         penalty: PenaltySpec, utility: UtilitySpec,
                         grid=None, n: int = 201) -> ValidationReport:
    """Check every standing assumption on an ``n`` x ``n`` sampling grid.

    Report-only: nothing raises.  The cash-gamma clause prices the payoff on
    ``grid`` (an automatic grid if omitted).  Penalty curvature is sampled for
    volatilities in [0, min(K, 1 + max sigma_bar)] and cash values in the
    stopping band [y0 - 1.5, y0 + 1.5].
    """
    out = []
    K = bounds.K
    out.append(_clause("domain.K", max(bounds.s0, 1 / bounds.s0) - K + 1e-300))
    width = bounds.admissible_cash_margin
    out.append(_clause("domain.y_width",
                       max(bounds.y_l - (bounds.y0 - width), (bounds.y0 + width) - bounds.y_u),
                       "y_l < y0-2-K^3T/2 and y_u > y0+2+K^3T/2"))
    out.append(_clause("domain.taper_width",
                       max(-bounds.taper_width, bounds.taper_width - math.log(K) / 2)))

    t, s = _sample_interior(bounds, n)
    tt, ss = np.meshgrid(t, s, indexing="ij")
    sig = vol(tt, ss)
    core = vol.core_mask(ss)
    lo_viol = np.max(np.where(core, vol.epsilon - sig, -np.inf))
    hi_viol = np.max(np.where(core, sig - (K - vol.epsilon), -np.inf))
    out.append(_clause("vol.band", max(lo_viol, hi_viol),
                       "eps <= sigma_bar <= K-eps outside the taper bands"))
    edge = np.abs(vol(t, np.full_like(t, 1 / K))).max() + np.abs(vol(t, np.full_like(t, K))).max()
    out.append(_clause("vol.boundary_zero", edge - 1e-12, "round-off allowance 1e-12"))
    full_s = np.exp(np.linspace(-math.log(K), math.log(K), 4 * n))
    sig_line = vol(np.zeros_like(full_s), full_s)
    slope = np.max(np.abs(np.diff(sig_line) / np.diff(full_s)))
    out.append(ClauseResult("vol.lipschitz", bool(np.isfinite(slope)), float(slope),
                            "largest sampled |d sigma_bar / ds|"))

    out.extend(_payoff_clauses(bounds, vol, payoff, grid))

    ys = np.linspace(bounds.y0 - 1.5, bounds.y0 + 1.5, 9)
    sig_ref = vol.raw(0.0, bounds.s0)
    with np.errstate(over="ignore", invalid="ignore"):
        zf = max(np.abs(penalty.f(sig_ref, sig_ref, ys)).max(),
                 np.abs(penalty.d1(sig_ref, sig_ref, ys)).max())
        out.append(_clause("penalty.zero_at_ref", zf - 1e-12))
        vs = np.linspace(0.0, min(K, 1.0 + float(np.max(sig))), n)
        vv, yy = np.meshgrid(vs, ys, indexing="ij")
        sb = float(np.max(sig))
        vals = []
        for sb_ in (0.0, sb):
            d2 = penalty.d2(vv, sb_, yy)
            vals.append(max((1 / K - d2).max(), (d2 - K).max()))
        out.append(_clause("penalty.curvature", max(vals), "1/K <= f'' <= K"))
        d34 = max(np.abs(penalty.d3(vv, sb, yy)).max(), np.abs(penalty.d4(vv, sb, yy)).max())
        out.append(_clause("penalty.higher", d34 - K, "|f'''|, |f''''| <= K"))

        # log U' and U''/U' stay finite where U' itself underflows (large K)
        yfull = np.linspace(bounds.y_l, bounds.y_u, n)
        log_u1 = -utility.gamma * yfull
        ratio = utility.d2_over_d1(yfull)
        ok = bool(np.all(np.isfinite(log_u1)) and np.all(ratio < 0))
        out.append(ClauseResult("utility.shape", ok, float(np.max(ratio)),
                                "U' > 0 and U'' < 0 on [y_l, y_u]"))
    return ValidationReport(tuple(out))


def _payoff_clauses(bounds, vol, payoff, grid):
    from .grid import auto_grid
    from .reference import price_any

    out = []
    if isinstance(payoff, KnockOut):
        out.append(_clause("payoff.barrier",
                           max(bounds.s0 - payoff.barrier, payoff.barrier - bounds.K)))
    s = np.exp(np.linspace(-math.log(bounds.K), math.log(bounds.K), 2001))[1:-1]
    if isinstance(payoff, (Vanilla, SmoothPut)):
        h = 1e-4
        g0, gp, gm = payoff(s), payoff(s * (1 + h)), payoff(s * (1 - h))
        cg = (gp - 2 * g0 + gm) / (h * h)
        out.append(_clause("payoff.terminal_cash_gamma", np.max(np.abs(cg)) - bounds.K,
                           "|s^2 G''| <= K"))
    if isinstance(payoff, Asian):
        out.append(ClauseResult("payoff.cash_gamma", True, float("nan"),
                                "not checked on a grid for path-dependent payoffs"))
        return out
    try:
        g = grid if grid is not None else auto_grid(bounds, payoff)
        greeks = price_any(payoff, vol, g)
        interior = greeks.cash_gamma.values[:, 1:-1]
        out.append(_clause("payoff.cash_gamma", np.max(np.abs(interior)) - bounds.K,
                           "|s^2 V_ss| <= K"))
    except Exception as exc:  # report-only
        out.append(ClauseResult("payoff.cash_gamma", False, float("nan"), str(exc)))
    return out
