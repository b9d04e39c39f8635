"""Simulation of the hedging game and empirical checks of the value expansion.

State (S, Y) is evolved on the greeks time mesh.  Y is the P&L relative to
the reference value of the book and follows

    dY = (theta - Delta_bar) dS + 0.5 Gamma$ (sigma_bar^2 - sigma^2) dt,

while the penalty (1/psi) U'(Y) f(sigma) dt is accumulated alongside.  The
strategy deviation from the delta hedge is switched off once |Y - y0|
reaches the stopping band.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .cashequiv import CashEquivalentBundle
from .errors import AdmissibilityError, ConfigError, ScenarioValidationError
from .grid import GridField
from .model import LocalVolSurface, PenaltySpec, UtilitySpec
from .montecarlo import PATH_BLOCK, block_normals, log_euler_step
from .reference import GreeksField

STRATEGIES = ("delta", "candidate", "perturbed", "custom")
VOLATILITIES = ("reference", "candidate", "shifted", "custom")


@dataclass(frozen=True)
class StrategySpec:
    kind: str = "delta"
    perturbation: Optional[GridField] = None
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.kind!r}")
        if self.kind == "perturbed" and self.perturbation is None:
            raise ConfigError("perturbed strategy needs a perturbation field")
        if self.kind == "custom" and self.fn is None:
            raise ConfigError("custom strategy needs fn(t, s, y) -> shares")


@dataclass(frozen=True)
class VolSpec:
    kind: str = "reference"
    offset: float = 0.0
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in VOLATILITIES:
            raise ConfigError(f"unknown volatility {self.kind!r}")
        if self.kind == "custom" and self.fn is None:
            raise ConfigError("custom volatility needs fn(t, s, y) -> vol")


@dataclass(frozen=True)
class ScenarioSpec:
    strategy: StrategySpec = StrategySpec()
    volatility: VolSpec = VolSpec()
    psi: float = 1e-3
    tau_band: float = 1.0

    def __post_init__(self):
        if not self.psi > 0:
            raise ConfigError("psi must be positive")
        if not self.tau_band > 0:
            raise ConfigError("tau_band must be positive")

    def with_psi(self, psi: float) -> "ScenarioSpec":
        return ScenarioSpec(self.strategy, self.volatility, psi, self.tau_band)


@dataclass(frozen=True)
class PathsConfig:
    n_paths: int = 100_000
    seed: int = 12345
    quadrature: str = "trapezoid"

    def __post_init__(self):
        if self.quadrature not in ("trapezoid", "left"):
            raise ConfigError("quadrature must be 'trapezoid' or 'left'")


@dataclass
class ObjectiveEstimate:
    mean: float
    std_error: float
    psi: float
    penalty_mean: float
    terminal_mean: float
    n_paths: int
    seed: int
    per_path: np.ndarray = field(repr=False, default=None)
    terminal_y: np.ndarray = field(repr=False, default=None)
    tau_fraction: float = 0.0
    hedge_gain: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {"mean": self.mean, "std_error": self.std_error, "psi": self.psi,
                "penalty_term": self.penalty_mean, "terminal_utility": self.terminal_mean,
                "n_paths": self.n_paths, "seed": self.seed, "tau_fraction": self.tau_fraction}


class _Fields:
    """Row-wise linear interpolation of grid fields along paths."""

    def __init__(self, greeks: GreeksField, bundle: Optional[CashEquivalentBundle], scenario):
        self.space = greeks.grid.space
        self.gamma = greeks.cash_gamma.values
        self.delta = greeks.delta.values
        self.theta = None
        self.y_nodes = None
        if bundle is not None:
            self.y_nodes = bundle.y_nodes
            th = bundle.theta_tilde.values
            if scenario.strategy.kind == "perturbed":
                th = th + scenario.strategy.perturbation.values
            self.theta = th
            scale = max(float(np.max(np.abs(th))), 1e-300)
            self.theta_flat = bool(np.max(np.abs(th - th[..., :1])) <= 1e-12 * scale)
        self._loc = None

    def locate(self, S):
        """Cache bracketing indices and weights of S on the price mesh."""
        j = np.clip(np.searchsorted(self.space, S) - 1, 0, self.space.size - 2)
        w = (S - self.space[j]) / (self.space[j + 1] - self.space[j])
        self._loc = (j, np.clip(w, 0.0, 1.0))

    def row(self, values, k, S=None):
        j, w = self._loc
        v = values[k]
        return v[j] * (1 - w) + v[j + 1] * w

    def theta_at(self, k, S, Y):
        if self.theta_flat:
            return self.row(self.theta[..., 0], k)
        j, w = self._loc
        t = self.theta[k]
        cols = (t[j] * (1 - w)[:, None] + t[j + 1] * w[:, None]).T
        y = np.clip(Y, self.y_nodes[0], self.y_nodes[-1])
        m = np.clip(np.searchsorted(self.y_nodes, y) - 1, 0, self.y_nodes.size - 2)
        y0, y1 = self.y_nodes[m], self.y_nodes[m + 1]
        w = (y - y0) / (y1 - y0)
        idx = np.arange(S.size)
        return (1 - w) * cols[m, idx] + w * cols[m + 1, idx]


def _simulate_block(b, n, scenario, fields, greeks, penalty, utility, vol, bounds, cfg, times):
    psi = scenario.psi
    K = bounds.K
    y0 = bounds.y0
    z = block_normals(cfg.seed, b, times.size - 1)[:, :n]
    S = np.full(n, bounds.s0)
    Y = np.full(n, float(y0))
    P = np.zeros(n)
    gain = np.zeros(n)
    frozen = np.zeros(n, dtype=bool)
    hit = np.zeros(n, dtype=bool)
    trap = cfg.quadrature == "trapezoid"
    strat = scenario.strategy.kind
    vkind = scenario.volatility.kind

    def node(k, S, Y):
        t = times[k]
        fields.locate(S)
        gam = fields.row(fields.gamma, k, S)
        sb = np.asarray(vol(t, S), dtype=float) * np.ones(n)
        if vkind == "reference":
            sig = sb
        elif vkind == "candidate":
            f2 = np.asarray(penalty.d2(sb, sb, Y), dtype=float)
            sig = sb + psi * sb * gam / f2
        elif vkind == "shifted":
            sig = sb + scenario.volatility.offset * vol.taper_factor(S)
        else:
            sig = np.asarray(scenario.volatility.fn(t, S, Y), dtype=float) * np.ones(n)
        sig = np.where(frozen, 0.0, sig)
        if np.any(~np.isfinite(sig)) or np.any(sig < 0) or np.any(sig > K):
            j = int(np.flatnonzero(~((sig >= 0) & (sig <= K)))[0])
            raise ScenarioValidationError(
                f"scenario volatility {sig[j]:.6g} outside [0, {K}] on path "
                f"{b * PATH_BLOCK + j} at t={t:.6g}")
        drift = 0.5 * gam * (sb * sb - sig * sig)
        pen = utility.d1(Y) * penalty.f(sig, sb, Y) / psi
        if vkind == "reference":
            pen = np.zeros(n)
        return sig, drift, pen

    sig, drift, pen = node(0, S, Y)
    for k in range(times.size - 1):
        t = times[k]
        dt = times[k + 1] - t
        if strat == "delta":
            dev = 0.0
        elif strat == "custom":
            shares = np.asarray(scenario.strategy.fn(t, S, Y), dtype=float)
            dev = np.where(hit, 0.0, shares - fields.row(fields.delta, k, S))
        else:
            dev = np.where(hit, 0.0, psi * fields.theta_at(k, S, Y))
        S_new, frozen_new = log_euler_step(S, sig, dt, z[k], 1.0 / K, K, frozen)
        dS = S_new - S
        gain += utility.d1(Y) * dev * dS
        if trap:
            Y_pred = Y + dev * dS + 0.5 * drift * dt
            P_pred = P + 0.5 * pen * dt
        else:
            Y_pred = Y + dev * dS + drift * dt
            P_pred = P + pen * dt
        S, frozen = S_new, frozen_new
        # a runaway Y_pred may overflow U'; the admissibility check below reports it
        with np.errstate(over="ignore", invalid="ignore"):
            sig, drift, pen = node(k + 1, S, Y_pred)
        if trap:
            Y = Y_pred + 0.5 * drift * dt
            P = P_pred + 0.5 * pen * dt
        else:
            Y, P = Y_pred, P_pred
        bad = (Y <= bounds.y_l) | (Y >= bounds.y_u) | ~np.isfinite(Y)
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            raise AdmissibilityError(
                f"P&L {Y[j]:.6g} left ({bounds.y_l:.6g}, {bounds.y_u:.6g}) on path "
                f"{b * PATH_BLOCK + j} at step {k + 1}", path=b * PATH_BLOCK + j, step=k + 1)
        hit |= np.abs(Y - y0) >= scenario.tau_band
    return utility.U(Y), P, Y, hit, gain


def run_hedge_experiment(scenario: ScenarioSpec, bundle: Optional[CashEquivalentBundle],
                         greeks: GreeksField, penalty: PenaltySpec, utility: UtilitySpec,
                         vol: LocalVolSurface, paths_cfg: PathsConfig) -> ObjectiveEstimate:
    """Estimate J = E[U(Y_T) + (1/psi) int U'(Y) f(sigma) dt] for one scenario."""
    if greeks.variance_sens is not None:
        raise ConfigError("the hedging game is defined for terminal payoffs only")
    needs_bundle = scenario.strategy.kind in ("candidate", "perturbed")
    if needs_bundle and bundle is None:
        raise ConfigError("candidate strategies need a cash-equivalent bundle")
    bounds = vol.bounds
    fields = _Fields(greeks, bundle if needs_bundle else None, scenario)
    times = greeks.grid.times
    n_blocks = -(-paths_cfg.n_paths // PATH_BLOCK)
    U_parts, P_parts, Y_parts, H_parts, G_parts = [], [], [], [], []
    for b in range(n_blocks):
        n = min(PATH_BLOCK, paths_cfg.n_paths - b * PATH_BLOCK)
        u, p, y, h, gn = _simulate_block(b, n, scenario, fields, greeks, penalty, utility, vol,
                                     bounds, paths_cfg, times)
        U_parts.append(u)
        P_parts.append(p)
        Y_parts.append(y)
        H_parts.append(h)
        G_parts.append(gn)
    U_T = np.concatenate(U_parts)
    P = np.concatenate(P_parts)
    J = U_T + P
    n = J.size
    return ObjectiveEstimate(float(np.sum(J) / n), float(np.std(J, ddof=1) / math.sqrt(n)),
                             scenario.psi, float(np.sum(P) / n), float(np.sum(U_T) / n),
                             paths_cfg.n_paths, paths_cfg.seed, J, np.concatenate(Y_parts),
                             float(np.mean(np.concatenate(H_parts))), np.concatenate(G_parts))


def _mean_se(x: np.ndarray):
    n = x.shape[-1]
    return np.sum(x, axis=-1) / n, np.std(x, axis=-1, ddof=1) / math.sqrt(n)


@dataclass
class ExpansionReport:
    psi_ladder: List[float]
    estimates: List[ObjectiveEstimate]
    fitted: np.ndarray
    fitted_se: np.ndarray
    predicted: np.ndarray
    residual_order: float
    residuals: np.ndarray
    residual_se: np.ndarray

    @property
    def z_scores(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.fitted - self.predicted) / self.fitted_se

    def to_dict(self):
        return {"psi_ladder": list(self.psi_ladder),
                "estimates": [e.to_dict() for e in self.estimates],
                "fitted": self.fitted.tolist(), "fitted_se": self.fitted_se.tolist(),
                "predicted": self.predicted.tolist(), "z_scores": self.z_scores.tolist(),
                "residual_order": self.residual_order, "residuals": self.residuals.tolist(),
                "residual_se": self.residual_se.tolist()}

    def ladder_rows(self):
        u0, c1, c2 = self.predicted
        return [(psi, e.mean, e.std_error, u0 + c1 * psi + c2 * psi * psi)
                for psi, e in zip(self.psi_ladder, self.estimates)]


def verify_expansion(base: ScenarioSpec, bundle: CashEquivalentBundle, greeks: GreeksField,
                     penalty: PenaltySpec, utility: UtilitySpec, vol: LocalVolSurface,
                     psi_ladder: Sequence[float], paths_cfg: PathsConfig) -> ExpansionReport:
    """Fit J(psi) = c0 + c1 psi + c2 psi^2 across the ladder on common random numbers.

    The fit is done path by path (the design matrix is shared), so the
    coefficient standard errors reflect the correlation induced by common
    random numbers.  The residual order comes from successive differences:
    for each consecutive triple a > b > c of the ladder, J(a) minus the line
    through (b, J(b)) and (c, J(c)) cancels the constant and linear terms
    and scales like c2 (a - b)(a - c); the order is the log-log slope of
    these residuals against a.
    """
    ladder = [float(p) for p in psi_ladder]
    if len(ladder) < 4:
        raise ConfigError("the psi ladder needs at least 4 points")
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("the psi ladder must be strictly decreasing")
    bounds = vol.bounds
    ests = [run_hedge_experiment(base.with_psi(p), bundle, greeks, penalty, utility, vol, paths_cfg)
            for p in ladder]
    Jm = np.vstack([e.per_path for e in ests])
    X = np.vander(np.array(ladder), 3, increasing=True)
    coefs = np.linalg.pinv(X) @ Jm
    fitted, fitted_se = _mean_se(coefs)
    wt0, wh0 = bundle.at_origin(bounds)
    u1 = float(utility.d1(bounds.y0))
    predicted = np.array([float(utility.U(bounds.y0)), -u1 * wt0, u1 * wh0])
    tri = []
    for i in range(len(ladder) - 2):
        a, b, c = ladder[i:i + 3]
        line_at_a = Jm[i + 1] + (Jm[i + 1] - Jm[i + 2]) * (a - b) / (b - c)
        tri.append(Jm[i] - line_at_a)
    resid, resid_se = _mean_se(np.vstack(tri))
    with np.errstate(divide="ignore", invalid="ignore"):
        order = float(np.polyfit(np.log(ladder[:len(tri)]), np.log(np.abs(resid)), 1)[0])
    return ExpansionReport(ladder, ests, fitted, fitted_se, predicted, order, resid, resid_se)


@dataclass
class ComparisonRow:
    name: str
    mean: float
    std_error: float
    diff_vs_first: float
    diff_se: float


@dataclass
class ComparisonReport:
    rows: List[ComparisonRow]

    def to_dict(self):
        return {"rows": [r.__dict__ for r in self.rows]}


def compare_strategies(scenarios: Sequence[ScenarioSpec], bundle, greeks, penalty, utility,
                       vol, paths_cfg: PathsConfig, names: Optional[Sequence[str]] = None
                       ) -> ComparisonReport:
    """Paired comparison of strategies that share one volatility leg and seed."""
    if len(scenarios) < 2:
        raise ConfigError("need at least two scenarios to compare")
    legs = {(s.volatility.kind, s.volatility.offset, id(s.volatility.fn), s.psi, s.tau_band)
            for s in scenarios}
    if len(legs) != 1:
        raise ConfigError("all scenarios must share the volatility leg, psi and tau band")
    names = list(names) if names is not None else [s.strategy.kind for s in scenarios]
    ests = [run_hedge_experiment(s, bundle, greeks, penalty, utility, vol, paths_cfg)
            for s in scenarios]
    base = ests[0].per_path
    rows = []
    for nm, e in zip(names, ests):
        d = e.per_path - base
        m, se = _mean_se(d)
        rows.append(ComparisonRow(nm, e.mean, e.std_error, float(m), float(se)))
    return ComparisonReport(rows)


@dataclass
class NearOptimalityReport:
    psi_ladder: List[float]
    diff_over_psi: np.ndarray
    diff_over_psi_se: np.ndarray
    slope: float
    slope_se: float
    intercept: float
    intercept_se: float

    @property
    def exponent(self) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(np.polyfit(np.log(self.psi_ladder), np.log(np.abs(self.diff_over_psi)), 1)[0])

    @property
    def passed(self) -> bool:
        return self.slope > 1.645 * self.slope_se and abs(self.exponent - 1.0) <= 0.3

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()} | {"exponent": self.exponent,
                                                      "passed": self.passed}


def near_optimality(bundle, greeks, penalty, utility, vol, psi_ladder: Sequence[float],
                    paths_cfg: PathsConfig, tau_band: float = 1.0,
                    candidate_runs: Optional[Sequence[ObjectiveEstimate]] = None
                    ) -> NearOptimalityReport:
    """(J_candidate - J_delta)/psi under candidate volatility, regressed on psi.

    D/psi = c0 + c1 psi is fitted path by path.  The check passes when c1 is
    positive at 95% (one-sided) and the log-log exponent of mean D/psi
    against psi is within 0.3 of 1.

    Per path the difference is dominated by the zero-mean gain
    sum U'(Y_k) (theta - Delta_bar) dS_k of the correction term, which is
    O(psi) and would hide the O(psi^2) signal; it is subtracted as a control
    variate.

    ``candidate_runs`` may pass in (candidate, candidate) estimates already
    made on the same ladder and seed, e.g. from ``verify_expansion``.
    """
    ladder = [float(p) for p in psi_ladder]
    if candidate_runs is not None:
        if [e.psi for e in candidate_runs] != ladder or any(
                e.seed != paths_cfg.seed or e.n_paths != paths_cfg.n_paths for e in candidate_runs):
            raise ConfigError("candidate runs do not match the ladder and paths config")
    D = []
    for i, p in enumerate(ladder):
        cv = VolSpec("candidate")
        if candidate_runs is not None:
            a = candidate_runs[i]
        else:
            a = run_hedge_experiment(ScenarioSpec(StrategySpec("candidate"), cv, p, tau_band),
                                     bundle, greeks, penalty, utility, vol, paths_cfg)
        d = run_hedge_experiment(ScenarioSpec(StrategySpec("delta"), cv, p, tau_band),
                                 bundle, greeks, penalty, utility, vol, paths_cfg)
        D.append((a.per_path - d.per_path - (a.hedge_gain - d.hedge_gain)) / p)
    D = np.vstack(D)
    dm, dse = _mean_se(D)
    X = np.vander(np.array(ladder), 2, increasing=True)
    coefs = np.linalg.pinv(X) @ D
    (c0, c1), (s0, s1) = _mean_se(coefs)
    return NearOptimalityReport(ladder, dm, dse, float(c1), float(s1), float(c0), float(s0))
