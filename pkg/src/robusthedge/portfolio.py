"""Static hedging with liquid options and the induced measure of model uncertainty.

Claims enter only through their cash-gamma profiles.  For a book with gamma
Gamma^0 and liquid instruments Gamma^1..Gamma^n the hedged cash equivalent

    E int sigma_bar^2 (Gamma^0 - lambda . Gamma)^2 / (2 f'') du

is the quadratic lambda' G lambda - 2 b' lambda + c, whose entries are
zero-data PDE solves with product sources, read at (0, s0).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .cashequiv import _reference_curvature, _solve_zero_data, vol_on_grid
from .errors import ConditioningError, ShapeError, ValidationError
from .grid import GridField
from .model import LocalVolSurface, PenaltySpec
from .montecarlo import PathSet, _after_stop_mask, _check_mesh, _interp_rows, _trapezoid, _vol_at
from .reference import GreeksField

PAIR_CHUNK = 32


@dataclass
class LiquidSet:
    instruments: List[GreeksField]
    prices: List[float]
    s0: float
    labels: Optional[List[str]] = None
    tol: float = 1e-6

    def __post_init__(self):
        if len(self.instruments) != len(self.prices):
            raise ShapeError("one price per liquid instrument")
        if self.labels is None:
            self.labels = [g.label or f"F{i + 1}" for i, g in enumerate(self.instruments)]
        for g, p, lab in zip(self.instruments, self.prices, self.labels):
            ref = float(g.value.at(0.0, self.s0))
            if abs(p - ref) > self.tol * max(1.0, abs(ref)):
                raise ValidationError(
                    f"liquid price {p:.10g} of {lab} inconsistent with reference value {ref:.10g}")

    @classmethod
    def from_greeks(cls, instruments: Sequence[GreeksField], s0: float, labels=None) -> "LiquidSet":
        """Liquid set priced at the reference model."""
        prices = [float(g.value.at(0.0, s0)) for g in instruments]
        return cls(list(instruments), prices, s0, None if labels is None else list(labels))

    def __len__(self):
        return len(self.instruments)

    def subset(self, idx: Sequence[int]) -> "LiquidSet":
        return LiquidSet([self.instruments[i] for i in idx], [self.prices[i] for i in idx],
                         self.s0, [self.labels[i] for i in idx], self.tol)


def _weights(gp: GreeksField, vol: LocalVolSurface, penalty: PenaltySpec, y: float) -> np.ndarray:
    """sigma_bar^2 / (2 f'') on the grid, zero on the edges."""
    sig = vol_on_grid(vol, gp.grid)
    f2 = _reference_curvature(penalty, sig, [y], vol.bounds.K)[..., 0]
    w = sig * sig / (2.0 * f2)
    w[:, [0, -1]] = 0.0
    return w


def _at_s0(values: np.ndarray, space: np.ndarray, s0: float) -> np.ndarray:
    """Read each column of an (ns, m) slab at s0."""
    j = np.searchsorted(space, s0)
    if j < space.size and abs(space[j] - s0) <= 1e-12 * s0:
        return values[j].copy()
    return CubicSpline(space, values, axis=0)(s0)


def product_matrix(fields: Sequence[GreeksField], vol: LocalVolSurface, penalty: PenaltySpec,
                   s0: Optional[float] = None, y: Optional[float] = None) -> np.ndarray:
    """M_ij = E int sigma_bar^2 Gamma^i Gamma^j / (2 f'') du at (0, s0) by PDE."""
    if not fields:
        return np.zeros((0, 0))
    grid = fields[0].grid
    for g in fields[1:]:
        if not g.grid.same_as(grid):
            raise ShapeError("all gamma fields must share one grid")
    s0 = vol.bounds.s0 if s0 is None else s0
    y = vol.bounds.y0 if y is None else y
    w = _weights(fields[0], vol, penalty, y)
    gam = [g.effective_cash_gamma() for g in fields]
    n = len(fields)
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    M = np.zeros((n, n))
    for start in range(0, len(pairs), PAIR_CHUNK):
        chunk = pairs[start:start + PAIR_CHUNK]
        src = np.stack([w * gam[i] * gam[j] for i, j in chunk], axis=-1)
        sol = _solve_zero_data(grid, vol, src, None)
        vals = _at_s0(sol[0], grid.space, s0)
        for (i, j), v in zip(chunk, vals):
            M[i, j] = M[j, i] = v
    return M


def product_matrix_mc(fields: Sequence[GreeksField], vol: LocalVolSurface, penalty: PenaltySpec,
                      paths: PathSet, y: Optional[float] = None):
    """Monte Carlo route for the same matrix on common paths: (mean, standard error)."""
    y = vol.bounds.y0 if y is None else y
    for g in fields:
        _check_mesh(paths, g)
    space = fields[0].grid.space
    gam = [g.effective_cash_gamma() for g in fields]
    n = len(fields)

    def per_block(blk):
        sig = _vol_at(vol, paths.times, blk.S)
        f2 = np.asarray(penalty.d2(sig, sig, y), dtype=float)
        w = sig * sig / (2.0 * f2)
        w[_after_stop_mask(blk)] = 0.0
        G = [_interp_rows(g, space, blk.S) for g in gam]
        out = np.empty((n, n, blk.S.shape[1]))
        for i, j in itertools.combinations_with_replacement(range(n), 2):
            out[i, j] = out[j, i] = _trapezoid(w * G[i] * G[j], paths.times)
        return out

    per_path = paths.map_blocks(per_block)
    m = per_path.shape[-1]
    return per_path.mean(axis=-1), per_path.std(axis=-1, ddof=1) / np.sqrt(m)


def _check_psd(G: np.ndarray, tol: float = 1e-10):
    if G.size == 0:
        return
    ev = np.linalg.eigvalsh(G)
    scale = max(float(np.max(np.abs(ev))), 1e-300)
    if ev[0] < -tol * scale:
        raise ConditioningError(f"Gram matrix indefinite: smallest eigenvalue {ev[0]:.3g} "
                                f"(largest {ev[-1]:.3g})")


def gram_system(book_gamma: GreeksField, liquid: LiquidSet, vol: LocalVolSurface,
                penalty: PenaltySpec, route: str = "pde", paths: Optional[PathSet] = None,
                y: Optional[float] = None):
    """(G, b, c) of the hedged cash equivalent; ``route='mc'`` needs ``paths``."""
    fields = [book_gamma] + list(liquid.instruments)
    if route == "pde":
        M = product_matrix(fields, vol, penalty, liquid.s0, y)
    elif route == "mc":
        if paths is None:
            raise ValueError("the MC route needs a PathSet")
        M, _ = product_matrix_mc(fields, vol, penalty, paths, y)
    else:
        raise ValueError(f"unknown route {route!r}")
    G, b, c = M[1:, 1:], M[1:, 0], float(M[0, 0])
    _check_psd(G)
    return G, b, c


@dataclass
class StaticHedgeResult:
    lambda_star: np.ndarray
    mu: float
    gram: np.ndarray
    load: np.ndarray
    unhedged: float
    conditioning: float
    labels: List[str] = field(default_factory=list)

    def to_dict(self):
        return {"lambda_star": self.lambda_star.tolist(), "mu": self.mu,
                "unhedged": self.unhedged, "conditioning": self.conditioning,
                "labels": list(self.labels)}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def gram_csv(self, path, header: Sequence[str] = (), digits: int = 12):
        with open(path, "w") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            fh.write(",".join(["instrument"] + list(self.labels) + ["load"]) + "\n")
            for lab, row, bi in zip(self.labels, self.gram, self.load):
                fh.write(",".join([lab] + [f"{v:.{digits}g}" for v in row] + [f"{bi:.{digits}g}"])
                         + "\n")


def optimize_static_hedge(system, labels: Optional[Sequence[str]] = None,
                          rcond: float = 1e-12) -> StaticHedgeResult:
    """Minimum-norm minimiser of lambda' G lambda - 2 b' lambda + c."""
    G, b, c = system
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float)
    n = b.size
    labels = list(labels) if labels is not None else [f"F{i + 1}" for i in range(n)]
    if n == 0:
        return StaticHedgeResult(np.zeros(0), float(c), G.reshape(0, 0), b, float(c), 1.0, labels)
    _check_psd(G)
    lam = np.linalg.pinv(G, rcond=rcond, hermitian=True) @ b
    mu = float(c - b @ lam)
    ev = np.linalg.eigvalsh(G)
    cond = float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf")
    return StaticHedgeResult(lam, mu, G, b, float(c), cond, labels)


def uncertainty_measure(claim_gamma: GreeksField, liquid: LiquidSet, vol: LocalVolSurface,
                        penalty: PenaltySpec, y: Optional[float] = None) -> float:
    """mu(claim): the cash equivalent left after the best static hedge in the liquid set."""
    return optimize_static_hedge(gram_system(claim_gamma, liquid, vol, penalty, y=y),
                                 liquid.labels).mu


def combine(weights: Sequence[float], fields: Sequence[GreeksField], label: str = "combo",
            const: float = 0.0, forward: float = 0.0) -> GreeksField:
    """Greeks of const + forward * S + sum_i w_i F_i."""
    if len(weights) != len(fields) or not fields:
        raise ShapeError("need one weight per field")
    grid = fields[0].grid
    s = grid.space[None, :]
    V = const + forward * s + sum(w * f.value.values for w, f in zip(weights, fields))
    D = forward + sum(w * f.delta.values for w, f in zip(weights, fields))
    C = sum(w * f.cash_gamma.values for w, f in zip(weights, fields))
    V = np.broadcast_to(V, (grid.times.size, grid.n_space)).copy()
    D = np.broadcast_to(D, V.shape).copy()
    return GreeksField(GridField(grid, V, None, label), GridField(grid, D, None, label + "_delta"),
                       GridField(grid, np.asarray(C, dtype=float), None, label + "_cash_gamma"),
                       None, None, label)


class QuadraticMeasure:
    """mu on the span of a fixed family of gamma profiles.

    With M the product matrix of the family, a claim with coefficient vector
    a hedged by family members L has mu = min_l (a - L l)' M (a - L l).
    By linearity of the discrete solver this agrees with the direct
    gram_system route to rounding.
    """

    def __init__(self, fields: Sequence[GreeksField], vol, penalty, s0=None, y=None):
        self.fields = list(fields)
        self.M = product_matrix(self.fields, vol, penalty, s0, y)
        _check_psd(self.M)

    def mu(self, a: np.ndarray, liquid_idx: Sequence[int]) -> float:
        a = np.asarray(a, dtype=float)
        c = float(a @ self.M @ a)
        idx = list(liquid_idx)
        if not idx:
            return c
        G = self.M[np.ix_(idx, idx)]
        b = self.M[idx] @ a
        return optimize_static_hedge((G, b, c)).mu


@dataclass
class AxiomCheck:
    name: str
    passed: bool
    worst: float
    n_cases: int


@dataclass
class AxiomReport:
    checks: List[AxiomCheck]
    slack: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> AxiomCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed, "slack": self.slack,
                "checks": [c.__dict__ for c in self.checks]}


def check_measure_axioms(liquid_sets: Sequence[Sequence[int]], instruments: Sequence[GreeksField],
                         test_claims: Sequence[GreeksField], vol, penalty, seed: int = 0,
                         nu_grid: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
                         slack: float = 1e-8) -> AxiomReport:
    """Executable versions of the uncertainty-measure axioms.

    ``liquid_sets`` index into ``instruments``.  Tolerances are ``slack``
    times the unhedged cash equivalent of the claims involved (at least 1).
      (i)   mu(F_i) = 0 for liquid F_i, and mu(constant) = 0;
      (ii)  claims with equal cash-gamma profiles (differing by cash and a
            position in the underlying) have equal mu, via the direct route;
      (iii) convexity along nu-segments between claims;
      (iv)  mu(G + sum l_i F_i) = mu(G) for random l;
      plus monotonicity when one liquid set contains another.
    """
    if len(test_claims) < 2:
        raise ValueError("need at least two test claims")
    rng = np.random.default_rng(seed)
    n_inst = len(instruments)
    Q = QuadraticMeasure(list(instruments) + list(test_claims), vol, penalty)
    nf = len(Q.fields)

    def unit(i):
        e = np.zeros(nf)
        e[i] = 1.0
        return e

    claim_vecs = [unit(n_inst + k) for k in range(len(test_claims))]
    scale = [max(1.0, float(a @ Q.M @ a)) for a in claim_vecs]
    checks = []

    worst, ok, n = 0.0, True, 0
    for L in liquid_sets:
        for i in L:
            m = Q.mu(unit(i), L)
            tol = slack * max(1.0, float(Q.M[i, i]))
            worst = max(worst, abs(m))
            ok &= abs(m) <= tol
            n += 1
        m = Q.mu(np.zeros(nf), L)
        ok &= abs(m) <= slack
        n += 1
    checks.append(AxiomCheck("(i) liquid options and cash", bool(ok), worst, n))

    worst, ok, n = 0.0, True, 0
    liquid0 = LiquidSet.from_greeks([instruments[i] for i in liquid_sets[0]], vol.bounds.s0)
    for k, g in enumerate(test_claims[:3]):
        c0, b0 = rng.normal(size=2)
        shifted = combine([1.0], [g], g.label + "_shifted", const=float(c0), forward=float(b0))
        m1 = uncertainty_measure(g, liquid0, vol, penalty)
        m2 = uncertainty_measure(shifted, liquid0, vol, penalty)
        d = abs(m1 - m2)
        worst = max(worst, d)
        ok &= d <= slack * scale[k]
        n += 1
    checks.append(AxiomCheck("(ii) same cash-gamma profile", bool(ok), worst, n))

    worst, ok, n = 0.0, True, 0
    for L in liquid_sets:
        for k in range(len(claim_vecs)):
            j = (k + 1) % len(claim_vecs)
            a, b = claim_vecs[k], claim_vecs[j]
            ma, mb = Q.mu(a, L), Q.mu(b, L)
            for nu in nu_grid:
                lhs = Q.mu(nu * a + (1 - nu) * b, L)
                gap = lhs - (nu * ma + (1 - nu) * mb)
                worst = max(worst, gap)
                ok &= gap <= slack * max(scale[k], scale[j])
                n += 1
    checks.append(AxiomCheck("(iii) convexity", bool(ok), worst, n))

    worst, ok, n = 0.0, True, 0
    for L in liquid_sets:
        for k, a in enumerate(claim_vecs):
            lam = rng.uniform(-2, 2, size=len(L))
            b = a.copy()
            b[list(L)] += lam
            d = abs(Q.mu(b, L) - Q.mu(a, L))
            worst = max(worst, d)
            ok &= d <= slack * scale[k]
            n += 1
    checks.append(AxiomCheck("(iv) static-hedge invariance", bool(ok), worst, n))

    worst, ok, n = 0.0, True, 0
    for L1, L2 in itertools.permutations(liquid_sets, 2):
        if not set(L1) < set(L2):
            continue
        for k, a in enumerate(claim_vecs):
            gap = Q.mu(a, L2) - Q.mu(a, L1)
            worst = max(worst, gap)
            ok &= gap <= slack * scale[k]
            n += 1
    checks.append(AxiomCheck("monotonicity in the liquid set", bool(ok and n > 0), worst, n))
    return AxiomReport(checks, slack)

