"""Monte Carlo path engine and Feynman-Kac estimators of the cash equivalent.

Random numbers come from Philox streams keyed by (seed, block), where a
block is a fixed run of PATH_BLOCK consecutive path indices.  Path ``p``
therefore always sees the same normals whatever the total path count or
worker count, and all reductions happen over the concatenated per-path
values in path order.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Tuple

import numpy as np

from .errors import BudgetError, ScenarioValidationError, ShapeError
from .model import Asian, DomainBounds, LocalVolSurface, PenaltySpec
from .reference import GreeksField

PATH_BLOCK = 4096
ASIAN_CHUNK = 256

_STREAM_PATHS = 0
_STREAM_ASIAN = 1


def block_rng(seed: int, block: int, stream: int = _STREAM_PATHS, *extra: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, stream, int(block), *extra])
    return np.random.Generator(np.random.Philox(ss))


def block_normals(seed: int, block: int, n_steps: int) -> np.ndarray:
    """Standard normals of shape (n_steps, PATH_BLOCK) for one path block."""
    return block_rng(seed, block).standard_normal((n_steps, PATH_BLOCK))


def _check_vol(sig, K, where):
    if np.any(~np.isfinite(sig)) or np.any(sig < 0) or np.any(sig > K):
        bad = sig[~(np.isfinite(sig) & (sig >= 0) & (sig <= K))][0]
        raise ScenarioValidationError(f"volatility {bad!r} outside [0, {K}] {where}")


def log_euler_step(s, sig, dt, z, lo, hi, frozen):
    """One exact-for-constant-vol step; paths leaving (lo, hi) are clamped and frozen."""
    new = s * np.exp(sig * math.sqrt(dt) * z - 0.5 * sig * sig * dt)
    new = np.where(frozen, s, new)
    out_lo = new <= lo
    out_hi = new >= hi
    new = np.where(out_lo, lo, np.where(out_hi, hi, new))
    return new, frozen | out_lo | out_hi


@dataclass
class PathBlock:
    start: int
    S: np.ndarray          # (n_steps+1, b)
    stop_index: np.ndarray  # first step index at which the path sits on the boundary, or n_steps+1


@dataclass
class PathSet:
    """Lazily simulated price paths on a fixed time mesh."""

    vol_fn: Callable
    s0: float
    times: np.ndarray
    n_paths: int
    seed: int
    bounds: DomainBounds
    scheme: str = "log-Euler"
    workers: int = 1

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def n_blocks(self) -> int:
        return -(-self.n_paths // PATH_BLOCK)

    def block(self, b: int) -> PathBlock:
        n = min(PATH_BLOCK, self.n_paths - b * PATH_BLOCK)
        z = block_normals(self.seed, b, self.n_steps)[:, :n]
        K = self.bounds.K
        S = np.empty((self.n_steps + 1, n))
        S[0] = self.s0
        frozen = np.zeros(n, dtype=bool)
        stop = np.full(n, self.n_steps + 1)
        for k in range(self.n_steps):
            t = self.times[k]
            dt = self.times[k + 1] - t
            sig = np.asarray(self.vol_fn(t, S[k]), dtype=float) * np.ones(n)
            _check_vol(sig, K, f"at t={t:.6g}")
            S[k + 1], now = log_euler_step(S[k], sig, dt, z[k], 1.0 / K, K, frozen)
            stop = np.where(now & ~frozen, k + 1, stop)
            frozen = now
        return PathBlock(b * PATH_BLOCK, S, stop)

    def blocks(self) -> Iterator[PathBlock]:
        for b in range(self.n_blocks):
            yield self.block(b)

    def map_blocks(self, fn) -> np.ndarray:
        """Apply ``fn(PathBlock) -> per-path array`` and concatenate in path order."""
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                parts = list(ex.map(lambda b: fn(self.block(b)), range(self.n_blocks)))
        else:
            parts = [fn(self.block(b)) for b in range(self.n_blocks)]
        return np.concatenate(parts, axis=-1)

    def materialize(self) -> Tuple[np.ndarray, np.ndarray]:
        S = np.concatenate([blk.S for blk in self.blocks()], axis=1)
        stop = np.concatenate([blk.stop_index for blk in self.blocks()])
        return S, stop

    def to_csv(self, path, max_paths: int = 100):
        S, _ = self.materialize()
        S = S[:, :max_paths]
        with open(path, "w") as fh:
            fh.write("t," + ",".join(f"path{i}" for i in range(S.shape[1])) + "\n")
            for k, t in enumerate(self.times):
                fh.write(f"{t:.12g}," + ",".join(f"{x:.12g}" for x in S[k]) + "\n")


def simulate_paths(vol_fn, s0: float, grid_or_times, n_paths: int, seed: int,
                   bounds: DomainBounds, workers: int = 1) -> PathSet:
    times = getattr(grid_or_times, "times", grid_or_times)
    times = np.asarray(times, dtype=float)
    if n_paths < 1:
        raise ShapeError("n_paths must be positive")
    # validate the volatility function once up front on the starting state
    _check_vol(np.asarray(vol_fn(times[0], np.array([s0])), dtype=float), bounds.K, "at t=0")
    return PathSet(vol_fn, float(s0), times, int(n_paths), int(seed), bounds, workers=workers)


@dataclass
class FkEstimate:
    mean: float
    std_error: float
    n_effective: int
    target: str
    n_paths: int = 0
    seed: int = 0
    per_path: Optional[np.ndarray] = field(default=None, repr=False)

    def to_json(self) -> str:
        return json.dumps({"target": self.target, "mean": float(f"{self.mean:.12g}"),
                           "std_error": float(f"{self.std_error:.12g}"),
                           "n_paths": self.n_paths, "seed": self.seed})

    def z_against(self, value: float) -> float:
        if self.std_error == 0:
            return 0.0 if value == self.mean else math.inf
        return (self.mean - value) / self.std_error


def summarize(per_path: np.ndarray, target: str, paths: PathSet) -> FkEstimate:
    n = per_path.size
    mean = float(np.sum(per_path) / n)
    se = float(np.std(per_path, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return FkEstimate(mean, se, n, target, paths.n_paths, paths.seed, per_path)


def _interp_rows(field_values: np.ndarray, space: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Linear interpolation in s of each time row at the path points; S is (nt+1, b)."""
    out = np.empty_like(S)
    for k in range(S.shape[0]):
        out[k] = np.interp(S[k], space, field_values[k])
    return out


def _check_mesh(paths: PathSet, greeks: GreeksField):
    gt = greeks.grid.times
    if gt.shape != paths.times.shape or not np.allclose(gt, paths.times, rtol=0, atol=1e-12):
        raise ShapeError("path time mesh does not match the greeks grid")


def _trapezoid(g: np.ndarray, times: np.ndarray) -> np.ndarray:
    dt = np.diff(times)[:, None]
    return np.sum(0.5 * (g[:-1] + g[1:]) * dt, axis=0)


def _vol_at(vol, times, S):
    return np.asarray(vol(times[:, None], S), dtype=float)


def _after_stop_mask(blk: PathBlock) -> np.ndarray:
    k = np.arange(blk.S.shape[0])[:, None]
    return k >= blk.stop_index[None, :]


def _fk_integrand(blk, paths, gamma_values, space, penalty, vol, y):
    S = blk.S
    gam = _interp_rows(gamma_values, space, S)
    sig = _vol_at(vol, paths.times, S)
    f2 = np.asarray(penalty.d2(sig, sig, y), dtype=float)
    g = (sig * gam) ** 2 / (2.0 * f2)
    g[_after_stop_mask(blk)] = 0.0
    return g


def fk_estimate_w_tilde(paths: PathSet, greeks: GreeksField, penalty: PenaltySpec,
                        vol: LocalVolSurface, y: float = 0.0, target: str = "w_tilde") -> FkEstimate:
    """E[int_0^T (sigma_bar Gamma$)^2 / (2 f'') du] along reference paths (trapezoid in time)."""
    _check_mesh(paths, greeks)
    gam = greeks.cash_gamma.values
    space = greeks.grid.space

    def per_block(blk):
        return _trapezoid(_fk_integrand(blk, paths, gam, space, penalty, vol, y), paths.times)

    return summarize(paths.map_blocks(per_block), target, paths)


def fk_estimate_barrier(paths: PathSet, barrier_greeks: GreeksField, penalty: PenaltySpec,
                        vol: LocalVolSurface, y: float, barrier: float,
                        bridge: bool = False, target: str = "w_tilde_barrier") -> FkEstimate:
    """As :func:`fk_estimate_w_tilde` with the integrand zeroed from the first barrier hit.

    Monitoring is discrete on the time mesh, which overstates survival by
    O(sqrt(dt)).  With ``bridge`` each step's Brownian-bridge crossing
    probability is applied as a survival weight instead.
    """
    _check_mesh(paths, barrier_greeks)
    gam = barrier_greeks.cash_gamma.values
    space = barrier_greeks.grid.space
    lnB = math.log(barrier)

    def per_block(blk):
        g = _fk_integrand(blk, paths, gam, space, penalty, vol, y)
        S = blk.S
        alive = np.cumprod(S < barrier, axis=0).astype(bool)
        weight = alive.astype(float)
        if bridge:
            sig = _vol_at(vol, paths.times, S)[:-1]
            dt = np.diff(paths.times)[:, None]
            a = lnB - np.log(S[:-1])
            b = lnB - np.log(S[1:])
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                p = np.where((a > 0) & (b > 0) & (sig > 0),
                             np.exp(-2.0 * a * b / (sig * sig * dt)), 1.0)
            surv = np.vstack([np.ones((1, S.shape[1])), np.cumprod(1.0 - p, axis=0)])
            weight = weight * surv
        return _trapezoid(g * weight, paths.times)

    return summarize(paths.map_blocks(per_block), target, paths)


def fk_estimate_variance_swap(paths: PathSet, vs_greeks: GreeksField, penalty: PenaltySpec,
                              vol: LocalVolSurface, y: float = 0.0,
                              target: str = "w_tilde_variance_swap") -> FkEstimate:
    """Integrand (sigma_bar (2 V_a + Gamma$))^2 / (2 f'')."""
    if vs_greeks.variance_sens is None:
        raise ShapeError("variance-swap greeks need variance_sens")
    _check_mesh(paths, vs_greeks)
    eff = vs_greeks.cash_gamma.values + 2.0 * vs_greeks.variance_sens.values
    space = vs_greeks.grid.space

    def per_block(blk):
        return _trapezoid(_fk_integrand(blk, paths, eff, space, penalty, vol, y), paths.times)

    return summarize(paths.map_blocks(per_block), target, paths)


def running_integral(S: np.ndarray, times: np.ndarray) -> np.ndarray:
    """A_t = int_0^t S du by the trapezoid rule; same shape as S."""
    dt = np.diff(times)[:, None]
    A = np.zeros_like(S)
    A[1:] = np.cumsum(0.5 * (S[:-1] + S[1:]) * dt, axis=0)
    return A


def _inner_values(payoff: Asian, vol, times, k, s_start, a_start, z, K):
    """Mean payoff over inner paths started at (t_k, s_start, a_start).

    s_start, a_start: (m,); z: (n_rem, m, n_inner).  Returns (m,).
    """
    S = np.repeat(s_start[:, None], z.shape[2], axis=1)
    A = np.repeat(a_start[:, None], z.shape[2], axis=1)
    frozen = np.zeros_like(S, dtype=bool)
    for j in range(z.shape[0]):
        t = times[k + j]
        dt = times[k + j + 1] - t
        sig = np.asarray(vol(t, S), dtype=float)
        new, frozen = log_euler_step(S, sig, dt, z[j], 1.0 / K, K, frozen)
        A = A + 0.5 * (S + new) * dt
        S = new
    return payoff(S, A).mean(axis=1)


def fk_estimate_asian(paths: PathSet, asian_payoff: Asian, penalty: PenaltySpec,
                      vol: LocalVolSurface, y: float = 0.0, bump: float = 0.01,
                      inner: int = 256, stride: int = 1, max_samples: float = 2e9,
                      target: str = "w_tilde_asian") -> FkEstimate:
    """Nested-MC estimate for a payoff G(S_T, A_T).

    At every ``stride``-th time node before T the cash gamma in s is
    estimated by central bump-and-reprice with ``inner`` antithetic inner
    paths shared by the three bumped starts.  The inner sample is split in
    two independent halves whose gamma estimates multiply, so the squared
    gamma is unbiased.  The time integral is a left-point rule on the
    evaluation nodes.  Inner noise is independent across outer paths, so
    the per-path sample standard error already includes it.

    ``max_samples`` caps the total number of inner path-steps.
    """
    if not 1e-3 <= bump <= 1e-1:
        raise ValueError("bump must lie in [1e-3, 1e-1]")
    if inner < 4 or inner % 4:
        raise ValueError("inner sample size must be a positive multiple of 4")
    times = paths.times
    nt = times.size - 1
    eval_idx = np.arange(0, nt, stride)
    cost = 3.0 * inner * paths.n_paths * float(np.sum(nt - eval_idx))
    if cost > max_samples:
        raise BudgetError(f"nested simulation needs {cost:.3g} inner path-steps, "
                          f"budget is {max_samples:.3g}")
    widths = np.diff(np.append(times[eval_idx], times[-1]))
    K = vol.bounds.K
    half = inner // 2

    def per_chunk(S, A, stop, rng):
        b = S.shape[1]
        total = np.zeros(b)
        for m, k in enumerate(eval_idx):
            gams = []
            for _ in range(2):
                zq = rng.standard_normal((nt - k, b, half // 2))
                zz = np.concatenate([zq, -zq], axis=2)
                vals = [_inner_values(asian_payoff, vol, times, k, S[k] * f, A[k], zz, K)
                        for f in (1 + bump, 1.0, 1 - bump)]
                gams.append((vals[0] - 2 * vals[1] + vals[2]) / (bump * bump))
            sig = np.asarray(vol(times[k], S[k]), dtype=float)
            f2 = np.asarray(penalty.d2(sig, sig, y), dtype=float)
            g = 0.5 * sig * sig * gams[0] * gams[1] / f2
            total += np.where(k >= stop, 0.0, g) * widths[m]
        return total

    def per_block(blk):
        A = running_integral(blk.S, times)
        rng = block_rng(paths.seed, blk.start // PATH_BLOCK, _STREAM_ASIAN)
        parts = []
        for c in range(0, blk.S.shape[1], ASIAN_CHUNK):
            sl = slice(c, c + ASIAN_CHUNK)
            parts.append(per_chunk(blk.S[:, sl], A[:, sl], blk.stop_index[sl], rng))
        return np.concatenate(parts)

    return summarize(paths.map_blocks(per_block), target, paths)
