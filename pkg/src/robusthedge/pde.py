"""Backward solvers for 1-D parabolic equations on nonuniform price grids.

Both solvers discretise  w_t + a(t,s) w_ss + q(t,s) = 0  with the standard
three-point second difference and theta-weighted time stepping; the first
``rannacher_steps`` steps after the terminal date are fully implicit.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .errors import ConvergenceError, DomainError, NumericError, ShapeError, SingularityError
from .grid import GridField, GridSpec


def fd_weights(z: float, x, m: int) -> np.ndarray:
    """Finite-difference weights for the m-th derivative at z (Fornberg)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def second_difference_weights(s):
    """Interior weights (lower, upper) with L w_i = lo_i w_{i-1} - (lo_i+up_i) w_i + up_i w_{i+1}."""
    h = np.diff(s)
    hm, hp = h[:-1], h[1:]
    lo = 2.0 / (hm * (hm + hp))
    up = 2.0 / (hp * (hm + hp))
    return lo, up


def _resolve(obj, grid: GridSpec, k: int, extra_shape=()):
    """Evaluate a coefficient given as None, scalar, array over the grid, or callable."""
    t, s = grid.times[k], grid.space
    if obj is None:
        return np.zeros((s.size,) + extra_shape)
    if callable(obj):
        return np.asarray(obj(t, s), dtype=float)
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 0:
        return np.full((s.size,) + extra_shape, float(arr))
    if arr.shape[0] == grid.times.size and arr.ndim >= 2:
        return arr[k]
    return arr


def _check_finite(arr, what, grid, k):
    if not np.all(np.isfinite(arr)):
        j = np.argwhere(~np.isfinite(arr))[0]
        raise NumericError(f"non-finite {what} at t={grid.times[k]:.6g}, "
                           f"s={grid.space[j[0]]:.6g}")


def _boundary_values(boundary, grid, k, terminal_row):
    if boundary is None:
        return terminal_row[0], terminal_row[-1]
    if callable(boundary):
        t = grid.times[k]
        return boundary(t, "lo"), boundary(t, "hi")
    lo, hi = boundary
    return lo, hi


def _band(a, lo_w, up_w):
    """Operator coefficients on interior rows."""
    ai = a[1:-1]
    return ai * lo_w, ai * up_w


def _matrix(n, dt_theta, l, u):
    ab = np.zeros((3, n))
    ab[1, :] = 1.0
    ab[1, 1:-1] += dt_theta * (l + u)
    ab[0, 2:] = -dt_theta * u
    ab[2, :-2] = -dt_theta * l
    return ab


def _apply(w, l, u):
    """Interior rows of L w; w has shape (n,) or (n, m)."""
    if w.ndim == 2:
        l, u = l[:, None], u[:, None]
    return l * w[:-2] - (l + u) * w[1:-1] + u * w[2:]


def _solve(ab, rhs, grid, k):
    try:
        out = solve_banded((1, 1), ab, rhs, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise SingularityError(f"tridiagonal solve failed at t={grid.times[k]:.6g}: {exc}")
    if not np.all(np.isfinite(out)):
        raise SingularityError(f"tridiagonal solve produced non-finite values at "
                               f"t={grid.times[k]:.6g}")
    return out


def solve_backward_parabolic(grid: GridSpec, diffusion, source=None, terminal=None,
                             boundary=None, theta: float = 0.5, rannacher_steps: int = 2,
                             y_nodes=None, label: str = "") -> GridField:
    """Solve w_t + diffusion * w_ss + source = 0 backwards from T.

    See :func:`march_backward` for the accepted coefficient forms.  A trailing
    column axis in the data needs matching ``y_nodes``.
    """
    out = march_backward(grid, diffusion, source, terminal, boundary, theta, rannacher_steps)
    return GridField(grid, out, y_nodes, label)


def march_backward(grid: GridSpec, diffusion, source=None, terminal=None, boundary=None,
                   theta: float = 0.5, rannacher_steps: int = 2) -> np.ndarray:
    """Array-returning core of :func:`solve_backward_parabolic`.

    Coefficients may be callables ``f(t, s)``, arrays over the grid, or
    scalars.  ``source`` and ``terminal`` may carry a trailing axis, in which
    case all columns are solved together against the shared operator.
    ``boundary`` is None (edges frozen at the terminal values), a pair of
    constants, or a callable ``(t, side) -> value`` with side in {'lo','hi'}.
    """
    s = grid.space
    n = s.size
    nt = grid.n_time
    lo_w, up_w = second_difference_weights(s)

    if terminal is None:
        w = None
    elif callable(terminal):
        w = np.asarray(terminal(s), dtype=float)
    else:
        w = np.array(terminal, dtype=float)
    if w is not None and w.ndim == 0:
        w = np.full(n, float(w))
    q_next = _resolve(source, grid, nt)
    if w is None:
        w = np.zeros(q_next.shape if q_next.ndim else (n,))
    if w.shape[0] != n:
        raise ShapeError(f"terminal data has {w.shape[0]} nodes, grid has {n}")
    if q_next.ndim == 1 and w.ndim == 2:
        q_next = q_next[:, None] * np.ones(w.shape[1])
    extra = w.shape[1:]
    _check_finite(w, "terminal data", grid, nt)
    out = np.empty((nt + 1, n) + extra)
    out[nt] = w

    a_next = _resolve(diffusion, grid, nt)
    _check_finite(a_next, "diffusion", grid, nt)
    for k in range(nt - 1, -1, -1):
        dt = grid.times[k + 1] - grid.times[k]
        th = 1.0 if (nt - 1 - k) < rannacher_steps else theta
        a_now = _resolve(diffusion, grid, k)
        _check_finite(a_now, "diffusion", grid, k)
        if np.any(a_now < 0):
            j = int(np.argmin(a_now))
            raise NumericError(f"negative diffusion at t={grid.times[k]:.6g}, s={s[j]:.6g}")
        q_now = _resolve(source, grid, k, extra)
        if q_now.ndim == 1 and extra:
            q_now = q_now[:, None] * np.ones(extra)
        _check_finite(q_now, "source", grid, k)

        l1, u1 = _band(a_next, lo_w, up_w)
        rhs = w.copy()
        if th < 1.0:
            rhs[1:-1] += (1.0 - th) * dt * _apply(w, l1, u1)
        rhs[1:-1] += dt * (th * q_now[1:-1] + (1.0 - th) * q_next[1:-1])
        b_lo, b_hi = _boundary_values(boundary, grid, k, out[nt])
        rhs[0] = b_lo
        rhs[-1] = b_hi
        l0, u0 = _band(a_now, lo_w, up_w)
        w = _solve(_matrix(n, th * dt, l0, u0), rhs, grid, k)
        w[0] = b_lo
        w[-1] = b_hi
        out[k] = w
        a_next, q_next = a_now, q_now
    return out


def solve_bsb(grid: GridSpec, ref_vol, band_lo, band_hi, terminal, psi: float = 1.0,
              boundary=None, theta: float = 0.5, rannacher_steps: int = 2,
              max_sweeps: int = 50, tol: float = 1e-8, label: str = "bsb") -> GridField:
    """Worst-case (seller's) value  V_t + sup_vol 0.5 vol^2 s^2 V_ss = 0.

    The admissible volatility at (t, s) is [sigma_bar + psi*lo, sigma_bar + psi*hi].
    At each step the implicit half is solved by policy iteration on the
    per-node volatility selection, which is driven by the sign of the
    discrete second difference of the current iterate.
    """
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be at least 1")
    s = grid.space
    n = s.size
    nt = grid.n_time
    K = ref_vol.bounds.K
    lo_w, up_w = second_difference_weights(s)

    def diffusion_pair(k):
        t = grid.times[k]
        sb = np.asarray(ref_vol(t, s), dtype=float)
        lo = sb + psi * np.broadcast_to(_resolve(band_lo, grid, k), s.shape)
        hi = sb + psi * np.broadcast_to(_resolve(band_hi, grid, k), s.shape)
        if np.any(lo > hi + 1e-15):
            raise DomainError("band_lo must not exceed band_hi")
        if np.any(hi > K):
            raise DomainError(f"band upper volatility exceeds K={K}")
        sq_hi = np.maximum(lo * lo, hi * hi)
        sq_lo = np.where((lo < 0) & (hi > 0), 0.0, np.minimum(lo * lo, hi * hi))
        return 0.5 * sq_lo * s * s, 0.5 * sq_hi * s * s

    def select(w, a_lo, a_hi):
        d2 = np.zeros(n)
        d2[1:-1] = _apply(w, lo_w, up_w)
        return np.where(d2 > 0, a_hi, a_lo)

    w = np.asarray(terminal(s) if callable(terminal) else terminal, dtype=float).copy()
    out = np.empty((nt + 1, n))
    out[nt] = w
    pair_next = diffusion_pair(nt)
    for k in range(nt - 1, -1, -1):
        dt = grid.times[k + 1] - grid.times[k]
        th = 1.0 if (nt - 1 - k) < rannacher_steps else theta
        pair_now = diffusion_pair(k)
        rhs = w.copy()
        if th < 1.0:
            a1 = select(w, *pair_next)
            rhs[1:-1] += (1.0 - th) * dt * _apply(w, *_band(a1, lo_w, up_w))
        b_lo, b_hi = _boundary_values(boundary, grid, k, out[nt])
        rhs[0], rhs[-1] = b_lo, b_hi
        guess = w
        sel = select(guess, *pair_now)
        scale = max(1.0, float(np.max(np.abs(rhs))))
        for sweep in range(max_sweeps):
            l0, u0 = _band(sel, lo_w, up_w)
            new = _solve(_matrix(n, th * dt, l0, u0), rhs, grid, k)
            new[0], new[-1] = b_lo, b_hi
            sel_new = select(new, *pair_now)
            l2, u2 = _band(sel_new, lo_w, up_w)
            resid = new[1:-1] - th * dt * _apply(new, l2, u2) - rhs[1:-1]
            res = float(np.max(np.abs(resid))) / scale if resid.size else 0.0
            if np.array_equal(sel_new, sel) or res <= tol:
                break
            sel = sel_new
        else:
            raise ConvergenceError(
                f"policy iteration did not converge in {max_sweeps} sweeps at "
                f"t={grid.times[k]:.6g}; residual {res:.3e}", residual=res)
        w = new
        out[k] = w
        pair_next = pair_now
    return GridField(grid, out, None, label)


def _stencils(x, order):
    """Per-node (indices, weights) with 3-point interior and one-sided edges."""
    n = x.size
    edge = 3 if order == 1 else 4
    if n < edge:
        raise ShapeError(f"need at least {edge} nodes to differentiate")
    rows = []
    for i in range(n):
        if i == 0:
            idx = np.arange(0, edge)
        elif i == n - 1:
            idx = np.arange(n - edge, n)
        else:
            idx = np.array([i - 1, i, i + 1])
        rows.append((idx, fd_weights(x[i], x[idx], order)))
    return rows


def derivative_along(values, x, order, axis):
    """Differentiate ``values`` along ``axis`` with nodes ``x``."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    n = x.size
    st = _stencils(np.asarray(x, dtype=float), order)
    out = np.empty_like(v)
    wl = np.array([w[0] for _, w in st[1:-1]])
    wc = np.array([w[1] for _, w in st[1:-1]])
    wu = np.array([w[2] for _, w in st[1:-1]])
    out[..., 1:-1] = wl * v[..., :-2] + wc * v[..., 1:-1] + wu * v[..., 2:]
    for i in (0, n - 1):
        idx, w = st[i]
        out[..., i] = v[..., idx] @ w
    return np.moveaxis(out, -1, axis)


def differentiate_field(field: GridField, order: int, axis: str = "space") -> GridField:
    """First or second derivative along price ('space') or cash ('y')."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if axis == "space":
        x, ax = field.grid.space, 1
    elif axis == "y":
        if not field.has_y:
            raise ShapeError("field has no y axis")
        x, ax = field.y_nodes, 2
    else:
        raise ValueError(f"unknown axis {axis!r}")
    if x.size < 3:
        raise ShapeError("need at least 3 nodes along the differentiation axis")
    d = derivative_along(field.values, x, order, ax)
    suffix = ("_" + ("s" if axis == "space" else "y") * order)
    return field.with_values(d, field.label + suffix)
