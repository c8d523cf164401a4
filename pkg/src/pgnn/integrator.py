"""Dormand-Prince 5(4) integration and uniform resampling of the result."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BlowUpError, InvalidInputError, OutOfRangeError, StiffnessError

Rhs = Callable[[np.ndarray], np.ndarray]

DEFAULT_RTOL = 1e-6
DEFAULT_ATOL = 1e-9
MAX_STEPS = 10**7

# Dormand & Prince (1980) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B5 - _B4


@dataclass(frozen=True)
class SolverSteps:
    """Accepted solver points with the derivative cached at each one."""

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """States on the uniform grid ``t0 + k*h``."""

    t0: float
    h: float
    states: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(len(self.states))

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def _stages(rhs: Rhs, x: np.ndarray, t: float, h: float, k1: np.ndarray | None):
    k = np.empty((7, x.size))
    k[0] = rhs(x) if k1 is None else k1
    for i in range(1, 7):
        xi = x + h * (np.asarray(_A[i]) @ k[:i])
        ki = rhs(xi)
        if not np.all(np.isfinite(ki)):
            raise BlowUpError("non-finite Runge-Kutta stage", t + _C[i] * h)
        k[i] = ki
    # stage 7 is evaluated at the 5th-order solution (FSAL)
    return k


def _error_norm(x, x5, delta, rtol, atol) -> float:
    scale = atol + rtol * np.maximum(np.abs(x), np.abs(x5))
    return float(np.max(np.abs(delta) / scale)) if x.size else 0.0


def dp45_step(
    rhs: Rhs,
    x,
    t: float,
    h: float,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    k1: np.ndarray | None = None,
    return_fsal: bool = False,
):
    """Take one Dormand-Prince step of size ``h`` from state ``x`` at time ``t``.

    Returns ``(x5, err)`` where ``err`` is the max-norm of the embedded error
    estimate scaled componentwise by ``atol + rtol*max(|x|, |x5|)``. With
    ``return_fsal`` the derivative at ``x5`` is returned as a third element,
    so a following step can reuse it as ``k1``.
    """
    if not h > 0:
        raise InvalidInputError(f"step size must be positive, got {h}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise BlowUpError("non-finite state", t)
    k = _stages(rhs, x, t, h, k1)
    x5 = x + h * (_B5 @ k)
    err = _error_norm(x, x5, h * (_E @ k), rtol, atol)
    if return_fsal:
        return x5, err, k[6]
    return x5, err


def integrate_adaptive(
    rhs: Rhs,
    x0,
    t0: float,
    T: float,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    h0: float | None = None,
) -> SolverSteps:
    """Integrate ``rhs`` from ``(t0, x0)`` to ``T`` with adaptive step control.

    Steps are accepted when the scaled error norm is at most 1; the next step
    size is ``h * min(5, max(0.2, 0.9 * err**-0.2))``. The last step is clipped
    to land exactly on ``T``.
    """
    if not T > t0:
        raise InvalidInputError(f"need T > t0, got t0={t0}, T={T}")
    if not (rtol > 0 and atol > 0):
        raise InvalidInputError("rtol and atol must be positive")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if not np.all(np.isfinite(x)):
        raise BlowUpError("non-finite initial state", t0)

    span = T - t0
    h_min = 1e-14 * span
    h = 1e-3 * span if h0 is None else h0
    t = t0
    f = np.asarray(rhs(x), dtype=float)
    times, states, derivs = [t0], [x], [f]
    n_steps = 0
    while t < T:
        if n_steps >= MAX_STEPS:
            raise StiffnessError("step budget exhausted", t)
        last = t + h >= T
        step = T - t if last else h
        x5, err, f5 = dp45_step(rhs, x, t, step, rtol, atol, k1=f, return_fsal=True)
        n_steps += 1
        factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        if err <= 1.0:
            if not np.all(np.isfinite(x5)):
                raise BlowUpError("non-finite state", t + step)
            t = T if last else t + step
            x, f = x5, f5
            times.append(t)
            states.append(x)
            derivs.append(f)
        h = step * factor
        if h < h_min and t < T:
            raise StiffnessError(f"step size underflow (h={h:.3e})", t)
    return SolverSteps(np.array(times), np.array(states), np.array(derivs))


def grid_size(t0: float, h: float, T: float) -> int:
    """Number of points ``floor((T - t0)/h) + 1``, robust to representation error."""
    return int(math.floor((T - t0) / h + 1e-9)) + 1


def resample_uniform(steps: SolverSteps, t0: float, h: float, T: float) -> Trajectory:
    """Cubic Hermite interpolation of accepted steps onto ``t0 + k*h``.

    Grid points within 1e-12 of an accepted time copy that state exactly.
    """
    n = grid_size(t0, h, T)
    grid = t0 + h * np.arange(n)
    ts = steps.times
    tol = 1e-12
    if grid[0] < ts[0] - tol or grid[-1] > ts[-1] + tol:
        raise OutOfRangeError(
            f"grid [{grid[0]}, {grid[-1]}] exceeds solver coverage [{ts[0]}, {ts[-1]}]"
        )
    grid = np.clip(grid, ts[0], ts[-1])
    j = np.clip(np.searchsorted(ts, grid, side="right") - 1, 0, len(ts) - 2)
    ta, tb = ts[j], ts[j + 1]
    dt = (tb - ta)[:, None]
    s = ((grid - ta) / (tb - ta))[:, None]
    xa, xb = steps.states[j], steps.states[j + 1]
    fa, fb = steps.derivs[j], steps.derivs[j + 1]
    s2, s3 = s * s, s * s * s
    out = (
        (2 * s3 - 3 * s2 + 1) * xa
        + (s3 - 2 * s2 + s) * dt * fa
        + (-2 * s3 + 3 * s2) * xb
        + (s3 - s2) * dt * fb
    )
    # exact copies where the grid hits an accepted time
    k = np.clip(np.searchsorted(ts, grid), 0, len(ts) - 1)
    for cand in (k, np.maximum(k - 1, 0)):
        hit = np.abs(ts[cand] - grid) <= tol
        out[hit] = steps.states[cand[hit]]
    return Trajectory(t0=float(t0), h=float(h), states=out)


def simulate(rhs: Rhs, x0, t0: float, h: float, T: float,
             rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> Trajectory:
    """Integrate adaptively and resample onto the uniform grid in one call."""
    return resample_uniform(integrate_adaptive(rhs, x0, t0, T, rtol, atol), t0, h, T)
