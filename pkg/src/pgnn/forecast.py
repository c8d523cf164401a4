"""Rolling forecasts, RFMSE scoring and ensemble statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _backend
from .errors import AllDivergedError, InsufficientDataError, InvalidInputError
from .integrator import Trajectory, grid_size
from .network import NetParams
from .systems import TERMS, SystemSpec

DIVERGENCE_LIMIT = 1e6
Z_95 = 1.96
Z_68 = 1.0


@dataclass(frozen=True)
class Rollout:
    """Euler states up to (excluding) the first state that failed the guard."""

    states: np.ndarray
    h: float
    diverged_at: int | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def __len__(self) -> int:
        return len(self.states)


def euler_rollout(
    model: Callable[[np.ndarray], np.ndarray] | NetParams,
    x0,
    h: float,
    n_steps: int,
    limit: float = DIVERGENCE_LIMIT,
) -> Rollout:
    """Iterate ``x[k+1] = x[k] + h*model(x[k])`` for ``n_steps`` steps.

    Stops at the first state with a non-finite component or one exceeding
    ``limit`` in magnitude; that state's index is recorded as ``diverged_at``.
    A :class:`NetParams` model runs through the compiled kernel when available.
    """
    if not h > 0:
        raise InvalidInputError(f"h must be positive, got {h}")
    if n_steps < 1:
        raise InvalidInputError(f"n_steps must be >= 1, got {n_steps}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if isinstance(model, NetParams):
        term = TERMS[model.injection.term] if model.injection.layer else None
        states, bad = _backend.kernels.rollout(model, term, x0, float(h), int(n_steps), float(limit))
        return Rollout(np.asarray(states), h, None if bad < 0 else int(bad))

    states = np.empty((n_steps + 1, x0.size))
    states[0] = x = x0
    for k in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + h * np.asarray(model(x), dtype=float)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > limit:
            return Rollout(states[: k + 1], h, k + 1)
        states[k + 1] = x
    return Rollout(states, h)


def _steps_in(window: float, h: float) -> int:
    """Index of the last grid step with ``k*h <= window``."""
    return grid_size(0.0, h, window) - 1


def rfmse(pred: Rollout | np.ndarray, truth: Trajectory | np.ndarray, window: float,
          h: float) -> float:
    """Mean squared forecast error over steps ``k*h <= window`` and all components.

    Returns ``inf`` when the forecast diverged at or before the end of the window.
    """
    if isinstance(pred, Rollout):
        if not math.isclose(pred.h, h, rel_tol=1e-12):
            raise InvalidInputError(f"forecast step {pred.h} differs from h={h}")
        p, bad = pred.states, pred.diverged_at
    else:
        p, bad = np.atleast_2d(np.asarray(pred, dtype=float)), None
        if p.shape[0] == 1 and np.ndim(pred) == 1:
            p = np.asarray(pred, dtype=float)[:, None]
    if isinstance(truth, Trajectory):
        if not math.isclose(truth.h, h, rel_tol=1e-12):
            raise InvalidInputError(f"truth step {truth.h} differs from h={h}")
        tr = truth.states
    else:
        tr = np.asarray(truth, dtype=float)
        if tr.ndim == 1:
            tr = tr[:, None]
    K = _steps_in(window, h)
    if K + 1 > len(tr):
        raise InvalidInputError(f"window {window} exceeds the truth horizon {(len(tr) - 1) * h}")
    if bad is not None and bad <= K:
        return math.inf
    if len(p) < K + 1:
        raise InvalidInputError(f"forecast has {len(p)} points, window needs {K + 1}")
    if p.shape[1:] != tr.shape[1:]:
        raise InvalidInputError(f"forecast dimension {p.shape[1:]} != truth {tr.shape[1:]}")
    d = p[: K + 1] - tr[: K + 1]
    return float(np.mean(d * d))


@dataclass
class ForecastResult:
    t: np.ndarray
    truth: Trajectory
    member_paths: list[Rollout]
    mean: np.ndarray
    std: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    n_alive: np.ndarray
    rfmse_per_member: list[float]
    window: float
    z: float

    @property
    def diverged(self) -> list[int | None]:
        return [p.diverged_at for p in self.member_paths]

    @property
    def n_diverged(self) -> int:
        return sum(not math.isfinite(r) for r in self.rfmse_per_member)

    @property
    def rfmse_mean(self) -> float:
        finite = [r for r in self.rfmse_per_member if math.isfinite(r)]
        return float(np.mean(finite)) if finite else math.inf

    @property
    def rfmse_std(self) -> float:
        finite = [r for r in self.rfmse_per_member if math.isfinite(r)]
        return float(np.std(finite, ddof=1)) if len(finite) > 1 else math.nan


def ensemble_stats(paths: Sequence[np.ndarray], n_points: int, z: float):
    """Pointwise mean, sample std and ``mean +- z*std`` over members alive at each step.

    Steps with fewer than two live members are NaN.
    """
    d = np.asarray(paths[0]).shape[1]
    stack = np.full((len(paths), n_points, d), np.nan)
    for i, p in enumerate(paths):
        p = np.asarray(p)[:n_points]
        stack[i, : len(p)] = p
    alive = np.array([min(len(p), n_points) for p in paths])
    n_alive = (alive[:, None] > np.arange(n_points)[None, :]).sum(axis=0)
    mean = np.full((n_points, d), np.nan)
    std = np.full((n_points, d), np.nan)
    ok = n_alive >= 2
    # work with deviations from the first live member so that identical
    # members give a mean equal to their common value and exactly zero spread
    first = np.argmax(alive[:, None] > np.arange(n_points)[None, :], axis=0)
    ref = stack[first, np.arange(n_points)]
    dev = stack - ref[None]
    with np.errstate(invalid="ignore"):
        mean[ok] = ref[ok] + np.nanmean(dev[:, ok], axis=0)
        std[ok] = np.nanstd(dev[:, ok], axis=0, ddof=1)
    return mean, std, mean - z * std, mean + z * std, n_alive


def ensemble_forecast(
    models: Sequence[NetParams | Callable],
    spec: SystemSpec,
    truth: Trajectory,
    window: float | None = None,
    z: float = Z_95,
) -> ForecastResult:
    """Roll every member out from the truth's first state over its full horizon."""
    if len(models) < 2:
        raise InsufficientDataError(f"need at least 2 ensemble members, got {len(models)}")
    if truth.dim != spec.dim:
        raise InvalidInputError(f"truth dimension {truth.dim} != system dimension {spec.dim}")
    window = spec.eval_window if window is None else window
    n_steps = len(truth) - 1
    paths = [euler_rollout(m, truth.states[0], truth.h, n_steps) for m in models]
    scores = [rfmse(p, truth, window, truth.h) for p in paths]
    mean, std, lo, hi, n_alive = ensemble_stats([p.states for p in paths], len(truth), z)
    return ForecastResult(
        t=truth.times, truth=truth, member_paths=paths, mean=mean, std=std,
        band_lo=lo, band_hi=hi, n_alive=n_alive, rfmse_per_member=scores,
        window=window, z=z,
    )


def relative_rfmse(table: Mapping[tuple, float]) -> dict[tuple, float]:
    """Divide every entry by the smallest finite entry of its system group.

    Keys are tuples whose first element names the system.
    """
    groups: dict[str, list[float]] = {}
    for key, value in table.items():
        groups.setdefault(key[0], []).append(value)
    best = {}
    for system, values in groups.items():
        finite = [v for v in values if math.isfinite(v)]
        if not finite:
            raise AllDivergedError(system)
        best[system] = min(finite)
    return {
        key: (value / best[key[0]] if math.isfinite(value) else math.inf)
        for key, value in table.items()
    }


# -- files ---------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_forecast_csv(res: ForecastResult, path: str | Path) -> None:
    d = res.truth.dim
    header = (["t"] + [f"truth_{i}" for i in range(d)] + [f"mean_{i}" for i in range(d)]
              + [f"lo_{i}" for i in range(d)] + [f"hi_{i}" for i in range(d)] + ["n_alive"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(len(res.t)):
            row = [_fmt(res.t[k])]
            for block in (res.truth.states, res.mean, res.band_lo, res.band_hi):
                row.extend(_fmt(v) for v in block[k])
            row.append(str(int(res.n_alive[k])))
            w.writerow(row)


def read_forecast_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Columns of a forecast file: ``t``, ``truth``, ``mean``, ``lo``, ``hi`` (n x d), ``n_alive``."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r], dtype=float).reshape(-1, len(header))
    d = (len(header) - 2) // 4
    out = {"t": data[:, 0], "n_alive": data[:, -1].astype(int)}
    for j, name in enumerate(("truth", "mean", "lo", "hi")):
        out[name] = data[:, 1 + j * d : 1 + (j + 1) * d]
    return out


REPORT_HEADER = ["system", "term", "layer", "rfmse_mean", "rfmse_std", "n_diverged", "relative_rfmse"]


def write_report_csv(rows: Sequence[Mapping], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow([
                r["system"], r["term"], int(r["layer"]), _fmt(r["rfmse_mean"]),
                _fmt(r["rfmse_std"]), int(r["n_diverged"]), _fmt(r["relative_rfmse"]),
            ])


def read_report_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["layer"] = int(r["layer"])
        r["n_diverged"] = int(r["n_diverged"])
        for k in ("rfmse_mean", "rfmse_std", "relative_rfmse"):
            r[k] = float(r[k])
    return rows
