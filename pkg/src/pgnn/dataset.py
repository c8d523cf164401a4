"""Supervised (state, forward-difference derivative) pairs, splits and batching."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientDataError, InvalidInputError
from .integrator import Trajectory
from .systems import SystemSpec


@dataclass(frozen=True)
class Dataset:
    """Pairs ``(X[k], Y[k])`` with ``t[k]`` the grid time of ``X[k]``."""

    system: str
    h: float
    t: np.ndarray
    X: np.ndarray
    Y: np.ndarray

    def __len__(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def pairs(self):
        return list(zip(self.X, self.Y))


@dataclass(frozen=True)
class Split:
    train_idx: np.ndarray
    val_idx: np.ndarray


def build_dataset(spec: SystemSpec, trajectories: Sequence[Trajectory]) -> Dataset:
    """Forward-difference targets ``(x[k+1] - x[k]) / h`` for every trajectory, in order."""
    h = spec.defaults.h
    ts, xs, ys = [], [], []
    for i, traj in enumerate(trajectories):
        if len(traj) < 2:
            raise InsufficientDataError(f"trajectory {i} has {len(traj)} points, need >= 2")
        if traj.dim != spec.dim:
            raise InvalidInputError(f"trajectory {i}: dimension {traj.dim}, expected {spec.dim}")
        if not math.isclose(traj.h, h, rel_tol=1e-12):
            raise InvalidInputError(f"trajectory {i}: timestep {traj.h}, expected {h}")
        s = traj.states
        xs.append(s[:-1])
        ys.append((s[1:] - s[:-1]) / h)
        ts.append(traj.times[:-1])
    if not xs:
        raise InsufficientDataError("no trajectories given")
    X, Y = np.concatenate(xs), np.concatenate(ys)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise InvalidInputError("dataset contains non-finite values")
    return Dataset(spec.id, h, np.concatenate(ts), X, Y)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(dataset: Dataset | int, fraction: float = 0.2, seed: int = 0) -> Split:
    """Hold out a seeded uniformly random ``round(fraction*N)`` subset for validation."""
    if not 0 < fraction < 1:
        raise InvalidInputError(f"fraction must lie in (0, 1), got {fraction}")
    n = dataset if isinstance(dataset, int) else len(dataset)
    if n < 5:
        raise InsufficientDataError(f"need at least 5 pairs to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = _round_half_up(fraction * n)
    return Split(train_idx=np.sort(perm[n_val:]), val_idx=np.sort(perm[:n_val]))


def epoch_order(train_idx: np.ndarray, epoch: int, seed: int) -> np.ndarray:
    """Training indices in the shuffled order used for ``epoch``."""
    rng = np.random.default_rng([seed, epoch])
    return np.asarray(train_idx)[rng.permutation(len(train_idx))]


def batches(sp: Split, batch_size: int, epoch: int, seed: int) -> list[np.ndarray]:
    """Shuffle the training indices by ``(seed, epoch)`` and chunk them.

    The last batch holds the remainder and may be smaller than ``batch_size``.
    """
    if batch_size < 1:
        raise InvalidInputError(f"batch_size must be >= 1, got {batch_size}")
    if len(sp.train_idx) == 0:
        raise InsufficientDataError("empty training set")
    order = epoch_order(sp.train_idx, epoch, seed)
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


# -- serialisation -------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write_rows(path: Path, header: Iterable[str], rows: Iterable[Iterable[float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _read_matrix(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r], dtype=float)
    return header, data.reshape(-1, len(header))


def write_dataset_csv(dataset: Dataset, path: str | Path) -> None:
    d = dataset.dim
    header = ["t"] + [f"x{i}" for i in range(d)] + [f"dx{i}" for i in range(d)]
    rows = np.column_stack([dataset.t, dataset.X, dataset.Y])
    _write_rows(Path(path), header, rows)


def read_dataset_csv(path: str | Path, system: str, h: float) -> Dataset:
    header, data = _read_matrix(Path(path))
    d = (len(header) - 1) // 2
    if header[0] != "t" or len(header) != 2 * d + 1:
        raise InvalidInputError(f"{path}: unexpected dataset header {header}")
    return Dataset(system, h, data[:, 0], data[:, 1 : 1 + d], data[:, 1 + d :])


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    header = ["t"] + [f"x{i}" for i in range(traj.dim)]
    _write_rows(Path(path), header, np.column_stack([traj.times, traj.states]))


def read_trajectory_csv(path: str | Path, h: float) -> Trajectory:
    header, data = _read_matrix(Path(path))
    return Trajectory(t0=float(data[0, 0]), h=h, states=data[:, 1:])


def write_split_json(sp: Split, path: str | Path, seed: int, fraction: float) -> None:
    payload = {
        "seed": seed,
        "fraction": fraction,
        "train_idx": [int(i) for i in sp.train_idx],
        "val_idx": [int(i) for i in sp.val_idx],
    }
    Path(path).write_text(json.dumps(payload, separators=(",", ":")))


def read_split_json(path: str | Path) -> Split:
    payload = json.loads(Path(path).read_text())
    return Split(
        train_idx=np.array(payload["train_idx"], dtype=np.int64),
        val_idx=np.array(payload["val_idx"], dtype=np.int64),
    )
