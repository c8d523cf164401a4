"""Minibatch ADAM training of single networks and seeded ensembles."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend
from ._fallback import adam_update
from .dataset import Dataset, Split, epoch_order
from .errors import DivergedError, InsufficientDataError, InvalidInputError
from .network import (
    DEFAULT_ACTIVATION,
    InjectionConfig,
    NetParams,
    features_for,
    forward,
    init_params,
    pack,
    standard_sizes,
    unpack,
)
from .systems import SystemSpec


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7

    def __post_init__(self):
        if not (self.lr > 0 and self.eps > 0):
            raise InvalidInputError("lr and eps must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidInputError("beta1 and beta2 must lie in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    ensemble_size: int = 10
    adam: AdamHyper = field(default_factory=AdamHyper)
    activation: str = DEFAULT_ACTIVATION

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInputError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.ensemble_size < 1:
            raise InvalidInputError(f"ensemble_size must be >= 1, got {self.ensemble_size}")

    def member_seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.ensemble_size)]


@dataclass
class LossHistory:
    """Per-epoch mean training batch loss and post-epoch validation MSE."""

    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)
    diverged: bool = False


def adam_step(params, grads, m, v, t: int, hyper: AdamHyper = AdamHyper()):
    """One bias-corrected ADAM update; returns new ``(params, m, v)`` arrays."""
    if t < 1:
        raise InvalidInputError(f"step counter must be >= 1, got {t}")
    g = np.asarray(grads, dtype=float)
    if not np.all(np.isfinite(g)):
        raise DivergedError("non-finite gradient")
    p = np.array(params, dtype=float, copy=True)
    m = np.array(m, dtype=float, copy=True)
    v = np.array(v, dtype=float, copy=True)
    if not (p.shape == g.shape == m.shape == v.shape):
        raise InvalidInputError("params, grads, m and v must share a shape")
    adam_update(p, m, v, g, t, hyper.lr, hyper.beta1, hyper.beta2, hyper.eps)
    return p, m, v


def _validation_mse(net: NetParams, X, Y, F) -> float:
    if len(X) == 0:
        return math.nan
    try:
        resid = forward(net, X, F) - Y
    except ArithmeticError:
        return math.inf
    return float(np.mean(resid * resid))


def train_model(
    dataset: Dataset,
    split: Split,
    spec: SystemSpec,
    injection: InjectionConfig,
    config: TrainConfig,
    member_seed: int,
    backend=None,
) -> tuple[NetParams, LossHistory]:
    """Train one network; fully determined by ``member_seed`` and ``config``.

    ``member_seed`` drives both the initialisation and the per-epoch shuffles.
    Training stops at the first non-finite batch and flags the history as
    diverged.
    """
    if len(dataset) == 0:
        raise InsufficientDataError("empty dataset")
    if dataset.dim != spec.dim:
        raise InvalidInputError(f"dataset dimension {dataset.dim} != system dimension {spec.dim}")
    kern = backend or _backend.kernels
    net = init_params(standard_sizes(spec.dim), config.activation, injection, member_seed)
    theta = pack(net)
    net = unpack(net, theta)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    X = np.ascontiguousarray(dataset.X)
    Y = np.ascontiguousarray(dataset.Y)
    F = features_for(net, X)
    val = split.val_idx
    Xv, Yv = X[val], Y[val]
    Fv = None if F is None else F[val]
    hist = LossHistory()
    hp = config.adam
    step = 0
    for epoch in range(config.epochs):
        order = np.ascontiguousarray(epoch_order(split.train_idx, epoch, member_seed), dtype=np.int64)
        loss_sum, n_batches, step, ok = kern.train_epoch(
            net, theta, m, v, step, X, Y, F, order, config.batch_size,
            hp.lr, hp.beta1, hp.beta2, hp.eps,
        )
        if not ok:
            hist.diverged = True
            break
        val_loss = _validation_mse(net, Xv, Yv, Fv)
        hist.train.append(loss_sum / n_batches)
        hist.val.append(val_loss)
        if not math.isfinite(val_loss) and len(val):
            hist.diverged = True
            break
    return unpack(net, theta.copy()), hist


def _train_member(args):
    return train_model(*args)


def train_ensemble(
    dataset: Dataset,
    split: Split,
    spec: SystemSpec,
    injection: InjectionConfig,
    config: TrainConfig,
    workers: int = 1,
    seeds: Sequence[int] | None = None,
) -> list[tuple[NetParams, LossHistory]]:
    """Train ``config.ensemble_size`` members with seeds ``config.seed + i``.

    Members share data and split; results come back in member order whatever
    the completion order of the workers.
    """
    seeds = list(config.member_seeds() if seeds is None else seeds)
    jobs = [(dataset, split, spec, injection, config, s) for s in seeds]
    if workers <= 1 or len(jobs) == 1:
        return [_train_member(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_member, jobs))


def ema_smooth(series: Sequence[float], alpha: float = 0.2) -> list[float]:
    """Exponential moving average ``s[k] = alpha*x[k] + (1-alpha)*s[k-1]``, ``s[0] = x[0]``."""
    if not 0 < alpha <= 1:
        raise InvalidInputError(f"alpha must lie in (0, 1], got {alpha}")
    if len(series) == 0:
        raise InvalidInputError("empty series")
    out = [float(series[0])]
    for x in series[1:]:
        out.append(alpha * float(x) + (1.0 - alpha) * out[-1])
    return out


def write_loss_csv(hist: LossHistory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tr, va) in enumerate(zip(hist.train, hist.val), start=1):
            w.writerow([i, format(tr, ".17g"), format(va, ".17g")])


def read_loss_csv(path: str | Path) -> LossHistory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return LossHistory(
        train=[float(r["train_loss"]) for r in rows],
        val=[float(r["val_loss"]) for r in rows],
    )
