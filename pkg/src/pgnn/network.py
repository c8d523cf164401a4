"""Feed-forward networks with a known feature concatenated into one hidden layer.

Layer ``l`` (1-based) computes ``z = W @ chi + b``. Hidden layers apply the
activation; the output layer is affine. When ``injection.layer == i`` the
feature vector is appended to the activations of hidden layer ``i`` before they
are consumed by layer ``i + 1``.

Weights are stored as ``(fan_out, fan_in)`` matrices. For training, all
parameters can be packed into one flat vector (per layer ``W`` row-major, then
``b``) described by :class:`Layout`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, NumericOverflowError
from .systems import TERMS, SystemSpec, injection_features

ACTIVATIONS = ("tanh", "relu", "sigmoid")
# relu reproduces the reported convergence gains of injection; with tanh the
# raw, unscaled injected features saturate the units that consume them
DEFAULT_ACTIVATION = "relu"
HIDDEN_WIDTHS = (32, 64, 32)
FEATURE_LEN = 1


@dataclass(frozen=True)
class InjectionConfig:
    """``layer == 0`` means no injection; otherwise the 1-based hidden layer."""

    term: str | None = None
    layer: int = 0

    def __post_init__(self):
        if (self.term is None) != (self.layer == 0):
            raise InvalidInputError("injection term must be given iff layer >= 1")
        if self.layer < 0:
            raise InvalidInputError(f"injection layer must be >= 0, got {self.layer}")
        if self.term is not None and self.term not in TERMS:
            raise InvalidInputError(f"unknown injection term {self.term!r}")

    @property
    def label(self) -> str:
        return "none" if self.term is None else f"{self.term}_L{self.layer}"


BASELINE = InjectionConfig()


@dataclass(frozen=True)
class NetParams:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = DEFAULT_ACTIVATION
    injection: InjectionConfig = field(default_factory=InjectionConfig)
    seed: int | None = None

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    @property
    def n_features(self) -> int:
        return FEATURE_LEN if self.injection.layer else 0

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def fan_ins(sizes: Sequence[int], injection_layer: int, m: int = FEATURE_LEN) -> list[int]:
    """Input width of every affine layer (0-based list, one per layer)."""
    n_layers = len(sizes) - 1
    if injection_layer >= n_layers:
        raise InvalidInputError(
            f"injection layer {injection_layer} needs a hidden layer; net has {n_layers - 1}"
        )
    return [sizes[l] + (m if injection_layer and l == injection_layer else 0) for l in range(n_layers)]


def init_params(
    sizes: Sequence[int],
    activation: str = DEFAULT_ACTIVATION,
    injection: InjectionConfig = BASELINE,
    seed: int = 0,
) -> NetParams:
    """Glorot-uniform weights (injected columns counted in fan-in), zero biases."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise InvalidInputError(f"sizes must have >= 2 positive entries, got {sizes}")
    if activation not in ACTIVATIONS:
        raise InvalidInputError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for l, fan_in in enumerate(fan_ins(sizes, injection.layer)):
        fan_out = sizes[l + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetParams(sizes, weights, biases, activation, injection, seed)


def standard_sizes(dim: int) -> tuple[int, ...]:
    return (dim, *HIDDEN_WIDTHS, dim)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return 1.0 / (1.0 + np.exp(-z))


def _activation_slope(name: str, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation written in terms of its output ``a``."""
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (a > 0).astype(float)
    return a * (1.0 - a)


def _prepare(params: NetParams, X, F):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != params.n_in:
        raise InvalidInputError(f"expected input length {params.n_in}, got {X2.shape[1]}")
    m = params.n_features
    if m:
        if F is None:
            raise InvalidInputError("injected network needs a feature vector")
        F2 = np.asarray(F, dtype=float).reshape(len(X2), -1)
        if F2.shape[1] != m:
            raise InvalidInputError(f"expected feature length {m}, got {F2.shape[1]}")
    else:
        if F is not None and np.size(F):
            raise InvalidInputError("baseline network takes no features")
        F2 = None
    return X2, F2, single


def _forward_cache(params: NetParams, X2: np.ndarray, F2):
    """Layer inputs (after concatenation) and the network output."""
    inputs = []
    chi = X2
    L = params.n_layers
    for l in range(L):
        if params.injection.layer and l == params.injection.layer:
            chi = np.concatenate([chi, F2], axis=1)
        inputs.append(chi)
        with np.errstate(over="ignore", invalid="ignore"):
            z = chi @ params.weights[l].T + params.biases[l]
        if not np.all(np.isfinite(z)):
            raise NumericOverflowError(l + 1)
        chi = z if l == L - 1 else _activate(params.activation, z)
    return inputs, chi


def forward(params: NetParams, x, feat=None) -> np.ndarray:
    """Network output for one state ``(n_in,)`` or a batch ``(B, n_in)``."""
    X2, F2, single = _prepare(params, x, feat)
    _, out = _forward_cache(params, X2, F2)
    return out[0] if single else out


def loss_and_grad(params: NetParams, X, Y, F=None) -> tuple[float, NetParams]:
    """Mean squared error over batch and outputs, and its exact gradient.

    The gradient is returned as a :class:`NetParams` whose weights and biases
    hold the partial derivatives.
    """
    X2, F2, _ = _prepare(params, X, F)
    Y2 = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y2.shape != (len(X2), params.n_out):
        raise InvalidInputError(f"targets of shape {Y2.shape}, expected {(len(X2), params.n_out)}")
    if len(X2) == 0:
        raise InvalidInputError("empty batch")
    inputs, out = _forward_cache(params, X2, F2)
    resid = out - Y2
    loss = float(np.mean(resid * resid))
    delta = 2.0 * resid / resid.size
    gW = [None] * params.n_layers
    gb = [None] * params.n_layers
    for l in range(params.n_layers - 1, -1, -1):
        gW[l] = delta.T @ inputs[l]
        gb[l] = delta.sum(axis=0)
        if l:
            width = params.sizes[l]
            d_chi = delta @ params.weights[l][:, :width]
            delta = d_chi * _activation_slope(params.activation, inputs[l][:, :width])
    return loss, replace(params, weights=gW, biases=gb)


def features_for(params: NetParams, X) -> np.ndarray | None:
    if not params.injection.layer:
        return None
    return injection_features(params.injection.term, X)


def predict_derivative(params: NetParams, spec: SystemSpec, x) -> np.ndarray:
    """Learned right-hand side: computes the injected feature, then runs the net."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.dim:
        raise InvalidInputError(f"expected state length {spec.dim}, got {x.shape[-1]}")
    return forward(params, x, features_for(params, x))


# -- flat parameter vectors ----------------------------------------------------

@dataclass(frozen=True)
class Layout:
    sizes: np.ndarray
    fan_in: np.ndarray
    w_off: np.ndarray
    b_off: np.ndarray
    total: int


def layout_of(params: NetParams) -> Layout:
    fi = fan_ins(params.sizes, params.injection.layer, params.n_features or FEATURE_LEN)
    w_off, b_off = [], []
    pos = 0
    for l, f in enumerate(fi):
        out = params.sizes[l + 1]
        w_off.append(pos)
        pos += out * f
        b_off.append(pos)
        pos += out
    return Layout(
        np.asarray(params.sizes, dtype=np.int32),
        np.asarray(fi, dtype=np.int32),
        np.asarray(w_off, dtype=np.int64),
        np.asarray(b_off, dtype=np.int64),
        pos,
    )


def pack(params: NetParams) -> np.ndarray:
    return np.concatenate(
        [np.concatenate([w.ravel(), b]) for w, b in zip(params.weights, params.biases)]
    )


def unpack(params: NetParams, theta: np.ndarray, layout: Layout | None = None) -> NetParams:
    """NetParams whose arrays are views into ``theta``."""
    lay = layout or layout_of(params)
    weights, biases = [], []
    for l in range(params.n_layers):
        out, f = params.sizes[l + 1], int(lay.fan_in[l])
        w0, b0 = int(lay.w_off[l]), int(lay.b_off[l])
        weights.append(theta[w0 : w0 + out * f].reshape(out, f))
        biases.append(theta[b0 : b0 + out])
    return replace(params, weights=weights, biases=biases)


# -- model files ---------------------------------------------------------------

def to_dict(params: NetParams) -> dict:
    return {
        "sizes": list(params.sizes),
        "activation": params.activation,
        "injection": {"term": params.injection.term, "layer": params.injection.layer},
        "seed": params.seed,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def from_dict(d: dict) -> NetParams:
    inj = InjectionConfig(d["injection"]["term"], int(d["injection"]["layer"]))
    params = NetParams(
        sizes=tuple(int(s) for s in d["sizes"]),
        weights=[np.array(w, dtype=float) for w in d["weights"]],
        biases=[np.array(b, dtype=float) for b in d["biases"]],
        activation=d["activation"],
        injection=inj,
        seed=d.get("seed"),
    )
    expect = fan_ins(params.sizes, inj.layer)
    for l, w in enumerate(params.weights):
        if w.shape != (params.sizes[l + 1], expect[l]):
            raise InvalidInputError(f"layer {l + 1} weight shape {w.shape} inconsistent with sizes")
    return params


def save_model(params: NetParams, path: str | Path) -> None:
    # json writes floats with repr, which round-trips exactly
    Path(path).write_text(json.dumps(to_dict(params)))


def load_model(path: str | Path) -> NetParams:
    return from_dict(json.loads(Path(path).read_text()))
