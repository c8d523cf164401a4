"""Benchmark ODE systems, their injection features and conserved quantities.

Every right-hand side is autonomous and vectorised over leading axes: ``x`` may
be a single state of shape ``(dim,)`` or a batch of shape ``(n, dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np

from .errors import DomainError, InvalidInputError, NoInvariantError

SYSTEM_IDS = ("lotka_volterra", "duffing", "van_der_pol", "lorenz", "henon_heiles")


@dataclass(frozen=True)
class DatasetDefaults:
    h: float
    T: float
    train_ics: tuple[tuple[float, ...], ...]
    test_ic: tuple[float, ...]


@dataclass(frozen=True)
class InjectionTerm:
    """A known scalar feature of the raw state, written as a monomial.

    ``exponents[i]`` is the power of state component ``i``; the feature value
    is ``prod(x[i] ** exponents[i])``.
    """

    id: str
    system: str
    exponents: tuple[int, ...]
    label: str

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1])
        for i, p in enumerate(self.exponents):
            if p:
                out = out * x[..., i] ** p
        return out


TERMS: Mapping[str, InjectionTerm] = MappingProxyType(
    {
        t.id: t
        for t in (
            InjectionTerm("lv_xy", "lotka_volterra", (1, 1), "xy"),
            InjectionTerm("duf_x3", "duffing", (3, 0, 0, 0), "x^3"),
            # psi carries cos(wt) in the autonomous Duffing form
            InjectionTerm("duf_cos", "duffing", (0, 0, 1, 0), "cos(wt)"),
            InjectionTerm("vdp_x2y", "van_der_pol", (2, 1), "x^2y"),
            InjectionTerm("vdp_x2", "van_der_pol", (2, 0), "x^2"),
            InjectionTerm("lor_xy", "lorenz", (1, 1, 0), "xy"),
            InjectionTerm("hh_xy", "henon_heiles", (1, 1, 0, 0), "xy"),
            InjectionTerm("hh_y2", "henon_heiles", (0, 2, 0, 0), "y^2"),
        )
    }
)


@dataclass(frozen=True)
class SystemSpec:
    """One benchmark system.

    ``variant`` is ``"standard"`` for every system except Henon-Heiles, whose
    default equations of motion are derived from its Hamiltonian
    (``"hamiltonian"``). The literally printed form with ``-2*lambda*(x^2 - y^2)``
    is available as ``"printed"`` through :func:`henon_heiles_printed`; it
    escapes to infinity in finite time from most benchmark initial conditions.
    """

    id: str
    dim: int
    params: Mapping[str, float]
    terms: tuple[str, ...]
    defaults: DatasetDefaults
    eval_window: float
    variant: str = "standard"
    _rhs: Callable[[Mapping[str, float], np.ndarray], np.ndarray] = field(
        default=None, repr=False, compare=False
    )

    def rhs(self, x) -> np.ndarray:
        return rhs(self, x)

    def with_params(self, **overrides: float) -> "SystemSpec":
        unknown = set(overrides) - set(self.params)
        if unknown:
            raise InvalidInputError(f"unknown parameters for {self.id}: {sorted(unknown)}")
        return replace(self, params=MappingProxyType({**self.params, **overrides}))

    def __reduce__(self):
        # mapping proxies do not pickle; worker processes receive a plain dict
        state = {f.name: getattr(self, f.name) for f in fields(self)}
        state["params"] = dict(self.params)
        return (_restore_spec, (state,))


def _restore_spec(state: dict) -> SystemSpec:
    return SystemSpec(**{**state, "params": MappingProxyType(state["params"])})


def _lotka_volterra(p, x):
    a, b, d, g = p["alpha"], p["beta"], p["delta"], p["gamma"]
    u, w = x[..., 0], x[..., 1]
    return np.stack([a * u - b * u * w, d * u * w - g * w], axis=-1)


def _duffing(p, x):
    u, v, psi, theta = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    dv = p["gamma"] * psi - p["delta"] * v - p["alpha"] * u - p["beta"] * u**3
    return np.stack([v, dv, -p["omega"] * theta, p["omega"] * psi], axis=-1)


def _van_der_pol(p, x):
    u, v = x[..., 0], x[..., 1]
    return np.stack([v, p["mu"] * (1.0 - u**2) * v + u], axis=-1)


def _lorenz(p, x):
    u, v, w = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [p["sigma"] * (v - u), u * (p["rho"] - w) - v, u * v - p["beta"] * w], axis=-1
    )


def _henon_heiles(p, x):
    u, v, du, dv = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    lam = p["lambda"]
    return np.stack([du, dv, -u - 2 * lam * u * v, -v - lam * (u**2 - v**2)], axis=-1)


def _henon_heiles_printed(p, x):
    u, v, du, dv = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    lam = p["lambda"]
    return np.stack([du, dv, -u - 2 * lam * u * v, -v - 2 * lam * (u**2 - v**2)], axis=-1)


def _freeze(d=(), **kw):
    return MappingProxyType(dict(d, **kw))


_SPECS = {
    "lotka_volterra": SystemSpec(
        id="lotka_volterra",
        dim=2,
        params=_freeze(alpha=0.1, beta=0.05, delta=0.1, gamma=1.1),
        terms=("lv_xy",),
        defaults=DatasetDefaults(
            h=0.05,
            T=200.0,
            train_ics=((2, 1), (10, 1), (12, 1), (15, 1), (20, 1), (22, 1), (25, 1)),
            test_ic=(5, 1),
        ),
        eval_window=25.0,
        _rhs=_lotka_volterra,
    ),
    "duffing": SystemSpec(
        id="duffing",
        dim=4,
        params=_freeze(delta=1.0, alpha=0.5, beta=1.0, gamma=3.0, omega=0.4),
        terms=("duf_x3", "duf_cos"),
        defaults=DatasetDefaults(
            h=0.05,
            T=200.0,
            train_ics=tuple(
                (x, y, 1.0, 0.0) for x, y in ((1, 1), (0, 1), (-1, 1), (1, -1), (0, -1), (-1, -1))
            ),
            test_ic=(1, 0.5, 1.0, 0.0),
        ),
        eval_window=70.0,
        _rhs=_duffing,
    ),
    "van_der_pol": SystemSpec(
        id="van_der_pol",
        dim=2,
        params=_freeze(mu=3.0),
        terms=("vdp_x2y", "vdp_x2"),
        defaults=DatasetDefaults(
            h=0.005,
            T=20.0,
            train_ics=((0, 6), (0, -2), (-1, 2), (1, -4), (0, 0.1), (1, 3), (-2, 5)),
            test_ic=(2, -5),
        ),
        eval_window=2.5,
        _rhs=_van_der_pol,
    ),
    "lorenz": SystemSpec(
        id="lorenz",
        dim=3,
        params=_freeze(sigma=10.0, rho=28.0, beta=8.0 / 3.0),
        terms=("lor_xy",),
        defaults=DatasetDefaults(
            h=0.005,
            T=25.0,
            train_ics=((1, 1, 1), (5, 1, 1), (1, 5, 1), (1, 1, 5), (-5, 1, 1), (1, -5, 1)),
            test_ic=(1, 1, -5),
        ),
        eval_window=2.5,
        _rhs=_lorenz,
    ),
    "henon_heiles": SystemSpec(
        id="henon_heiles",
        dim=4,
        params=_freeze({"lambda": 1.0}),
        terms=("hh_xy", "hh_y2"),
        defaults=DatasetDefaults(
            h=0.05,
            T=100.0,
            train_ics=((0.1, 0.5, 0, 0), (0.3, 0.4, 0, 0), (-0.35, 0.4, 0, 0), (0.3, -0.1, 0, 0)),
            test_ic=(-0.325, 0.4, 0, 0),
        ),
        eval_window=15.0,
        variant="hamiltonian",
        _rhs=_henon_heiles,
    ),
}


def get_system(system_id: str, **param_overrides: float) -> SystemSpec:
    """Return the benchmark system ``system_id``, optionally with overridden parameters."""
    try:
        spec = _SPECS[system_id]
    except KeyError:
        raise InvalidInputError(
            f"unknown system {system_id!r}; expected one of {SYSTEM_IDS}"
        ) from None
    return spec.with_params(**param_overrides) if param_overrides else spec


def henon_heiles_hamiltonian() -> SystemSpec:
    """Henon-Heiles with equations of motion derived from its Hamiltonian (the default)."""
    return _SPECS["henon_heiles"]


def henon_heiles_printed() -> SystemSpec:
    """Henon-Heiles with ``y'' = -y - 2*lambda*(x^2 - y^2)``.

    This form does not conserve the Hamiltonian and its orbits escape in finite
    time from three of the four training initial conditions.
    """
    return replace(_SPECS["henon_heiles"], variant="printed", _rhs=_henon_heiles_printed)


def _check_dim(x: np.ndarray, dim: int, what: str) -> None:
    if x.ndim == 0 or x.shape[-1] != dim:
        actual = x.shape[-1] if x.ndim else 0
        raise InvalidInputError(f"{what}: expected state length {dim}, got {actual}")


def rhs(spec: SystemSpec, x) -> np.ndarray:
    """Instantaneous time derivative of ``spec`` at state ``x``."""
    x = np.asarray(x, dtype=float)
    _check_dim(x, spec.dim, spec.id)
    return spec._rhs(spec.params, x)


def injection_features(term: str | InjectionTerm, x) -> np.ndarray:
    """Known feature for ``term`` evaluated at the raw state ``x``.

    Returns shape ``(1,)`` for a single state and ``(n, 1)`` for a batch.
    """
    t = TERMS[term] if isinstance(term, str) else term
    x = np.asarray(x, dtype=float)
    _check_dim(x, len(t.exponents), t.id)
    return t(x)[..., None]


def conserved_quantity(spec: SystemSpec, x) -> float | np.ndarray:
    """First integral of ``spec`` at ``x``.

    Lotka-Volterra uses ``delta*x - gamma*ln x + beta*y - alpha*ln y``, Duffing
    the forcing circle ``psi^2 + theta^2`` and Henon-Heiles its Hamiltonian
    (not constant for the :func:`henon_heiles_printed` variant).
    """
    x = np.asarray(x, dtype=float)
    _check_dim(x, spec.dim, spec.id)
    p = spec.params
    if spec.id == "lotka_volterra":
        u, w = x[..., 0], x[..., 1]
        if np.any(u <= 0) or np.any(w <= 0):
            raise DomainError("Lotka-Volterra invariant requires x > 0 and y > 0")
        return p["delta"] * u - p["gamma"] * np.log(u) + p["beta"] * w - p["alpha"] * np.log(w)
    if spec.id == "duffing":
        return x[..., 2] ** 2 + x[..., 3] ** 2
    if spec.id == "henon_heiles":
        u, v, du, dv = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        return 0.5 * (du**2 + dv**2) + 0.5 * (u**2 + v**2) + u**2 * v - v**3 / 3.0
    raise NoInvariantError(f"{spec.id} has no conserved quantity")
