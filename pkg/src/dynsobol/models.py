"""Output models behind a uniform batch interface.

A model maps an input array of shape ``(N, T+1, p)`` to outputs of shape
``(N, T+1)``.  Every model is causal (``Y_t`` only reads inputs at times
``<= t``) and inputs before time 0 are taken as zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError

Evaluator = Callable[[np.ndarray, "np.ndarray | None"], np.ndarray]

BUILDING_CHANNELS = ("below", "above", "off", "cor", "ext")


def _as_array(batch) -> np.ndarray:
    data = getattr(batch, "data", batch)
    data = np.asarray(data, dtype=float)
    if data.ndim != 3:
        raise ConfigError(f"model input must have shape (N, T+1, p), got {data.shape}")
    return data


@dataclass(frozen=True, eq=False)
class ModelFunction:
    """Named, deterministic, causal batch model.

    ``init`` is forwarded to the evaluator as the initial output state
    (``Y_{-1}, Y_{-2}, ...``) when the model declares one.
    """

    name: str
    arity: int
    evaluator: Evaluator
    init: np.ndarray | None = None
    linear: "LinearRecurrenceSpec | None" = field(default=None, repr=False)

    def __call__(self, batch) -> np.ndarray:
        data = _as_array(batch)
        if data.shape[2] != self.arity:
            raise ConfigError(f"model {self.name!r} expects {self.arity} inputs, got {data.shape[2]}")
        out = np.asarray(self.evaluator(data, self.init), dtype=float)
        if out.shape != data.shape[:2]:
            raise ConfigError(f"model {self.name!r} returned shape {out.shape}, expected {data.shape[:2]}")
        return out


def toy_linear(batch) -> np.ndarray:
    """``Y_t = 0.2 Y_{t-1} + 0.3 X_t + Z_t`` with ``Y_{-1} = 0``."""
    data = _as_array(batch)
    if data.shape[2] != 2:
        raise ConfigError("toy_linear expects 2 inputs (X, Z)")
    out = np.empty(data.shape[:2])
    prev = np.zeros(data.shape[0])
    for t in range(data.shape[1]):
        prev = 0.2 * prev + 0.3 * data[:, t, 0] + data[:, t, 1]
        out[:, t] = prev
    return out


def toy_nonlinear(batch) -> np.ndarray:
    """``Y_t = X_t Z_t + 0.2 exp(-Z_t)`` (no memory)."""
    data = _as_array(batch)
    if data.shape[2] != 2:
        raise ConfigError("toy_nonlinear expects 2 inputs (X, Z)")
    x, z = data[:, :, 0], data[:, :, 1]
    return x * z + 0.2 * np.exp(-z)


@dataclass(frozen=True, eq=False)
class LinearRecurrenceSpec:
    """``Y_t = sum_k ar[k] Y_{t-1-k} + sum_l input[l] . U_{t-l}``.

    Parameters
    ----------
    ar_coeffs : sequence of float
        Weights on ``Y_{t-1}, Y_{t-2}, ...``.
    input_coeffs : array_like, shape (n_lags, p)
        Row ``l`` weights ``U_{t-l}``.
    init : sequence of float, optional
        ``Y_{-1}, Y_{-2}, ...``; zeros by default.
    stable : bool
        Reject AR polynomials with a root on or outside the unit circle.
    """

    ar_coeffs: np.ndarray
    input_coeffs: np.ndarray
    init: np.ndarray | None = None
    stable: bool = True

    def __post_init__(self):
        ar = np.atleast_1d(np.asarray(self.ar_coeffs, dtype=float))
        inp = np.asarray(self.input_coeffs, dtype=float)
        if inp.ndim == 1:
            inp = inp[None]
        if inp.ndim != 2:
            raise ConfigError("input_coeffs must be a (n_lags, p) matrix")
        init = np.zeros(ar.size) if self.init is None else np.atleast_1d(np.asarray(self.init, dtype=float))
        if init.size != ar.size:
            raise ConfigError(f"init needs {ar.size} values (one per output lag), got {init.size}")
        object.__setattr__(self, "ar_coeffs", ar)
        object.__setattr__(self, "input_coeffs", inp)
        object.__setattr__(self, "init", init)
        if self.stable and ar.size and self.ar_radius() >= 1.0:
            raise ConfigError(f"output recursion is unstable (AR root modulus {self.ar_radius():.4g})")

    @property
    def dim(self) -> int:
        return self.input_coeffs.shape[1]

    def ar_radius(self) -> float:
        """Largest modulus of the roots of ``z^q - a_1 z^{q-1} - ... - a_q``."""
        if not self.ar_coeffs.size:
            return 0.0
        return float(np.abs(np.roots(np.r_[1.0, -self.ar_coeffs])).max())

    def evaluate(self, data: np.ndarray, init=None) -> np.ndarray:
        data = _as_array(data)
        n, steps, p = data.shape
        if p != self.dim:
            raise ConfigError(f"linear recurrence expects {self.dim} inputs, got {p}")
        init = self.init if init is None else np.atleast_1d(np.asarray(init, dtype=float))
        drive = np.zeros((n, steps))
        for lag, row in enumerate(self.input_coeffs):
            if lag < steps and np.any(row):
                drive[:, lag:] += data[:, : steps - lag] @ row
        q = self.ar_coeffs.size
        # hist[:, k] holds Y_{t-1-k}
        hist = np.tile(init, (n, 1))
        out = np.empty((n, steps))
        for t in range(steps):
            y = drive[:, t] + (hist @ self.ar_coeffs if q else 0.0)
            out[:, t] = y
            if q:
                hist = np.column_stack([y, hist[:, :-1]])
        return out

    def impulse_response(self, n_terms: int) -> np.ndarray:
        """Coefficients ``c_k`` (n_terms, p) with ``Y_t = sum_k c_k . U_{t-k}`` (zero init)."""
        q, lags = self.ar_coeffs.size, self.input_coeffs.shape[0]
        c = np.zeros((n_terms, self.dim))
        for k in range(n_terms):
            if k < lags:
                c[k] = self.input_coeffs[k]
            for i in range(min(q, k)):
                c[k] += self.ar_coeffs[i] * c[k - 1 - i]
        return c

    def expand(self, tol: float = 1e-10, max_terms: int = 100_000) -> np.ndarray:
        """Finite expansion whose dropped tail has summed max-norm below ``tol``."""
        rho = self.ar_radius()
        lags = self.input_coeffs.shape[0]
        if rho == 0.0:
            return self.impulse_response(lags)
        if rho >= 1.0:
            raise ConfigError("cannot expand an unstable recursion")
        # long enough that the remainder beyond it is negligible next to tol
        length = min(max_terms, lags + q_len(rho, tol * 1e-3))
        c = self.impulse_response(length)
        norms = np.abs(c).max(axis=1)
        tail = np.cumsum(norms[::-1])[::-1]
        keep = int(np.argmax(tail < tol)) if np.any(tail < tol) else length
        return c[:keep]

    def to_dict(self) -> dict:
        return {
            "ar_coeffs": self.ar_coeffs.tolist(),
            "input_coeffs": self.input_coeffs.tolist(),
            "init": self.init.tolist(),
            "stable": self.stable,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearRecurrenceSpec":
        try:
            return cls(doc.get("ar_coeffs", []), doc["input_coeffs"], doc.get("init"), doc.get("stable", True))
        except KeyError as exc:
            raise ConfigError(f"linear model document is missing {exc.args[0]!r}") from None


def q_len(rho: float, eps: float) -> int:
    """Number of steps for ``rho^k`` to fall below ``eps`` (with slack)."""
    return int(np.ceil(np.log(eps) / np.log(rho))) + 50


def linear_recurrence(spec: LinearRecurrenceSpec, name: str = "linear") -> ModelFunction:
    return ModelFunction(name, spec.dim, spec.evaluate, spec.init, spec)


TOY_LINEAR_SPEC = LinearRecurrenceSpec([0.2], [[0.3, 1.0]])


@dataclass(frozen=True, eq=False)
class BuildingPhi:
    """Coefficients of the internal-temperature autoregression.

    ``exogenous[k - 1, e]`` weights channel ``e`` at lag ``k`` (k = 1, 2);
    ``internal[k - 1]`` weights ``T_int`` at lag ``k``.
    """

    exogenous: np.ndarray
    internal: np.ndarray
    init: np.ndarray | None = None
    channels: tuple[str, ...] = BUILDING_CHANNELS
    notes: str = ""

    def __post_init__(self):
        exo = np.asarray(self.exogenous, dtype=float)
        internal = np.atleast_1d(np.asarray(self.internal, dtype=float))
        if exo.ndim != 2 or exo.shape[1] != len(self.channels):
            raise ConfigError(f"exogenous coefficients must be (lags, {len(self.channels)})")
        init = np.zeros(internal.size) if self.init is None else np.atleast_1d(np.asarray(self.init, dtype=float))
        object.__setattr__(self, "exogenous", exo)
        object.__setattr__(self, "internal", internal)
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "channels", tuple(self.channels))

    def spec(self) -> LinearRecurrenceSpec:
        inputs = np.vstack([np.zeros(self.exogenous.shape[1]), self.exogenous])
        return LinearRecurrenceSpec(self.internal, inputs, self.init)

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "exogenous": {ch: self.exogenous[:, i].tolist() for i, ch in enumerate(self.channels)},
            "internal": self.internal.tolist(),
            "init": self.init.tolist(),
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BuildingPhi":
        try:
            channels = tuple(doc.get("channels", BUILDING_CHANNELS))
            exo = np.array([doc["exogenous"][ch] for ch in channels], dtype=float).T
            return cls(exo, doc["internal"], doc.get("init"), channels, doc.get("notes", ""))
        except KeyError as exc:
            raise ConfigError(f"building coefficient document is missing {exc.args[0]!r}") from None


def default_building_phi() -> BuildingPhi:
    text = resources.files("dynsobol.data").joinpath("building_phi.json").read_text()
    return BuildingPhi.from_dict(json.loads(text))


def building_model(batch, phi: BuildingPhi | None, init=None) -> np.ndarray:
    """Second-order recursion of the internal temperature on lagged exogenous inputs."""
    if phi is None:
        raise ConfigError("building model needs a coefficient table")
    if init is None and phi.init is None:
        raise ConfigError("building model needs initial internal temperatures")
    return phi.spec().evaluate(_as_array(batch), phi.init if init is None else init)


def make_building(phi: BuildingPhi | None = None) -> ModelFunction:
    phi = default_building_phi() if phi is None else phi
    spec = phi.spec()
    return ModelFunction("building", len(phi.channels), spec.evaluate, phi.init, spec)


def _toy1() -> ModelFunction:
    return ModelFunction("toy1", 2, lambda d, init: toy_linear(d), None, TOY_LINEAR_SPEC)


def _toy2() -> ModelFunction:
    return ModelFunction("toy2", 2, lambda d, init: toy_nonlinear(d))


REGISTRY: dict[str, Callable[..., ModelFunction]] = {
    "toy1": _toy1,
    "toy2": _toy2,
    "building": make_building,
    "linear": linear_recurrence,
}


def get_model(name: str, **params) -> ModelFunction:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory(**params)


def causality_violations(f: ModelFunction, data: np.ndarray, rng: np.random.Generator) -> list[int]:
    """Times ``t`` whose output changes when inputs after ``t`` are perturbed."""
    data = _as_array(data)
    base = f(data)
    bad = []
    for t in range(data.shape[1] - 1):
        pert = data.copy()
        pert[:, t + 1:] += rng.standard_normal(pert[:, t + 1:].shape)
        if not np.array_equal(f(pert)[:, : t + 1], base[:, : t + 1]):
            bad.append(t)
    return bad
