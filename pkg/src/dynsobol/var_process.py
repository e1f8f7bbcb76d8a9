"""Stationary Gaussian VAR(p) input processes.

The process is

    U_t = A_1 U_{t-1} + ... + A_p U_{t-p} + omega_t,   omega_t ~ N(0, Theta)

with ``A_l[i, j]`` the weight of coordinate ``j`` at lag ``l`` in the
equation of coordinate ``i``.  Everything downstream works on the companion
VAR(1) form, whose top ``dim`` coordinates are the original process.

Lag covariances follow the literal convention

    lag_covariance(cov, k)[i, j] = E(U^i_t U^j_{t+k}),

i.e. rows index the earlier time.  In companion form this is
``Gamma(k) = Gamma(k-1) @ A.T``.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConvergenceError, NonStationaryError

logger = logging.getLogger(__name__)

STATIONARITY_MARGIN = 1e-9
PSD_TOL = 1e-10
DEFAULT_BURN_IN = 200
BLOCK_SIZE = 256
TIME_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class VarModel:
    """VAR(p) specification.

    Parameters
    ----------
    coeffs : array_like, shape (order, dim, dim)
        Autoregressive matrices ``A_1 .. A_order``.
    noise_cov : array_like, shape (dim, dim)
        Innovation covariance ``Theta`` (symmetric PSD).
    mean : array_like, shape (dim,), optional
        Process mean, zero by default.
    names : sequence of str, optional
        Coordinate labels (``u1 .. up`` when omitted).
    """

    coeffs: np.ndarray
    noise_cov: np.ndarray
    mean: np.ndarray | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim == 2:
            coeffs = coeffs[None]
        if coeffs.ndim != 3 or coeffs.shape[1] != coeffs.shape[2] or coeffs.shape[0] < 1:
            raise ConfigError(f"coeffs must have shape (order, dim, dim), got {coeffs.shape}")
        dim = coeffs.shape[1]
        theta = np.asarray(self.noise_cov, dtype=float)
        if theta.shape != (dim, dim):
            raise ConfigError(f"noise_cov must be {dim}x{dim}, got {theta.shape}")
        if not np.allclose(theta, theta.T, rtol=0, atol=1e-12 * max(1.0, np.abs(theta).max())):
            raise ConfigError("noise_cov is not symmetric")
        theta = 0.5 * (theta + theta.T)
        eig_min = np.linalg.eigvalsh(theta).min() if dim else 0.0
        if eig_min < -PSD_TOL * max(1.0, np.abs(theta).max()):
            raise ConfigError(f"noise_cov is not positive semidefinite (min eigenvalue {eig_min:.3g})")
        mean = np.zeros(dim) if self.mean is None else np.asarray(self.mean, dtype=float)
        if mean.shape != (dim,):
            raise ConfigError(f"mean must have length {dim}")
        names = tuple(self.names) if self.names is not None else tuple(f"u{i + 1}" for i in range(dim))
        if len(names) != dim:
            raise ConfigError(f"expected {dim} coordinate names, got {len(names)}")
        if not (np.all(np.isfinite(coeffs)) and np.all(np.isfinite(theta)) and np.all(np.isfinite(mean))):
            raise ConfigError("model contains non-finite values")
        for arr in (coeffs, theta, mean):
            arr.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "noise_cov", theta)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def order(self) -> int:
        return self.coeffs.shape[0]

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "order": self.order,
            "coeffs": self.coeffs.tolist(),
            "noise_cov": self.noise_cov.tolist(),
            "mean": self.mean.tolist(),
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VarModel":
        try:
            coeffs = np.asarray(doc["coeffs"], dtype=float)
            theta = doc["noise_cov"]
        except KeyError as exc:
            raise ConfigError(f"model document is missing {exc.args[0]!r}") from None
        if coeffs.ndim == 2:
            coeffs = coeffs[None]
        model = cls(coeffs, theta, doc.get("mean"), doc.get("names"))
        if "dim" in doc and int(doc["dim"]) != model.dim:
            raise ConfigError(f"declared dim {doc['dim']} does not match coefficients ({model.dim})")
        if "order" in doc and int(doc["order"]) != model.order:
            raise ConfigError(f"declared order {doc['order']} does not match coefficients ({model.order})")
        return model


def companion_matrix(model: VarModel) -> np.ndarray:
    p, q = model.dim, model.order
    big = np.zeros((p * q, p * q))
    big[:p, :] = np.hstack(list(model.coeffs))
    if q > 1:
        big[p:, :-p] = np.eye(p * (q - 1))
    return big


def companion_form(model: VarModel) -> VarModel:
    """Return the equivalent order-1 model of dimension ``dim * order``.

    Order-1 models are returned unchanged.
    """
    if model.order == 1:
        return model
    p, q = model.dim, model.order
    theta = np.zeros((p * q, p * q))
    theta[:p, :p] = model.noise_cov
    mean = np.tile(model.mean, q)
    names = tuple(f"{n}[t-{lag}]" if lag else n for lag in range(q) for n in model.names)
    return VarModel(companion_matrix(model)[None], theta, mean, names)


def spectral_radius(model: VarModel) -> float:
    """Largest eigenvalue modulus of the companion matrix."""
    try:
        eig = np.linalg.eigvals(companion_matrix(model))
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigen-solver failed on the companion matrix: {exc}") from exc
    return float(np.abs(eig).max()) if eig.size else 0.0


def is_stationary(model: VarModel, margin: float = STATIONARITY_MARGIN) -> bool:
    return spectral_radius(model) < 1.0 - margin


def check_stationary(model: VarModel, margin: float = STATIONARITY_MARGIN) -> float:
    rho = spectral_radius(model)
    if not rho < 1.0 - margin:
        raise NonStationaryError(rho)
    return rho


@dataclass(frozen=True, eq=False)
class CovarianceStructure:
    """Exact second-order structure of a stationary VAR model.

    ``gamma0`` is the stationary covariance of the original coordinates;
    ``companion_gamma0`` the one of the stacked companion state.
    """

    model: VarModel
    companion_gamma0: np.ndarray
    residual: float
    iterations: int
    _lags: list = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def gamma0(self) -> np.ndarray:
        p = self.model.dim
        return self.companion_gamma0[:p, :p]

    def lag(self, k: int) -> np.ndarray:
        return lag_covariance(self, k)

    def lags(self, k_max: int) -> np.ndarray:
        """Stack ``Gamma(0) .. Gamma(k_max)`` into shape (k_max + 1, dim, dim)."""
        return np.stack([lag_covariance(self, k) for k in range(k_max + 1)])


def stationary_covariance(model: VarModel, tol: float = 1e-12, max_iter: int = 200) -> CovarianceStructure:
    """Solve ``Gamma = A Gamma A^T + Theta`` by the doubling iteration.

    ``Gamma_{m+1} = Gamma_m + B_m Gamma_m B_m^T``, ``B_{m+1} = B_m^2`` with
    ``Gamma_0 = Theta`` and ``B_0 = A`` (companion form).  After ``m`` steps
    the iterate holds the first ``2^m`` terms of ``sum_k A^k Theta (A^k)^T``.
    """
    check_stationary(model)
    comp = companion_form(model)
    a = comp.coeffs[0]
    gamma = comp.noise_cov.copy()
    b = a.copy()
    for it in range(1, max_iter + 1):
        update = b @ gamma @ b.T
        gamma = gamma + update
        b = b @ b
        if np.linalg.norm(update) < tol * max(1.0, np.linalg.norm(gamma)):
            break
    else:
        raise ConvergenceError(f"Lyapunov doubling did not converge in {max_iter} steps")
    gamma = 0.5 * (gamma + gamma.T)
    residual = float(np.linalg.norm(gamma - a @ gamma @ a.T - comp.noise_cov))
    gamma.setflags(write=False)
    return CovarianceStructure(model, gamma, residual, it, [gamma])


def lag_covariance(cov: CovarianceStructure, k: int) -> np.ndarray:
    """``E(U_t U_{t+k}^T)`` for the original coordinates (cached)."""
    if k < 0:
        raise ValueError("lag must be non-negative")
    lags = cov._lags
    if len(lags) <= k:
        a_t = companion_matrix(cov.model).T
        while len(lags) <= k:
            nxt = lags[-1] @ a_t
            nxt.setflags(write=False)
            lags.append(nxt)
    p = cov.model.dim
    return lags[k][:p, :p]


def joint_covariance(cov: CovarianceStructure, times: Sequence[int]) -> np.ndarray:
    """Covariance of the stacked vector ``(U_s)_{s in times}``, coordinate-minor.

    Entry ``[a * dim + i, b * dim + j]`` is ``Cov(U^i_{times[a]}, U^j_{times[b]})``.
    """
    times = np.asarray(times, dtype=int)
    p = cov.model.dim
    n = len(times)
    span = int(times.max() - times.min()) if n else 0
    lags = cov.lags(span)
    out = np.empty((n * p, n * p))
    for a in range(n):
        for b in range(a, n):
            d = times[b] - times[a]
            block = lags[d] if d >= 0 else lags[-d].T
            out[a * p:(a + 1) * p, b * p:(b + 1) * p] = block
            out[b * p:(b + 1) * p, a * p:(a + 1) * p] = block.T
    return out


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """``N`` sampled input paths over times ``0 .. horizon``.

    ``data`` has shape ``(n_samples, horizon + 1, dim)``.
    """

    data: np.ndarray
    seed: object = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise ValueError(f"trajectory data must be 3-d (samples, times, dim), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("trajectory data contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_times(self) -> int:
        return self.data.shape[1]

    @property
    def horizon(self) -> int:
        return self.data.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.data.shape[2]


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def substream(seed, *key: int) -> np.random.SeedSequence:
    """Deterministic child stream of ``seed`` addressed by ``key``."""
    ss = _seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(key))


def noise_factor(theta: np.ndarray) -> np.ndarray:
    """Matrix ``L`` with ``L L^T = Theta``; handles singular ``Theta``."""
    try:
        return np.linalg.cholesky(theta)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(theta)
    if w.min(initial=0.0) < -PSD_TOL:
        raise ConfigError(f"noise covariance is not PSD (eigenvalue {w.min():.3g})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def _simulate_block(a_t, factor, p, steps, keep, block_ss):
    rng = np.random.Generator(np.random.Philox(block_ss))
    state = np.zeros((BLOCK_SIZE, a_t.shape[0]))
    out = np.empty((BLOCK_SIZE, keep, p))
    first = steps - keep
    # shocks are drawn in time chunks; the stream is consumed in the same order
    for start in range(0, steps, TIME_CHUNK):
        stop = min(steps, start + TIME_CHUNK)
        shocks = rng.standard_normal((stop - start, BLOCK_SIZE, p)) @ factor.T
        for step in range(start, stop):
            state = state @ a_t
            state[:, :p] += shocks[step - start]
            if step >= first:
                out[:, step - first] = state[:, :p]
    return out


def simulate(
    model: VarModel,
    horizon: int,
    n_samples: int,
    seed,
    burn_in: int = DEFAULT_BURN_IN,
    workers: int = 1,
) -> TrajectoryBatch:
    """Sample ``n_samples`` stationary paths ``U_0 .. U_horizon``.

    Each path starts from the zero state ``burn_in`` steps before time 0.
    Samples are drawn in fixed blocks of ``BLOCK_SIZE``, block ``b`` using the
    Philox stream ``substream(seed, b)``, so sample ``i`` depends only on
    ``(model, horizon, burn_in, seed, i)`` and never on ``workers``.
    """
    if horizon < 0 or n_samples < 1:
        raise ConfigError("horizon must be >= 0 and n_samples >= 1")
    if burn_in < 0:
        raise ConfigError("burn_in must be >= 0")
    rho = check_stationary(model)
    if rho > 0 and burn_in * math.log(1.0 / rho) < 20:
        warnings.warn(
            f"burn-in of {burn_in} steps may be short for spectral radius {rho:.4f} "
            f"(residual start weight {rho ** burn_in:.2e})",
            RuntimeWarning,
            stacklevel=2,
        )
    factor = noise_factor(model.noise_cov)
    a_t = companion_matrix(model).T
    p = model.dim
    keep = horizon + 1
    steps = burn_in + keep
    n_blocks = -(-n_samples // BLOCK_SIZE)

    def run(b):
        return _simulate_block(a_t, factor, p, steps, keep, substream(seed, b))

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, range(n_blocks)))
    else:
        blocks = [run(b) for b in range(n_blocks)]
    data = np.concatenate(blocks, axis=0)[:n_samples] + model.mean
    return TrajectoryBatch(data, seed)
