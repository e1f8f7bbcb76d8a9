"""Gaussian orthogonalisation of the inputs and pick-freeze input pairs.

One coordinate ``X = U^target`` is frozen, the others form ``Z``.  For a
conditioning window ``0..t`` the Gaussian regression

    X~_u = E(Z_u | X_0 .. X_t) = Lambda_t^T X_{0..t},   W_u = Z_u - X~_u

splits ``Z_{0..t}`` into an ``X``-measurable part and a remainder ``W``
independent of ``X_{0..t}``.  ``Lambda_t`` solves

    Gamma^XX_t Lambda_t = Gamma^XZ_t

where ``Gamma^XX_t[s, v] = Cov(X_s, X_v)`` and the columns of
``Gamma^XZ_t`` are laid out time-major: column ``u * (p - 1) + j`` holds
``Cov(X_s, Z^j_u)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, FullRankError
from .toeplitz import ToeplitzSolver
from .var_process import (
    DEFAULT_BURN_IN,
    CovarianceStructure,
    TrajectoryBatch,
    VarModel,
    simulate,
    stationary_covariance,
    substream,
)

HYPOTHESIS = "full-rank hypothesis on the past of the frozen coordinate"


def _other_coords(dim: int, target: int) -> list[int]:
    if not 0 <= target < dim:
        raise ConfigError(f"target coordinate {target} out of range for dimension {dim}")
    if dim < 2:
        raise ConfigError("at least two input coordinates are required")
    return [j for j in range(dim) if j != target]


def build_past_covariances(cov: CovarianceStructure, target: int, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Model-implied ``Gamma^XX`` (t+1, t+1) and ``Gamma^XZ`` (t+1, (p-1)(t+1))."""
    p = cov.dim
    others = _other_coords(p, target)
    lags = cov.lags(t)
    # cross[d] = Cov(X_s, Z_{s+d}) for d = -t .. t
    cross = np.empty((2 * t + 1, p - 1))
    for d in range(t + 1):
        cross[t + d] = lags[d][target, others]
        cross[t - d] = lags[d][others, target]
    s = np.arange(t + 1)
    gxx = lags[np.abs(s[:, None] - s[None, :]), target, target]
    gxz = cross[t + s[None, :] - s[:, None]].reshape(t + 1, (t + 1) * (p - 1))
    return gxx, gxz


def compute_lambda(gxx, gxz, jitter: bool = False, method: str = "cholesky") -> np.ndarray:
    """Regression matrix ``Lambda`` with ``gxx @ Lambda = gxz``.

    ``method="cholesky"`` is the dense reference path; ``"levinson"``
    assumes ``gxx`` is symmetric Toeplitz.  A non positive definite ``gxx``
    raises :class:`FullRankError` unless ``jitter`` is set, in which case
    ``eps * I`` with ``eps = 1e-10 * trace / n`` is added and a warning
    issued.
    """
    gxx = np.asarray(gxx, dtype=float)
    gxz = np.asarray(gxz, dtype=float)
    if gxx.ndim != 2 or gxx.shape[0] != gxx.shape[1] or gxz.shape[0] != gxx.shape[0]:
        raise ValueError(f"incompatible shapes {gxx.shape} and {gxz.shape}")
    try:
        return _solve(gxx, gxz, method)
    except FullRankError:
        if not jitter:
            raise
    eps = 1e-10 * np.trace(gxx) / gxx.shape[0]
    warnings.warn(f"{HYPOTHESIS} violated; adding jitter {eps:.3g} to the diagonal", RuntimeWarning, stacklevel=2)
    return _solve(gxx + eps * np.eye(gxx.shape[0]), gxz, method)


def _solve(gxx, gxz, method):
    if method == "levinson":
        return ToeplitzSolver(gxx[:, 0]).solve(gxz)
    if method != "cholesky":
        raise ValueError(f"unknown method {method!r}")
    try:
        factor = scipy.linalg.cho_factor(gxx, lower=True)
    except np.linalg.LinAlgError:
        raise FullRankError(f"covariance of the frozen coordinate's past is not positive definite ({HYPOTHESIS})") from None
    return scipy.linalg.cho_solve(factor, gxz)


@dataclass(frozen=True, eq=False)
class DecompositionPlan:
    """Regression matrices ``Lambda_t`` for windows ``t = 0 .. horizon``.

    ``lambdas[t]`` has shape ``(t + 1, (p - 1) * (t + 1))``; ``xx_factor`` is
    the shared Levinson solver in model mode (``None`` otherwise).
    """

    target: int
    dim: int
    horizon: int
    lambdas: tuple
    mean: np.ndarray
    mode: str = "model"
    xx_factor: ToeplitzSolver | None = None

    def lambda_for(self, t: int) -> np.ndarray:
        """``Lambda_t`` reshaped to (t+1 past times, t+1 target times, p-1 components)."""
        if not 0 <= t <= self.horizon:
            raise ConfigError(f"t={t} outside the plan horizon 0..{self.horizon}")
        return self.lambdas[t].reshape(t + 1, t + 1, self.dim - 1)


def build_plan(
    cov: CovarianceStructure,
    target: int,
    horizon: int,
    method: str = "levinson",
    jitter: bool = False,
) -> DecompositionPlan:
    """Model-mode plan: exact covariances, one solve per window."""
    gxx, gxz = build_past_covariances(cov, target, horizon)
    p = cov.dim
    solver = None
    if method == "levinson":
        solver = ToeplitzSolver(gxx[:, 0])
        if solver.size <= horizon and not jitter:
            raise FullRankError(f"Gamma^XX is singular at window {solver.size} ({HYPOTHESIS})")
    lambdas = []
    for t in range(horizon + 1):
        cols = (t + 1) * (p - 1)
        sub_xx, sub_xz = gxx[: t + 1, : t + 1], gxz[: t + 1, :cols]
        if solver is not None and t < solver.size:
            lam = solver.solve(sub_xz)
        else:
            lam = compute_lambda(sub_xx, sub_xz, jitter=jitter, method="cholesky")
        lam.setflags(write=False)
        lambdas.append(lam)
    return DecompositionPlan(target, p, horizon, tuple(lambdas), cov.model.mean, "model", solver)


def build_empirical_plan(data: np.ndarray, target: int, jitter: bool = False) -> DecompositionPlan:
    """Plan from sample covariances (1/N, centred) of trajectories ``data`` (N, T+1, p)."""
    data = np.asarray(data, dtype=float)
    n, steps, p = data.shape
    others = _other_coords(p, target)
    mean = data.mean(axis=(0, 1))
    centred = data - data.mean(axis=0)
    x = centred[:, :, target]
    z = centred[:, :, others].reshape(n, steps * (p - 1))
    gxx_full = x.T @ x / n
    gxz_full = x.T @ z / n
    lambdas = []
    for t in range(steps):
        cols = (t + 1) * (p - 1)
        lam = compute_lambda(gxx_full[: t + 1, : t + 1], gxz_full[: t + 1, :cols], jitter=jitter)
        lam.setflags(write=False)
        lambdas.append(lam)
    return DecompositionPlan(target, p, steps - 1, tuple(lambdas), mean, "empirical")


def conditional_mean(lam: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``X~ = Lambda^T X`` for a batch ``x`` of shape (N, t+1); returns (N, t+1, p-1)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or lam.shape[0] != x.shape[1] or lam.shape[1] % x.shape[1]:
        raise ValueError(f"shape mismatch between Lambda {lam.shape} and X batch {x.shape}")
    steps = x.shape[1]
    return (x @ lam).reshape(x.shape[0], steps, lam.shape[1] // steps)


def decompose(z: np.ndarray, x_tilde: np.ndarray) -> np.ndarray:
    """``W = Z - X~``."""
    z = np.asarray(z, dtype=float)
    if z.shape != np.shape(x_tilde):
        raise ValueError(f"shape mismatch: Z {z.shape} vs X~ {np.shape(x_tilde)}")
    return z - x_tilde


@dataclass(frozen=True, eq=False)
class PickFreezePair:
    """Inputs of the original run and of its pick-freezed replication.

    ``x_traj`` (N, t+1) is shared; replication 1 is ``(x, z_traj)`` and
    replication 2 is ``(x, z_pf_traj)`` with ``z_pf = X~_1 + W_2``.
    """

    target: int
    x_traj: np.ndarray
    z_traj: np.ndarray
    z_pf_traj: np.ndarray
    seed_pair: tuple

    def inputs(self, replica: int) -> np.ndarray:
        """Full input array (N, t+1, p) of replication 1 or 2."""
        z = {1: self.z_traj, 2: self.z_pf_traj}[replica]
        return np.insert(z, self.target, self.x_traj, axis=2)

    def batch(self, replica: int) -> TrajectoryBatch:
        return TrajectoryBatch(self.inputs(replica), self.seed_pair[replica - 1])


def split(data: np.ndarray, target: int) -> tuple[np.ndarray, np.ndarray]:
    others = _other_coords(data.shape[2], target)
    return data[:, :, target], data[:, :, others]


def simulate_replicas(model: VarModel, horizon: int, n_samples: int, seed, burn_in: int = DEFAULT_BURN_IN, workers: int = 1):
    """Two independent batches on sub-streams ``(seed, 1)`` and ``(seed, 2)``."""
    seeds = (substream(seed, 1), substream(seed, 2))
    return tuple(simulate(model, horizon, n_samples, s, burn_in, workers) for s in seeds)


def assemble_pair(plan: DecompositionPlan, data1: np.ndarray, data2: np.ndarray, t: int, seed_pair=(None, None)) -> PickFreezePair:
    """Pick-freeze pair for the window ``0..t`` from two simulated batches."""
    lam = plan.lambdas[t]
    mean = plan.mean
    others = _other_coords(plan.dim, plan.target)
    x1, z1 = split(np.asarray(data1)[:, : t + 1], plan.target)
    x2, z2 = split(np.asarray(data2)[:, : t + 1], plan.target)
    mx, mz = mean[plan.target], mean[others]
    xt1 = conditional_mean(lam, x1 - mx)
    xt2 = conditional_mean(lam, x2 - mx)
    w2 = decompose(z2 - mz, xt2)
    z_pf = xt1 + w2 + mz
    return PickFreezePair(plan.target, x1, z1, z_pf, tuple(seed_pair))


def pickfreeze_pairs(
    model: VarModel,
    plan: DecompositionPlan,
    horizon: int,
    n_samples: int,
    seed,
    t: int | None = None,
    burn_in: int = DEFAULT_BURN_IN,
) -> PickFreezePair:
    """Simulate two independent batches and build the pair for window ``0..t``.

    ``t`` defaults to ``horizon`` (a single projection on ``X_0 .. X_horizon``).
    """
    t = horizon if t is None else t
    if t > plan.horizon or t > horizon:
        raise ConfigError(f"window {t} exceeds the plan/simulation horizon")
    b1, b2 = simulate_replicas(model, horizon, n_samples, seed, burn_in)
    return assemble_pair(plan, b1.data, b2.data, t, (b1.seed, b2.seed))


def plan_for(model: VarModel, target: int, horizon: int, **kwargs) -> DecompositionPlan:
    return build_plan(stationary_covariance(model), target, horizon, **kwargs)
