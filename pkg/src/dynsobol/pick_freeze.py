"""Pick-freeze estimation of the projection-on-the-past Sobol index.

For an output ``Y_t`` and a frozen coordinate ``X`` the index is

    S_t = Var(E(Y_t | X_0 .. X_t)) / Var(Y_t),

estimated from ``N`` output pairs ``(y, y_pf)`` by

    S_hat = (mean(y * y_pf) - mean(y) * mean(y_pf)) / (mean(y**2) - mean(y)**2)

with plain 1/N moments.  :func:`analytic_linear_sobol` gives the exact value
for linear outputs of Gaussian inputs and serves as an oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy import stats

from .conditioning import assemble_pair, build_empirical_plan, build_plan, simulate_replicas, split
from .errors import ConfigError, DegenerateOutputError, FullRankError, NonFiniteOutputError
from .models import LinearRecurrenceSpec, ModelFunction
from .var_process import DEFAULT_BURN_IN, CovarianceStructure, VarModel, joint_covariance, stationary_covariance, substream

logger = logging.getLogger(__name__)

CI_METHODS = ("bootstrap", "delta", "none")
N_BOOT = 1000


def estimate_index(y, y_pf) -> float:
    """Pick-freeze ratio of empirical covariance to empirical variance."""
    y = np.asarray(y, dtype=float)
    y_pf = np.asarray(y_pf, dtype=float)
    if y.shape != y_pf.shape or y.ndim != 1:
        raise ValueError("y and y_pf must be vectors of equal length")
    if y.size < 2:
        raise ValueError("need at least two samples")
    n = y.size
    my, mp = y.sum() / n, y_pf.sum() / n
    var = (y * y).sum() / n - my * my
    if not var > 0:
        raise DegenerateOutputError("degenerate output: zero empirical variance")
    return float(((y * y_pf).sum() / n - my * mp) / var)


def _indices(y, yp):
    """Column-wise estimator on (N, T) arrays; NaN where the variance vanishes."""
    n = y.shape[0]
    my, mp = y.mean(axis=0), yp.mean(axis=0)
    num = (y * yp).sum(axis=0) / n - my * mp
    den = (y * y).sum(axis=0) / n - my * my
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def bootstrap_intervals(y, yp, level: float = 0.95, n_boot: int = N_BOOT, seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Percentile bootstrap over paired rows of ``y`` and ``yp`` (shape (N, T)).

    Rows are resampled jointly; the same resamples serve every column.
    """
    y = np.asarray(y, dtype=float)
    yp = np.asarray(yp, dtype=float)
    n = y.shape[0]
    # estimator is shift invariant; centring keeps the moment sums well conditioned
    y = y - y.mean(axis=0)
    yp = yp - yp.mean(axis=0)
    yy, ypy = y * y, y * yp
    rng = np.random.Generator(np.random.Philox(substream(seed, 7)))
    chunk = max(1, min(n_boot, int(2e7 // n)))
    ests = []
    for start in range(0, n_boot, chunk):
        m = min(chunk, n_boot - start)
        idx = rng.integers(0, n, size=(m, n)) + (np.arange(m) * n)[:, None]
        w = np.bincount(idx.ravel(), minlength=m * n).reshape(m, n) / n
        sy, sp = w @ y, w @ yp
        den = w @ yy - sy * sy
        num = w @ ypy - sy * sp
        with np.errstate(divide="ignore", invalid="ignore"):
            ests.append(num / den)
    ests = np.vstack(ests)
    alpha = 1.0 - level
    lo, hi = np.nanquantile(ests, [alpha / 2, 1 - alpha / 2], axis=0)
    return lo, hi


def delta_intervals(y, yp, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Normal interval from the joint CLT of the five empirical moments."""
    y = np.asarray(y, dtype=float)
    yp = np.asarray(yp, dtype=float)
    n = y.shape[0]
    y = y - y.mean(axis=0)
    yp = yp - yp.mean(axis=0)
    est = _indices(y, yp)
    feats = np.stack([y, yp, y * y, yp * yp, y * yp])  # (5, N, T)
    m = feats.mean(axis=1)
    my, mp, myy, _, myp = m
    den = myy - my * my
    num = myp - my * mp
    grad = np.stack([
        (-mp * den + 2 * my * num) / den**2,
        -my / den,
        -num / den**2,
        np.zeros_like(den),
        1.0 / den,
    ])  # (5, T)
    centred = feats - m[:, None, :]
    proj = np.einsum("kt,knt->nt", grad, centred)
    se = np.sqrt((proj**2).mean(axis=0) / n)
    z = stats.norm.ppf(0.5 + level / 2)
    return est - z * se, est + z * se


def confidence_interval(y, y_pf, level: float = 0.95, method: str = "bootstrap", n_boot: int = N_BOOT, seed=0) -> tuple[float, float]:
    """Interval for :func:`estimate_index` at confidence ``level``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    y = np.asarray(y, dtype=float)[:, None]
    yp = np.asarray(y_pf, dtype=float)[:, None]
    if y.shape[0] < 30:
        raise ValueError("confidence intervals need at least 30 samples")
    if method == "bootstrap":
        lo, hi = bootstrap_intervals(y, yp, level, n_boot, seed)
    elif method == "delta":
        lo, hi = delta_intervals(y, yp, level)
    else:
        raise ValueError(f"unknown interval method {method!r}")
    est = estimate_index(y[:, 0], yp[:, 0])
    return min(float(lo[0]), est), max(float(hi[0]), est)


@dataclass(frozen=True, eq=False)
class OutputPairBatch:
    """Outputs of the original inputs (``y``) and of the pick-freezed ones (``y_pf``)."""

    y: np.ndarray
    y_pf: np.ndarray
    t_start: int = 0

    def __post_init__(self):
        if np.shape(self.y) != np.shape(self.y_pf):
            raise ValueError("y and y_pf shapes differ")


@dataclass(frozen=True, eq=False)
class SobolSeries:
    """Index estimates over time for one frozen coordinate."""

    target: int
    times: np.ndarray
    estimates: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_samples: int
    plateau_time: int | None = None
    ci_method: str = "bootstrap"
    level: float = 0.95
    meta: dict = field(default_factory=dict)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.ci_hi - self.ci_lo)

    def with_plateau(self, plateau_time) -> "SobolSeries":
        return SobolSeries(self.target, self.times, self.estimates, self.ci_lo, self.ci_hi, self.n_samples,
                           plateau_time, self.ci_method, self.level, self.meta)


def _check_finite(out: np.ndarray, replica: int, t_cols=None):
    bad = ~np.isfinite(out if t_cols is None else out[:, t_cols])
    if bad.any():
        i, j = np.argwhere(bad)[0]
        t = int(j) if t_cols is None else int(np.atleast_1d(t_cols)[j])
        raise NonFiniteOutputError(int(i), t, replica)


def pick_freeze_outputs(
    model: VarModel,
    f: ModelFunction,
    target: int,
    horizon: int,
    n_samples: int,
    seed,
    cov_mode: str = "model",
    burn_in: int = DEFAULT_BURN_IN,
    t_start: int = 0,
    jitter: bool = False,
    cov: CovarianceStructure | None = None,
    workers: int = 1,
) -> OutputPairBatch:
    """Evaluate ``f`` on both members of the pick-freeze pairs.

    The conditioning window grows with ``t``: for every ``t`` the pair is
    rebuilt from ``Lambda_t`` and ``y_pf[:, t]`` is read from ``f`` applied to
    the inputs on ``0..t``.
    """
    if f.arity != model.dim:
        raise ConfigError(f"model {f.name!r} takes {f.arity} inputs but the VAR has dimension {model.dim}")
    b1, b2 = simulate_replicas(model, horizon, n_samples, seed, burn_in, workers)
    if cov_mode == "model":
        plan = build_plan(cov or stationary_covariance(model), target, horizon, jitter=jitter)
    elif cov_mode == "empirical":
        plan = build_empirical_plan(np.concatenate([b1.data, b2.data]), target, jitter=jitter)
    else:
        raise ConfigError(f"unknown covariance mode {cov_mode!r}")
    y = f(b1)
    _check_finite(y[:, t_start:], 1)
    y_pf = np.full_like(y, np.nan)
    for t in range(t_start, horizon + 1):
        pair = assemble_pair(plan, b1.data, b2.data, t, (b1.seed, b2.seed))
        out = f(pair.inputs(2))
        _check_finite(out, 2, [t])
        y_pf[:, t] = out[:, t]
    return OutputPairBatch(y, y_pf, t_start)


def classical_outputs(model: VarModel, f: ModelFunction, target: int, horizon: int, n_samples: int, seed,
                      burn_in: int = DEFAULT_BURN_IN) -> OutputPairBatch:
    """Textbook pick-freeze ``(f(X, Z), f(X, Z'))``, valid only for independent X and Z."""
    b1, b2 = simulate_replicas(model, horizon, n_samples, seed, burn_in)
    mixed = b2.data.copy()
    mixed[:, :, target] = b1.data[:, :, target]
    return OutputPairBatch(f(b1), f(mixed))


def series_from_outputs(
    outputs: OutputPairBatch,
    target: int,
    ci_method: str = "bootstrap",
    level: float = 0.95,
    n_boot: int = N_BOOT,
    seed=0,
    rel_eps: float = 0.01,
    window: int = 3,
) -> SobolSeries:
    if ci_method not in CI_METHODS:
        raise ConfigError(f"unknown interval method {ci_method!r}; choose from {CI_METHODS}")
    ts = outputs.t_start
    y, yp = outputs.y[:, ts:], outputs.y_pf[:, ts:]
    times = np.arange(ts, outputs.y.shape[1])
    est = np.array([estimate_index(y[:, k], yp[:, k]) for k in range(y.shape[1])])
    if ci_method == "bootstrap":
        lo, hi = bootstrap_intervals(y, yp, level, n_boot, seed)
    elif ci_method == "delta":
        lo, hi = delta_intervals(y, yp, level)
    else:
        lo, hi = est.copy(), est.copy()
    # percentile intervals need not contain the point estimate
    lo, hi = np.minimum(lo, est), np.maximum(hi, est)
    series = SobolSeries(target, times, est, lo, hi, y.shape[0], None, ci_method, level,
                         {"rel_eps": rel_eps, "window": window})
    plateau = None
    if len(times) > window:
        plateau = detect_plateau(series, rel_eps, window, ci_aware=ci_method != "none")
    return series.with_plateau(plateau)


def estimate_series(
    model: VarModel,
    f: ModelFunction,
    target: int,
    horizon: int,
    n_samples: int,
    seed,
    ci_method: str = "bootstrap",
    level: float = 0.95,
    cov_mode: str = "model",
    burn_in: int = DEFAULT_BURN_IN,
    t_start: int = 0,
    n_boot: int = N_BOOT,
    rel_eps: float = 0.01,
    window: int = 3,
    jitter: bool = False,
    workers: int = 1,
) -> SobolSeries:
    """Index series ``S_t`` for ``t = t_start .. horizon`` with confidence bounds."""
    outputs = pick_freeze_outputs(model, f, target, horizon, n_samples, seed, cov_mode, burn_in, t_start, jitter,
                                  workers=workers)
    series = series_from_outputs(outputs, target, ci_method, level, n_boot, seed, rel_eps, window)
    series.meta.update({"cov_mode": cov_mode, "seed": str(seed), "burn_in": burn_in, "model": f.name})
    logger.info("coordinate %d: plateau at t=%s", target + 1, series.plateau_time)
    return series


def detect_plateau(series, rel_eps: float = 0.01, window: int = 3, ci_aware: bool = False):
    """First time after which the series stops moving.

    Returns the smallest ``t`` such that every step ``u`` in ``(t, t + window]``
    satisfies ``|S_u - S_{u-1}| < rel_eps * max(|S_u|, 0.05)``, or ``None``.
    With ``ci_aware`` a step also counts as flat when the two consecutive
    confidence intervals overlap, so Monte Carlo noise is not read as drift.
    """
    if isinstance(series, SobolSeries):
        est, times = series.estimates, series.times
        hw = series.half_width
    else:
        est = np.asarray(series, dtype=float)
        times, hw = np.arange(est.size), np.zeros(est.size)
        ci_aware = False
    if est.size < window:
        raise ValueError(f"series has {est.size} points, fewer than the window {window}")
    step = np.abs(np.diff(est))
    tol = rel_eps * np.maximum(np.abs(est[1:]), 0.05)
    if ci_aware:
        tol = np.maximum(tol, hw[1:] + hw[:-1])
    flat = step < tol
    for i in range(est.size - window):
        if flat[i:i + window].all():
            return int(times[i])
    return None


def _coefficients(linear, t: int, stationary: bool, tol: float) -> np.ndarray:
    if isinstance(linear, ModelFunction):
        linear = linear.linear
        if linear is None:
            raise ConfigError("model has no linear representation")
    if isinstance(linear, LinearRecurrenceSpec):
        if stationary:
            return linear.expand(tol)
        return linear.impulse_response(t + 1)
    return np.atleast_2d(np.asarray(linear, dtype=float))


def analytic_linear_sobol(
    linear,
    cov: CovarianceStructure,
    t: int,
    target: int = 0,
    window: int | None = None,
    stationary: bool = False,
    tol: float = 1e-10,
) -> float:
    """Exact index of ``Y_t = sum_k c_k . U_{t-k}`` for Gaussian inputs.

    ``linear`` is a :class:`LinearRecurrenceSpec` (or a model carrying one) or a
    coefficient array ``c`` of shape (K, p).  By default inputs before time 0
    are zero, as in the simulated outputs; ``stationary=True`` keeps them, i.e.
    uses the stationary output.  ``window=K`` conditions on ``X_{t-K} .. X_t``
    instead of ``X_0 .. X_t``.
    """
    c = _coefficients(linear, t, stationary, tol)
    p = cov.dim
    if c.shape[1] != p:
        raise ConfigError(f"coefficients have {c.shape[1]} columns, inputs have {p}")
    y_times = t - np.arange(c.shape[0])
    if not stationary:
        keep = y_times >= 0
        c, y_times = c[keep], y_times[keep]
    first = 0 if window is None else t - window
    if first < 0 and not stationary:
        raise ConfigError(f"window {window} reaches before time 0 at t={t}")
    x_times = np.arange(first, t + 1)
    times = np.union1d(y_times, x_times)
    big = joint_covariance(cov, times)
    pos = {s: i for i, s in enumerate(times)}
    cvec = np.zeros(big.shape[0])
    for ck, s in zip(c, y_times):
        cvec[pos[s] * p:(pos[s] + 1) * p] += ck
    var_y = cvec @ big @ cvec
    if not var_y > 0:
        raise ConfigError("output has zero variance")
    xi = np.array([pos[s] * p + target for s in x_times])
    gxx = big[np.ix_(xi, xi)]
    g = big[xi] @ cvec
    try:
        factor = scipy.linalg.cho_factor(gxx, lower=True)
    except np.linalg.LinAlgError:
        raise FullRankError("covariance of the conditioning window is not positive definite") from None
    return float(g @ scipy.linalg.cho_solve(factor, g) / var_y)


def memoryless_sobol(phi, cov: CovarianceStructure, t: int, target: int = 0, n_nodes: int = 48) -> float:
    """Index of ``Y_t = phi(X_t, Z_t)`` for a two-coordinate Gaussian input, by quadrature.

    ``E(Y_t | X_0..X_t) = E_xi[phi(X_t, m + sd * xi)]`` with ``m = E(Z_t | X_0..X_t)``;
    the outer and inner Gaussian expectations use Gauss-Hermite rules.
    """
    if cov.dim != 2:
        raise ConfigError("memoryless_sobol handles two-coordinate inputs only")
    other = 1 - target
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    weights = weights / weights.sum()
    big = joint_covariance(cov, np.arange(t + 1))
    xi = np.arange(t + 1) * 2 + target
    zi = 2 * t + other
    gxx = big[np.ix_(xi, xi)]
    g = big[xi, zi]
    lam = scipy.linalg.solve(gxx, g, assume_a="pos")
    var_m = g @ lam
    cond_var = max(big[zi, zi] - var_m, 0.0)
    cov_xm = lam @ big[xi, 2 * t + target]
    joint = np.array([[big[2 * t + target, 2 * t + target], cov_xm], [cov_xm, var_m]])

    def root(m2):
        w, v = np.linalg.eigh(m2)
        return v * np.sqrt(np.clip(w, 0.0, None))

    a, b = np.meshgrid(nodes, nodes, indexing="ij")
    wab = np.outer(weights, weights)

    def args(x, z):
        return (x, z) if target == 0 else (z, x)

    l_out = root(joint)
    x = l_out[0, 0] * a + l_out[0, 1] * b
    m = l_out[1, 0] * a + l_out[1, 1] * b
    inner = sum(w * phi(*args(x, m + np.sqrt(cond_var) * n)) for n, w in zip(nodes, weights))
    mean_c = (wab * inner).sum()
    var_c = (wab * inner**2).sum() - mean_c**2

    l_all = root(big[np.ix_([2 * t + target, zi], [2 * t + target, zi])])
    xx = l_all[0, 0] * a + l_all[0, 1] * b
    zz = l_all[1, 0] * a + l_all[1, 1] * b
    vals = phi(*args(xx, zz))
    mean_y = (wab * vals).sum()
    var_y = (wab * vals**2).sum() - mean_y**2
    return float(var_c / var_y)


def rows(series: SobolSeries) -> list[tuple]:
    """CSV rows ``coord, t, estimate, ci_lo, ci_hi, n, plateau`` (1-based coordinate)."""
    out = []
    for k, t in enumerate(series.times):
        flag = int(series.plateau_time is not None and t >= series.plateau_time)
        out.append((series.target + 1, int(t), series.estimates[k], series.ci_lo[k], series.ci_hi[k],
                    series.n_samples, flag))
    return out
