"""Hourly temperature ingestion, seasonal standardisation and VAR fitting.

The measured series ``T_bar`` is written ``T_bar_t = S(h) + V(h) * T_t`` with
``h`` the hour of day, ``S`` the hourly mean profile and ``V`` the hourly
standard deviation profile; ``T`` is then modelled as a VAR(p) fitted by
conditional Gaussian maximum likelihood (multivariate least squares) with the
order chosen by AIC.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataError, NonStationaryError, NumericalError
from .models import BUILDING_CHANNELS, BuildingPhi
from .var_process import VarModel, simulate, spectral_radius

logger = logging.getLogger(__name__)

KNOWN_CHANNELS = BUILDING_CHANNELS + ("int",)
MASK_COLUMN = "mask"
AIC_DEFINITION = "n_eff * log(det(theta_hat)) + 2 * order * dim**2 (common sample of n_eff rows for all orders)"


@dataclass(frozen=True, eq=False)
class RawSeries:
    """Hourly measurements.

    ``values`` is time-major, shape (n_times, n_channels); ``segments`` are
    the contiguous row ranges usable for lagged regression.
    """

    timestamps: pd.DatetimeIndex
    channels: tuple[str, ...]
    values: np.ndarray
    gaps: list = field(default_factory=list)
    segments: list = field(default_factory=list)

    @property
    def matrix(self) -> np.ndarray:
        """Channels x time view."""
        return self.values.T

    @property
    def hours(self) -> np.ndarray:
        return np.asarray(self.timestamps.hour)

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.channels.index(name)]

    def pieces(self, values: np.ndarray | None = None) -> list[np.ndarray]:
        values = self.values if values is None else values
        return [values[a:b] for a, b in self.segments]


def load_series(path, channels: Sequence[str] | None = None, max_gap: int = 2, on_long_gap: str = "error") -> RawSeries:
    """Read ``timestamp,<channel>...`` CSV with hourly cadence.

    Gaps of at most ``max_gap`` missing hours are filled by linear
    interpolation (with a warning).  Longer gaps raise :class:`DataError`
    listing them, or split the series into segments when
    ``on_long_gap="split"``.  An optional ``mask`` column (1 = keep) removes
    rows, e.g. non-working days; removed rows also split segments.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path} is empty") from None
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: {exc}") from None
    if frame.empty:
        raise DataError(f"{path} has no data rows")
    if "timestamp" not in frame.columns:
        raise DataError(f"{path} has no 'timestamp' column")
    if channels is None:
        channels = [c for c in frame.columns if c in KNOWN_CHANNELS]
    missing = [c for c in channels if c not in frame.columns]
    if missing or not channels:
        raise DataError(f"{path} lacks channels {missing or list(KNOWN_CHANNELS)}")
    try:
        stamps = pd.to_datetime(frame["timestamp"], errors="raise")
    except (ValueError, TypeError) as exc:
        raise DataError(f"unparseable timestamp: {exc}") from None
    numeric = frame[list(channels)].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1).to_numpy()
    if bad.any():
        rows = (np.flatnonzero(bad) + 2).tolist()[:10]
        raise DataError(f"unparseable values on line(s) {rows}")
    step = stamps.diff().iloc[1:]
    if (step <= pd.Timedelta(0)).any():
        i = int(np.flatnonzero((step <= pd.Timedelta(0)).to_numpy())[0]) + 1
        raise DataError(f"timestamps not strictly increasing at {stamps.iloc[i]}")
    hours = step / pd.Timedelta(hours=1)
    if not np.allclose(hours, np.round(hours)):
        raise DataError("timestamps are not on an hourly grid")

    full = pd.date_range(stamps.iloc[0], stamps.iloc[-1], freq="h")
    data = numeric.set_index(pd.DatetimeIndex(stamps)).reindex(full)
    absent = data.iloc[:, 0].isna().to_numpy()
    gaps = []
    i = 0
    while i < len(full):
        if absent[i]:
            j = i
            while j < len(full) and absent[j]:
                j += 1
            gaps.append((full[i], j - i))
            i = j
        else:
            i += 1
    long_gaps = [g for g in gaps if g[1] > max_gap]
    if long_gaps and on_long_gap == "error":
        listing = ", ".join(f"{ts} ({n} h)" for ts, n in long_gaps)
        raise DataError(f"gaps longer than {max_gap} h: {listing}")
    if gaps:
        warnings.warn(f"{len(gaps)} gap(s) in {path.name}: " + ", ".join(f"{ts} ({n} h)" for ts, n in gaps), RuntimeWarning, stacklevel=2)

    keep = np.ones(len(full), dtype=bool)
    for ts, n in long_gaps:
        a = full.get_loc(ts)
        keep[a:a + n] = False
    filled = data.interpolate(method="linear", limit_area="inside")
    if MASK_COLUMN in frame.columns:
        mask = pd.Series(frame[MASK_COLUMN].to_numpy(), index=pd.DatetimeIndex(stamps)).reindex(full)
        keep &= mask.ffill().fillna(0).to_numpy().astype(bool)
    values = filled.to_numpy()[keep]
    index = full[keep]
    edges = np.flatnonzero(np.diff(np.flatnonzero(keep)) > 1) + 1
    bounds = np.r_[0, edges, keep.sum()]
    segments = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    return RawSeries(index, tuple(channels), values, gaps, segments)


@dataclass(frozen=True, eq=False)
class SeasonalProfile:
    """Hour-of-day mean ``s`` and standard deviation ``v``, shape (period, n_channels)."""

    period: int
    s: np.ndarray
    v: np.ndarray

    def to_dict(self) -> dict:
        return {"period": self.period, "s": self.s.tolist(), "v": self.v.tolist(),
                "v_meaning": "standard deviation per hour of day"}


def _phase(n: int, period: int, phase) -> np.ndarray:
    if phase is None:
        return np.arange(n) % period
    phase = np.asarray(phase, dtype=int)
    if phase.shape != (n,):
        raise ValueError("phase must give one hour index per row")
    return phase % period


def deseasonalize(raw, period: int = 24, phase=None, min_std: float = 1e-8) -> tuple[SeasonalProfile, np.ndarray]:
    """Remove the periodic mean and scale: ``T = (T_bar - S) / V``.

    ``raw`` is (n_times, n_channels) or a :class:`RawSeries` (its hour of day is
    then used as phase).
    """
    if isinstance(raw, RawSeries):
        phase = raw.hours if phase is None else phase
        raw = raw.values
    x = np.asarray(raw, dtype=float)
    squeeze = x.ndim == 1
    x = x[:, None] if squeeze else x
    n = x.shape[0]
    if n < 3 * period:
        raise DataError(f"series of {n} rows is shorter than three periods ({3 * period})")
    ph = _phase(n, period, phase)
    s = np.empty((period, x.shape[1]))
    v = np.empty_like(s)
    for h in range(period):
        rows = x[ph == h]
        if rows.shape[0] < 2:
            raise DataError(f"hour {h} has fewer than two observations")
        s[h] = rows.mean(axis=0)
        v[h] = rows.std(axis=0)
    if (v < min_std).any():
        h, c = np.argwhere(v < min_std)[0]
        raise DataError(f"degenerate hour {h} in channel {c}: standard deviation {v[h, c]:.3g}")
    out = (x - s[ph]) / v[ph]
    profile = SeasonalProfile(period, s, v)
    return profile, (out[:, 0] if squeeze else out)


def reseasonalize(profile: SeasonalProfile, series, phase=None) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    squeeze = x.ndim == 1
    x = x[:, None] if squeeze else x
    ph = _phase(x.shape[0], profile.period, phase)
    out = profile.s[ph] + profile.v[ph] * x
    return out[:, 0] if squeeze else out


def _pieces(series) -> list[np.ndarray]:
    if isinstance(series, RawSeries):
        return series.pieces()
    if isinstance(series, np.ndarray):
        series = [series]
    pieces = [np.asarray(s, dtype=float) for s in series]
    return [s[:, None] if s.ndim == 1 else s for s in pieces]


def _design(pieces, order: int, start: int):
    ys, xs = [], []
    for seg in pieces:
        n = seg.shape[0]
        if n <= start:
            continue
        ys.append(seg[start:])
        xs.append(np.hstack([seg[start - lag:n - lag] for lag in range(1, order + 1)]))
    if not ys:
        raise DataError("no segment is long enough for the requested order")
    return np.vstack(ys), np.vstack(xs)


@dataclass(frozen=True, eq=False)
class VarFit:
    model: VarModel
    theta_hat: np.ndarray
    n_obs: int
    n_eff: int
    aic: float
    radius: float


def fit_var(series, order: int, start: int | None = None, names: Sequence[str] | None = None,
            check_stationary: bool = True) -> VarFit:
    """Least-squares (conditional Gaussian ML) fit of a zero-mean VAR(order).

    ``series`` is (n_times, dim), a list of such segments, or a
    :class:`RawSeries`.  Regression rows start at index ``start`` (default
    ``order``) of each segment.  ``theta_hat`` is the residual covariance with
    1 / n_eff normalisation, n_eff being the number of regression rows.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    pieces = _pieces(series)
    dim = pieces[0].shape[1]
    n_obs = sum(p.shape[0] for p in pieces)
    if n_obs <= order * dim * dim + dim:
        raise DataError(f"{n_obs} observations cannot identify a VAR({order}) in dimension {dim}")
    start = order if start is None else start
    if start < order:
        raise ValueError("start must be >= order")
    y, x = _design(pieces, order, start)
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise NumericalError("rank-deficient regressor matrix")
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    n_eff = y.shape[0]
    theta = resid.T @ resid / n_eff
    theta = 0.5 * (theta + theta.T)
    coeffs = np.stack([beta[l * dim:(l + 1) * dim].T for l in range(order)])
    if names is None and isinstance(series, RawSeries):
        names = series.channels
    model = VarModel(coeffs, theta, None, names)
    rho = spectral_radius(model)
    if check_stationary and not rho < 1.0:
        raise NonStationaryError(rho, f"fitted VAR({order}) rejected: spectral radius {rho:.6g} >= 1")
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        raise NumericalError("residual covariance is singular")
    aic = n_eff * logdet + 2 * order * dim * dim
    return VarFit(model, theta, n_obs, n_eff, float(aic), rho)


@dataclass(frozen=True, eq=False)
class FitReport:
    model: VarModel
    theta_hat: np.ndarray
    aic_by_order: dict
    chosen_order: int
    n_obs: int
    radius: float
    rejected: dict = field(default_factory=dict)
    aic_definition: str = AIC_DEFINITION

    def metadata(self) -> dict:
        return {
            "aic_by_order": {str(k): v for k, v in self.aic_by_order.items()},
            "aic_definition": self.aic_definition,
            "chosen_order": self.chosen_order,
            "n_obs": self.n_obs,
            "spectral_radius": self.radius,
            "rejected_orders": {str(k): v for k, v in self.rejected.items()},
            "estimator": "conditional Gaussian ML (multivariate least squares), stationarity enforced by rejection",
        }


def select_order(series, p_max: int, names: Sequence[str] | None = None) -> FitReport:
    """Fit VAR(1..p_max) on a common sample and keep the AIC minimiser.

    The chosen order is refitted on all available rows.
    """
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    aic, rejected = {}, {}
    for order in range(1, p_max + 1):
        try:
            aic[order] = fit_var(series, order, start=p_max, names=names).aic
        except NonStationaryError as exc:
            rejected[order] = exc.radius
    if not aic:
        raise NonStationaryError(min(rejected.values()), "every candidate order gave a non-stationary fit")
    chosen = min(aic, key=aic.get)
    final = fit_var(series, chosen, names=names)
    logger.info("AIC by order %s -> chose %d", aic, chosen)
    return FitReport(final.model, final.theta_hat, aic, chosen, final.n_obs, final.radius, rejected)


def fit_building_phi(inputs, output, lags: int = 2, channels: Sequence[str] = BUILDING_CHANNELS) -> BuildingPhi:
    """Least-squares fit of ``T_int(t)`` on lags ``1..lags`` of the inputs and of itself.

    ``inputs`` is (n, n_channels), ``output`` is (n,).  ``init`` of the
    returned table is set to zeros.
    """
    u = np.asarray(inputs, dtype=float)
    y = np.asarray(output, dtype=float)
    n = y.size
    cols = [u[lags - k:n - k] for k in range(1, lags + 1)] + [y[lags - k:n - k, None] for k in range(1, lags + 1)]
    design = np.hstack(cols)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise NumericalError("rank-deficient regressor matrix")
    beta, *_ = np.linalg.lstsq(design, y[lags:], rcond=None)
    c = u.shape[1]
    exo = beta[: lags * c].reshape(lags, c)
    internal = beta[lags * c:]
    return BuildingPhi(exo, internal, np.zeros(lags), tuple(channels))


def synthetic_building_data(model: VarModel, phi: BuildingPhi, n: int, seed, noise_sd: float = 0.0,
                            burn_in: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Inputs from ``model`` and the internal temperature from ``phi`` plus optional white noise."""
    u = simulate(model, n - 1, 1, seed, burn_in).data[0]
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)).spawn(1)[0])
    spec = phi.spec()
    eps = noise_sd * rng.standard_normal(n)
    drive = np.zeros(n)
    for lag, row in enumerate(spec.input_coeffs):
        drive[lag:] += u[: n - lag] @ row
    drive += eps
    y = np.empty(n)
    hist = np.array(phi.init, dtype=float)
    for t in range(n):
        y[t] = drive[t] + hist @ spec.ar_coeffs
        hist = np.r_[y[t], hist[:-1]]
    return u, y
