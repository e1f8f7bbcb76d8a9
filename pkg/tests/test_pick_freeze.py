import numpy as np
import pytest

from dynsobol.errors import ConfigError, DegenerateOutputError, NonFiniteOutputError
from dynsobol.models import TOY_LINEAR_SPEC, LinearRecurrenceSpec, ModelFunction, get_model
from dynsobol.pick_freeze import (
    SobolSeries,
    analytic_linear_sobol,
    classical_outputs,
    confidence_interval,
    detect_plateau,
    estimate_index,
    estimate_series,
    memoryless_sobol,
    pick_freeze_outputs,
    rows,
    series_from_outputs,
)
from dynsobol.var_process import VarModel, joint_covariance, stationary_covariance

STATIONARY_T0 = 0.512205160827846  # toy model 1, stationary output, t = 0


# ---------------------------------------------------------------- estimator

def test_estimator_self_pair(rng):
    y = rng.normal(size=500)
    assert estimate_index(y, y) == pytest.approx(1.0, abs=1e-12)


def test_estimator_independent_pair(rng):
    n = 10_000
    est = estimate_index(rng.normal(size=n), rng.normal(size=n))
    assert abs(est) <= 4 / np.sqrt(n)


def test_estimator_half_share(rng):
    n = 100_000
    x, z, z2 = rng.normal(size=(3, n))
    assert estimate_index(x + z, x + z2) == pytest.approx(0.5, abs=0.02)


def test_estimator_literal_formula(rng):
    y, yp = rng.normal(size=(2, 40)) + 3.0
    expect = (np.mean(y * yp) - y.mean() * yp.mean()) / (np.mean(y * y) - y.mean() ** 2)
    assert estimate_index(y, yp) == pytest.approx(expect, rel=1e-12)


def test_estimator_degenerate():
    with pytest.raises(DegenerateOutputError, match="degenerate output"):
        estimate_index(np.ones(10), np.arange(10.0))
    with pytest.raises(ValueError):
        estimate_index([1.0], [1.0])


# ---------------------------------------------------------------- intervals

@pytest.mark.parametrize("method", ["bootstrap", "delta"])
def test_interval_self_pair(method, rng):
    y = rng.normal(size=2000)
    lo, hi = confidence_interval(y, y, method=method)
    assert lo <= 1.0 <= hi
    assert hi - lo < 1e-9


@pytest.mark.parametrize("method", ["bootstrap", "delta"])
def test_interval_coverage_simple(method):
    # Y = X + Z, Y' = X + Z'  -> S = 1/2; interval should cover in most seeds
    hits = 0
    for seed in range(40):
        r = np.random.default_rng(seed)
        x, z, z2 = r.normal(size=(3, 1000))
        lo, hi = confidence_interval(x + z, x + z2, method=method, n_boot=300, seed=seed)
        hits += lo <= 0.5 <= hi
    assert hits >= 34  # nominal 38 of 40


def test_interval_arguments(rng):
    y = rng.normal(size=100)
    with pytest.raises(ValueError):
        confidence_interval(y, y, level=1.0)
    with pytest.raises(ValueError):
        confidence_interval(y, y, level=0.0)
    with pytest.raises(ValueError):
        confidence_interval(y, y, method="jackknife")
    with pytest.raises(ValueError):
        confidence_interval(y[:10], y[:10])


def test_bootstrap_deterministic(rng):
    y, yp = rng.normal(size=(2, 300))
    assert confidence_interval(y, yp, seed=4) == confidence_interval(y, yp, seed=4)


@pytest.fixture(scope="module")
def toy1_outputs():
    from conftest import TOY_A, TOY_THETA

    model = VarModel(TOY_A, TOY_THETA)
    return model, pick_freeze_outputs(model, get_model("toy1"), 0, 20, 10_000, seed=1)


def test_bootstrap_and_delta_overlap(toy1_outputs):
    _, out = toy1_outputs
    boot = series_from_outputs(out, 0, "bootstrap", seed=1)
    delta = series_from_outputs(out, 0, "delta")
    inter = np.minimum(boot.ci_hi, delta.ci_hi) - np.maximum(boot.ci_lo, delta.ci_lo)
    union = np.maximum(boot.ci_hi, delta.ci_hi) - np.minimum(boot.ci_lo, delta.ci_lo)
    assert np.all(inter / union > 0.5)


def test_width_shrinks_with_n(toy_model):
    f = get_model("toy1")
    small = estimate_series(toy_model, f, 0, 10, 200, seed=2, ci_method="delta")
    large = estimate_series(toy_model, f, 0, 10, 10_000, seed=2, ci_method="delta")
    ratio = large.half_width / small.half_width
    assert np.all(ratio < 1)
    assert np.median(ratio) == pytest.approx(1 / np.sqrt(50), rel=0.3)


# ---------------------------------------------------------------- series

def test_series_invariants(toy1_outputs):
    _, out = toy1_outputs
    s = series_from_outputs(out, 0, "bootstrap", seed=3)
    assert np.all(s.ci_lo <= s.estimates) and np.all(s.estimates <= s.ci_hi)
    assert np.all(np.isfinite(s.estimates))
    assert s.n_samples == 10_000 and list(s.times) == list(range(21))


def test_x_only_output_gives_one(toy_model):
    f = ModelFunction("x_only", 2, lambda d, init: d[:, :, 0].copy())
    s = estimate_series(toy_model, f, 0, 5, 500, seed=0, ci_method="delta")
    assert np.allclose(s.estimates, 1.0, atol=1e-12)
    assert np.all((s.ci_lo <= 1.0) & (1.0 <= s.ci_hi))


def test_toy1_plateau_by_three(toy1_outputs):
    _, out = toy1_outputs
    s = series_from_outputs(out, 0, "bootstrap", seed=1)
    assert s.plateau_time is not None and s.plateau_time <= 3
    assert s.estimates[3] > s.estimates[0]


def test_nonfinite_output_reported(toy_model):
    def bad(data, init):
        out = data[:, :, 0].copy()
        out[3, 2] = np.nan
        return out

    f = ModelFunction("bad", 2, bad)
    with pytest.raises(NonFiniteOutputError) as info:
        estimate_series(toy_model, f, 0, 4, 50, seed=0)
    assert (info.value.sample, info.value.t) == (3, 2)


def test_arity_mismatch(toy_model):
    with pytest.raises(ConfigError):
        estimate_series(toy_model, get_model("building"), 0, 3, 50, seed=0)


def test_init_forwarded(toy_model):
    spec = LinearRecurrenceSpec([0.5], [[1.0, 0.0]], init=[3.0])
    f = ModelFunction("with_init", 2, spec.evaluate, np.array([3.0]), spec)
    out = pick_freeze_outputs(toy_model, f, 0, 2, 40, seed=0)
    zero = pick_freeze_outputs(toy_model, ModelFunction("no_init", 2, spec.evaluate, np.array([0.0])), 0, 2, 40, seed=0)
    assert np.allclose(out.y - zero.y, 3.0 * 0.5 ** np.arange(1, 4))


def test_independent_case_equals_classical(independent_model):
    f = get_model("toy2")
    ours = pick_freeze_outputs(independent_model, f, 0, 6, 300, seed=5)
    classic = classical_outputs(independent_model, f, 0, 6, 300, seed=5)
    assert np.array_equal(ours.y, classic.y)
    assert np.array_equal(ours.y_pf, classic.y_pf)


def test_empirical_mode_runs(toy_model):
    s = estimate_series(toy_model, get_model("toy1"), 0, 4, 5000, seed=3, cov_mode="empirical", ci_method="delta")
    oracle = [analytic_linear_sobol(TOY_LINEAR_SPEC, stationary_covariance(toy_model), t) for t in range(5)]
    assert np.all(np.abs(s.estimates - oracle) < 0.06)
    with pytest.raises(ConfigError):
        estimate_series(toy_model, get_model("toy1"), 0, 4, 50, seed=3, cov_mode="bogus")


def test_toy2_consistency_across_seeds(toy_model):
    f = get_model("toy2")
    a = estimate_series(toy_model, f, 0, 5, 100_000, seed=101, ci_method="delta")
    b = estimate_series(toy_model, f, 0, 5, 100_000, seed=202, ci_method="delta")
    assert np.all(np.abs(a.estimates - b.estimates) < a.half_width + b.half_width)


@pytest.mark.slow
def test_rmse_scaling(toy_model, toy_cov):
    f = get_model("toy1")
    horizon = 3
    oracle = np.array([analytic_linear_sobol(TOY_LINEAR_SPEC, toy_cov, t) for t in range(horizon + 1)])
    rmse = []
    for n in (200, 2000, 20_000):
        err = []
        for rep in range(50):
            s = estimate_series(toy_model, f, 0, horizon, n, seed=1000 + rep, ci_method="none")
            err.append(s.estimates - oracle)
        rmse.append(np.sqrt(np.mean(np.square(err))))
    for a, b in zip(rmse, rmse[1:]):
        assert np.sqrt(10) / 1.5 <= a / b <= np.sqrt(10) * 1.5


def test_rows_layout():
    s = SobolSeries(1, np.arange(3), np.array([0.1, 0.2, 0.2]), np.zeros(3), np.ones(3), 99, plateau_time=1)
    r = rows(s)
    assert r[0] == (2, 0, 0.1, 0.0, 1.0, 99, 0)
    assert [row[-1] for row in r] == [0, 1, 1]


# ---------------------------------------------------------------- plateau

def test_plateau_constant_series():
    assert detect_plateau(np.full(6, 0.4)) == 0


def test_plateau_never():
    assert detect_plateau(np.linspace(0.1, 0.9, 8)) is None


def test_plateau_after_rise():
    assert detect_plateau(np.array([0.1, 0.3, 0.5, 0.5, 0.5, 0.5, 0.5])) == 2


def test_plateau_short_series():
    with pytest.raises(ValueError):
        detect_plateau(np.zeros(2), window=3)


def test_plateau_interval_aware():
    est = np.array([0.10, 0.11, 0.105, 0.112, 0.108])
    s = SobolSeries(0, np.arange(5), est, est - 0.03, est + 0.03, 1000)
    assert detect_plateau(s) is None
    assert detect_plateau(s, ci_aware=True) == 0


# ---------------------------------------------------------------- analytic oracle

def test_analytic_trivial_cases(toy_cov, independent_model):
    x_only = np.array([[1.0, 0.0]])
    assert analytic_linear_sobol(x_only, toy_cov, 5) == pytest.approx(1.0, abs=1e-12)
    ind = stationary_covariance(independent_model)
    assert analytic_linear_sobol(np.array([[0.0, 1.0]]), ind, 5) == pytest.approx(0.0, abs=1e-14)


def test_analytic_toy_t0(toy_cov):
    g = toy_cov.gamma0
    # truncated start: Y_0 = 0.3 X_0 + Z_0
    c = np.array([0.3, 1.0])
    expect = (c @ g[0]) ** 2 / ((c @ g @ c) * g[0, 0])
    assert analytic_linear_sobol(TOY_LINEAR_SPEC, toy_cov, 0) == pytest.approx(expect, abs=1e-12)


def test_analytic_stationary_golden(toy_cov):
    # stationary output, recursion truncated at 60 terms
    c = TOY_LINEAR_SPEC.impulse_response(61)
    big = joint_covariance(toy_cov, np.arange(61))
    vec = c[::-1].ravel()
    cov_x0 = big[60 * 2] @ vec
    by_hand = cov_x0**2 / ((vec @ big @ vec) * toy_cov.gamma0[0, 0])
    value = analytic_linear_sobol(TOY_LINEAR_SPEC, toy_cov, 0, stationary=True)
    assert value == pytest.approx(by_hand, abs=1e-10)
    assert value == pytest.approx(STATIONARY_T0, abs=1e-12)


def test_analytic_bounded_and_monotone(toy_cov):
    values = [analytic_linear_sobol(TOY_LINEAR_SPEC, toy_cov, 20, window=k, stationary=True) for k in range(21)]
    assert all(0 <= v <= 1 for v in values)
    assert all(b >= a - 1e-10 for a, b in zip(values, values[1:]))


def test_analytic_window_before_zero(toy_cov):
    with pytest.raises(ConfigError):
        analytic_linear_sobol(TOY_LINEAR_SPEC, toy_cov, 2, window=5)


def test_memoryless_oracle_matches_monte_carlo(toy_model, toy_cov):
    s = estimate_series(toy_model, get_model("toy2"), 0, 3, 100_000, seed=8, ci_method="delta")
    for t in range(4):
        exact = memoryless_sobol(lambda x, z: x * z + 0.2 * np.exp(-z), toy_cov, t)
        assert s.ci_lo[t] - 0.01 <= exact <= s.ci_hi[t] + 0.01
