import numpy as np
import pytest

from dynsobol.errors import ConfigError
from dynsobol.ingest_fit import fit_building_phi, synthetic_building_data
from dynsobol.models import (
    BUILDING_CHANNELS,
    REGISTRY,
    TOY_LINEAR_SPEC,
    BuildingPhi,
    LinearRecurrenceSpec,
    ModelFunction,
    building_model,
    causality_violations,
    default_building_phi,
    get_model,
    linear_recurrence,
    make_building,
    toy_linear,
    toy_nonlinear,
)
from dynsobol.var_process import joint_covariance, simulate, stationary_covariance


def expanded_toy(data):
    """Direct sum  Y_t = sum_{k<=t} 0.2^k (0.3 X_{t-k} + Z_{t-k})."""
    n, steps, _ = data.shape
    out = np.zeros((n, steps))
    for t in range(steps):
        for k in range(t + 1):
            out[:, t] += 0.2**k * (0.3 * data[:, t - k, 0] + data[:, t - k, 1])
    return out


# ---------------------------------------------------------------- toy models

def test_toy_linear_examples():
    assert not toy_linear(np.zeros((3, 6, 2))).any()
    pulse = np.zeros((1, 4, 2))
    pulse[0, 0, 0] = 1.0
    assert np.allclose(toy_linear(pulse)[0], [0.3, 0.06, 0.012, 0.0024], atol=1e-15)
    with pytest.raises(ConfigError):
        toy_linear(np.zeros((1, 3, 3)))


def test_toy_linear_triple_equivalence(rng):
    data = rng.normal(size=(50, 25, 2))
    a = toy_linear(data)
    b = linear_recurrence(TOY_LINEAR_SPEC)(data)
    c = expanded_toy(data)
    assert np.abs(a - b).max() < 1e-12
    assert np.abs(a - c).max() < 1e-12
    assert np.abs(b - c).max() < 1e-12


def test_toy_nonlinear_examples():
    def at(x, z):
        return toy_nonlinear(np.array([[[x, z]]]))[0, 0]

    assert at(0.0, 0.0) == pytest.approx(0.2)
    assert at(1.0, 0.0) == pytest.approx(0.2)
    assert at(2.0, 1.0) == pytest.approx(2 + 0.2 * np.exp(-1))
    assert at(2.0, 1.0) == pytest.approx(2.0736, abs=1e-4)
    with pytest.raises(ConfigError):
        toy_nonlinear(np.zeros((1, 3)))


# ---------------------------------------------------------------- linear recurrence

def test_memoryless_linear_map(rng):
    spec = LinearRecurrenceSpec([], [[2.0, -1.0, 0.5]])
    data = rng.normal(size=(4, 6, 3))
    assert np.allclose(spec.evaluate(data), data @ np.array([2.0, -1.0, 0.5]), atol=1e-15)
    assert spec.expand().shape == (1, 3)


def test_unstable_spec_rejected():
    with pytest.raises(ConfigError, match="unstable"):
        LinearRecurrenceSpec([1.1], [[1.0]])
    LinearRecurrenceSpec([1.1], [[1.0]], stable=False)
    with pytest.raises(ConfigError):
        LinearRecurrenceSpec([0.5, 0.1], [[1.0]], init=[0.0])


def test_expansion_truncation_depth():
    c = TOY_LINEAR_SPEC.expand(1e-10)
    assert c.shape[0] == 15
    assert np.allclose(c[:, 0] / c[:, 1], 0.3)
    assert np.allclose(c[:, 1], 0.2 ** np.arange(15))
    tail = sum(0.2**k for k in range(15, 200))
    assert tail < 1e-10


def test_impulse_response_matches_evaluation(rng):
    spec = LinearRecurrenceSpec([0.5, -0.2], [[0.0, 0.0], [1.0, 0.3], [0.2, -0.1]])
    c = spec.impulse_response(30)
    data = rng.normal(size=(3, 30, 2))
    direct = sum(data[:, 29 - k] @ c[k] for k in range(30))
    assert np.allclose(spec.evaluate(data)[:, 29], direct, atol=1e-12)


def test_init_is_used():
    spec = LinearRecurrenceSpec([0.5], [[1.0]], init=[2.0])
    out = spec.evaluate(np.zeros((1, 3, 1)))
    assert np.allclose(out[0], [1.0, 0.5, 0.25])
    assert np.allclose(spec.evaluate(np.zeros((1, 3, 1)), init=[0.0]), 0)


def test_spec_dict_round_trip():
    spec = LinearRecurrenceSpec([0.3, 0.1], [[1.0, 2.0]], init=[0.5, -0.5])
    back = LinearRecurrenceSpec.from_dict(spec.to_dict())
    assert np.array_equal(back.ar_coeffs, spec.ar_coeffs)
    assert np.array_equal(back.input_coeffs, spec.input_coeffs)
    assert np.array_equal(back.init, spec.init)
    with pytest.raises(ConfigError):
        LinearRecurrenceSpec.from_dict({"ar_coeffs": [0.1]})


def test_truncation_property(toy_model, toy_cov):
    # Y* starts in the stationary regime, Y from zero at time 0:
    # Y*_t - Y_t = 0.2^(t+1) Y*_{-1}, so Var = 0.04^(t+1) Var(Y*)
    c = TOY_LINEAR_SPEC.expand(1e-14)
    big = joint_covariance(toy_cov, np.arange(c.shape[0]))
    vec = c[::-1].ravel()
    var_star = vec @ big @ vec
    n, lead = 100_000, 60
    for t in (5, 10):
        data = simulate(toy_model, lead + t, n, seed=t).data
        y_star = toy_linear(data)[:, lead + t]
        y = toy_linear(data[:, lead:])[:, t]
        d2 = (y_star - y) ** 2
        expected = 0.04 ** (t + 1) * var_star
        assert abs(d2.mean() - expected) < 4 * d2.std() / np.sqrt(n)
        assert d2.mean() <= 2 * var_star * 0.04**t


# ---------------------------------------------------------------- building model

def test_building_zero_coefficients():
    phi = BuildingPhi(np.zeros((2, 5)), [0.0, 0.0], [0.0, 0.0])
    data = np.random.default_rng(0).normal(size=(3, 10, 5))
    assert not building_model(data, phi).any()


def test_building_pure_moving_sum(rng):
    exo = rng.normal(size=(2, 5))
    phi = BuildingPhi(exo, [0.0, 0.0], [0.0, 0.0])
    data = rng.normal(size=(4, 8, 5))
    out = building_model(data, phi)
    direct = np.zeros((4, 8))
    direct[:, 1:] += data[:, :-1] @ exo[0]
    direct[:, 2:] += data[:, :-2] @ exo[1]
    assert np.allclose(out, direct, atol=1e-14)


def test_building_requires_table():
    with pytest.raises(ConfigError):
        building_model(np.zeros((1, 3, 5)), None)


def test_building_fit_round_trip(building_inputs):
    truth = BuildingPhi([[0.02, 0.05, 0.1, 0.1, 0.2], [0.01, 0.0, 0.03, 0.02, 0.1]], [0.55, 0.15], [0.0, 0.0])
    u, y = synthetic_building_data(building_inputs, truth, 3000, seed=1, noise_sd=0.0)
    fitted = fit_building_phi(u, y)
    data = u[None]
    assert np.abs(make_building(fitted)(data) - make_building(truth)(data)).max() < 1e-10
    assert np.allclose(fitted.exogenous, truth.exogenous, atol=1e-10)


def test_building_phi_document():
    phi = default_building_phi()
    assert phi.channels == BUILDING_CHANNELS
    assert phi.exogenous.shape == (2, 5)
    assert "synthetic" in phi.notes
    back = BuildingPhi.from_dict(phi.to_dict())
    assert np.array_equal(back.exogenous, phi.exogenous)
    assert np.array_equal(back.internal, phi.internal)
    # the outdoor channel carries the largest coupling
    assert np.argmax(phi.exogenous.sum(axis=0)) == BUILDING_CHANNELS.index("ext")
    with pytest.raises(ConfigError):
        BuildingPhi.from_dict({"exogenous": {"below": [0, 0]}, "internal": [0, 0]})


# ---------------------------------------------------------------- interface

def test_registry_and_arity(rng):
    assert set(REGISTRY) == {"toy1", "toy2", "building", "linear"}
    with pytest.raises(ConfigError):
        get_model("nope")
    f = get_model("toy1")
    assert isinstance(f, ModelFunction) and f.arity == 2
    with pytest.raises(ConfigError):
        f(rng.normal(size=(2, 3, 5)))
    bad = ModelFunction("bad", 1, lambda d, init: d[:, :-1, 0])
    with pytest.raises(ConfigError):
        bad(rng.normal(size=(2, 3, 1)))


@pytest.mark.parametrize("name", ["toy1", "toy2", "building", "linear"])
def test_causality_of_registered_models(name, rng):
    if name == "linear":
        f = get_model(name, spec=LinearRecurrenceSpec([0.4, 0.2], [[0.1, 0.2, 0.3], [1.0, 0.0, -1.0]]))
    else:
        f = get_model(name)
    data = rng.normal(size=(6, 12, f.arity))
    assert causality_violations(f, data, rng) == []


def test_causality_detector_catches_lookahead(rng):
    peek = ModelFunction("peek", 1, lambda d, init: np.roll(d[:, :, 0], -1, axis=1))
    assert causality_violations(peek, rng.normal(size=(2, 5, 1)), rng) != []


def test_models_deterministic(rng):
    data = rng.normal(size=(5, 7, 5))
    f = get_model("building")
    assert np.array_equal(f(data), f(data))
