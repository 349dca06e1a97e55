import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcpilco.core import ad
from mcpilco.core.ad import Tape
from mcpilco.policy import RbfPolicy, evaluate, flatten_params, unflatten_params

from conftest import central_fd, rel_err


def _single(w, u_max=10.0):
    return RbfPolicy(np.array([[w]]), np.zeros((1, 2)), np.zeros(2), u_max)


def test_zero_weights_zero_output():
    p = RbfPolicy.initialize(20, 3, 2, [5.0, 1.0], -1, 1, seed=0)
    p.weights = np.zeros_like(p.weights)
    z = np.random.default_rng(0).standard_normal((10, 3))
    assert np.all(np.asarray(evaluate(p, z)) == 0.0)


def test_saturation_strictly_below_bound():
    u = float(np.asarray(evaluate(_single(1e6), np.zeros(2)))[0])
    assert 9.99 < u < 10.0


def test_hand_value_at_center():
    u = float(np.asarray(evaluate(_single(1.0), np.zeros(2)))[0])
    assert u == pytest.approx(10 * math.tanh(0.1), rel=1e-14)
    assert u == pytest.approx(0.99668, abs=1e-5)


def test_gaussian_basis_decays():
    p = _single(1.0)
    near = float(np.asarray(evaluate(p, np.array([0.1, 0.0])))[0])
    far = float(np.asarray(evaluate(p, np.array([1.0, 0.0])))[0])
    assert far == pytest.approx(10 * math.tanh(0.1 * math.exp(-1.0)), rel=1e-14)
    assert far < near


def test_initialization_contract():
    p = RbfPolicy.initialize(200, 5, 1, 10.0, [-1, -2, -3, -1, -1], [1, 2, 3, 1, 1], seed=4)
    q = RbfPolicy.initialize(200, 5, 1, 10.0, [-1, -2, -3, -1, -1], [1, 2, 3, 1, 1], seed=4)
    assert np.array_equal(p.flatten(), q.flatten())
    assert p.n_basis == 200 and p.weights.shape == (200, 1)
    assert np.all(p.centers >= [-1, -2, -3, -1, -1]) and np.all(p.centers <= [1, 2, 3, 1, 1])
    assert np.allclose(np.exp(p.log_shape), np.array([1, 2, 3, 1, 1]) ** 2)
    assert 0.7 < np.std(p.weights) < 1.3
    u = np.asarray(evaluate(p, np.random.default_rng(0).uniform(-3, 3, (100, 5))))
    assert np.all(np.abs(u) < 10.0)


def test_empty_range_rejected():
    with pytest.raises(ValueError):
        RbfPolicy.initialize(3, 2, 1, 1.0, [0, 0], [1, 0])


def test_flatten_round_trip_and_layout():
    p = RbfPolicy.initialize(4, 3, 2, [1.0, 2.0], -1, 1, seed=1)
    v = flatten_params(p)
    assert v.size == 4 * 2 + 4 * 3 + 3 == p.n_params
    q = unflatten_params(p, v)
    assert q.flatten().tobytes() == v.tobytes()
    assert np.array_equal(v[:8].reshape(4, 2), p.weights)
    assert np.array_equal(v[8:20].reshape(4, 3), p.centers)
    for i, field in [(0, "weights"), (10, "centers"), (21, "log_shape")]:
        w = v.copy()
        w[i] += 1.0
        r = unflatten_params(p, w)
        changed = [f for f in ("weights", "centers", "log_shape")
                   if not np.array_equal(getattr(r, f), getattr(p, f))]
        assert changed == [field]
    with pytest.raises(ValueError):
        unflatten_params(p, v[:-1])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_wrt_parameters_and_input(seed):
    rng = np.random.default_rng(seed)
    p = RbfPolicy.initialize(3, 2, 1, 4.0, -1, 1, seed=int(seed))
    z = rng.uniform(-1.5, 1.5, (3, 2))

    def f(theta):
        return ad.sum(evaluate(p.unflatten(theta), z) ** 2)

    tape = Tape()
    th = tape.variable(p.flatten())
    g = tape.gradient(f(th), th)
    assert rel_err(g, central_fd(lambda t: float(np.asarray(f(t))), p.flatten())) < 1e-5

    tape = Tape()
    zv = tape.variable(z)
    gz = tape.gradient(ad.sum(evaluate(p, zv)), zv)
    gz_fd = central_fd(lambda zz: float(np.sum(np.asarray(evaluate(p, zz)))), z)
    assert rel_err(gz, gz_fd) < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3))
def test_saturation_property(seed, scale):
    p = RbfPolicy.initialize(5, 2, 1, 3.0, -1, 1, seed=int(seed))
    p.weights = p.weights * scale
    z = np.random.default_rng(seed).uniform(-2, 2, (20, 2))
    assert np.all(np.abs(np.asarray(evaluate(p, z))) < 3.0)


def test_continuity_in_input():
    p = RbfPolicy.initialize(10, 2, 1, 5.0, -1, 1, seed=2)
    z = np.array([0.3, -0.4])
    u0 = float(np.asarray(evaluate(p, z))[0])
    diffs = [abs(float(np.asarray(evaluate(p, z + d))[0]) - u0) for d in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert diffs == sorted(diffs, reverse=True)
    assert diffs[-1] < 1e-6


def test_serialization_exact(tmp_path):
    p = RbfPolicy.initialize(6, 3, 1, 10.0, -1, 1, seed=7)
    p.save(tmp_path / "p.json")
    q = RbfPolicy.load(tmp_path / "p.json")
    z = np.random.default_rng(0).standard_normal((4, 3))
    assert np.asarray(evaluate(p, z)).tobytes() == np.asarray(evaluate(q, z)).tobytes()
    with pytest.raises(ValueError):
        RbfPolicy.from_dict({"format": "other"})
