import copy
import json
import math
import pickle

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reachkit import model
from reachkit.expr import ParseError, UndeclaredVariableError
from reachkit.model import Ball, Box, SpecError, load_spec, spec_from_dict


def _cfg(name="pendulum"):
    return copy.deepcopy(dict(load_spec(name).source))


def test_pendulum_config(pendulum):
    assert (pendulum.n, pendulum.m) == (2, 1)
    assert (pendulum.delta, pendulum.epsilon, pendulum.lam) == (0.003, 0.001, 0.001)
    assert pendulum.control_set == Ball(2.6)


def test_cruise_config(cruise):
    assert (cruise.n, cruise.m) == (3, 1)
    assert cruise.control_set == Box((-10.0,), (15.0,))


def test_bundled_override_values_verbatim(pendulum, cruise):
    assert pendulum.bounds_override == {"alpha": 3.6014, "beta": 4.4721, "gamma": 2.9665, "xi": 1.4832}
    assert cruise.bounds_override == {"alpha": 17.1193, "beta": 12.0717, "gamma": 10.198, "xi": 10.198}
    assert load_spec("pendulum_estimate").bounds_override is None


def test_load_from_path(tmp_path):
    p = tmp_path / "sys.json"
    p.write_text(json.dumps(_cfg()))
    assert load_spec(p) == load_spec("pendulum")


def test_dimension_mismatch():
    cfg = _cfg()
    cfg["f"] = ["thetadot"]
    with pytest.raises(SpecError, match="dimension|f"):
        spec_from_dict(cfg)


def test_g_shape_mismatch():
    cfg = _cfg()
    cfg["g"] = [["0", "1"], ["1", "0"]]
    with pytest.raises(SpecError):
        spec_from_dict(cfg)


@pytest.mark.parametrize("lam", [0, -1.0])
def test_nonpositive_lambda(lam):
    cfg = _cfg()
    cfg["lambda"] = lam
    with pytest.raises(SpecError):
        spec_from_dict(cfg)


@pytest.mark.parametrize("key", ["delta", "epsilon"])
def test_negative_sampling_parameters(key):
    cfg = _cfg()
    cfg[key] = -0.1
    with pytest.raises(SpecError):
        spec_from_dict(cfg)


def test_missing_key():
    cfg = _cfg()
    del cfg["h_C"]
    with pytest.raises(SpecError, match="h_C"):
        spec_from_dict(cfg)


def test_bad_expression_and_undeclared_variable():
    cfg = _cfg()
    cfg["h_G"] = "0.05 - "
    with pytest.raises(ParseError):
        spec_from_dict(cfg)
    cfg["h_G"] = "0.05 - omega^2"
    with pytest.raises(UndeclaredVariableError):
        spec_from_dict(cfg)


def test_bad_control_set():
    cfg = _cfg()
    cfg["control"] = {"type": "disk", "ubar": 1}
    with pytest.raises(SpecError):
        spec_from_dict(cfg)


def test_dynamics_examples(pendulum, cruise):
    assert model.dynamics(pendulum, (0.0, 0.0), (0.0,)) == (0.0, 0.0)
    assert model.dynamics(cruise, (7.0, 1.0, 2.0), (0.5,)) == pytest.approx((1.0, 0.5, -2.0), abs=1e-15)
    assert model.dynamics(pendulum, (0.5244, 0.0), (2.6,))[1] == pytest.approx(3.6014, abs=1e-4)


def test_controller_and_clamp(pendulum, cruise):
    oracle = -2 * (-0.4) - 2 * math.sin(-0.4) - 2 * 0.3
    assert model.controller(pendulum, (-0.4, 0.3))[0] == pytest.approx(oracle, abs=1e-12)
    assert model.clamp_to_control_set(pendulum, (3.0,)) == pytest.approx((2.6,))
    assert model.clamp_to_control_set(cruise, (-12.0,)) == (-10.0,)
    assert Ball(1.0).clamp((3.0, 4.0)) == pytest.approx((0.6, 0.8))
    assert Ball(1.0).clamp((0.3, 0.4)) == (0.3, 0.4)


def test_control_set_diameters():
    assert Ball(2.6).diameter() == 5.2
    assert Box((-10.0,), (15.0,)).diameter() == 25.0
    assert Box((0.0, 0.0), (3.0, 4.0)).diameter() == 5.0


def test_membership_examples(pendulum, cruise):
    m = model.membership(pendulum, (0.0, 0.0))
    assert m.in_G and m.h_G == pytest.approx(0.05)
    m = model.membership(pendulum, (0.5, 0.0))
    assert m.h_C == 0.0 and not m.in_C and not m.in_G
    m = model.membership(cruise, (7.0, 2.0, 0.0))
    assert m.h_G == 0.0 and not m.in_G
    assert m.h_C == 21.0 and m.in_C


@pytest.mark.parametrize("name", ["pendulum", "cruise"])
def test_set_nesting_on_validation_grid(name):
    assert model.validate_sets(load_spec(name), 50) == []


def test_minkowski_violation_is_reported():
    cfg = _cfg()
    cfg["h_D"] = "1.0000001 - 4*theta^2 - 2*thetadot^2"
    problems = model.validate_sets(spec_from_dict(cfg), 50)
    assert any("eps" in p or "B_" in p or "Minkowski" in p for p in problems)


def test_c_outside_d_is_reported():
    cfg = _cfg()
    cfg["h_C"] = "1.2 - 4*theta^2 - 2*thetadot^2"
    assert any("C not inside D" in p for p in model.validate_sets(spec_from_dict(cfg), 50))


def test_spec_pickles_without_compiled_caches(pendulum):
    pendulum._k_fn  # populate a cache
    clone = pickle.loads(pickle.dumps(pendulum))
    assert clone == pendulum
    assert clone._k_fn((0.1, 0.2)) == pendulum._k_fn((0.1, 0.2))


def test_replace_revalidates(pendulum):
    with pytest.raises(SpecError):
        pendulum.replace(lam=0.0)
    assert pendulum.replace(delta=0.0003).delta == 0.0003


vec = st.floats(-1, 1, allow_nan=False)


@given(st.tuples(vec, vec), vec, vec)
def test_pendulum_dynamics_affine_in_u(x, u1, u2):
    spec = load_spec("pendulum")
    x = (0.5 * x[0], 0.7 * x[1])
    a = np.array(model.dynamics(spec, x, (u1,))) + np.array(model.dynamics(spec, x, (u2,)))
    b = np.array(model.dynamics(spec, x, (0.0,))) + np.array(model.dynamics(spec, x, (u1 + u2,)))
    assert np.allclose(a, b, rtol=0, atol=1e-12)


@given(st.tuples(vec, vec, vec), vec, vec)
def test_cruise_dynamics_affine_in_u(x, u1, u2):
    spec = load_spec("cruise")
    x = (7 + 5 * x[0], 5 * x[1], 5 * x[2])
    a = np.array(model.dynamics(spec, x, (10 * u1,))) + np.array(model.dynamics(spec, x, (10 * u2,)))
    b = np.array(model.dynamics(spec, x, (0.0,))) + np.array(model.dynamics(spec, x, (10 * u1 + 10 * u2,)))
    assert np.allclose(a, b, rtol=0, atol=1e-12)
