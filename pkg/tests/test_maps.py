import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liouville.exports import canonical_json
from liouville.maps import (ExpFamily, MapDescriptionError, Mobius, ShiftedExp, conformal_factor,
                            eval_f, map_from_description, numeric_schwarzian, rotate_map,
                            schwarzian_order, u_field)
from liouville.ode import LinearOdeProblem, MathieuRatio, OdeRatio, Polynomial
from liouville.sphere import INF, MobiusTransform, rotation, spherical_distance

from conftest import random_points

IDENTITY = MobiusTransform.identity()
INVERSION = MobiusTransform(0, 1, 1, 0)


def closed_form_maps():
    return [Mobius(IDENTITY), Mobius(MobiusTransform(2, 1j, -1, 1)), ExpFamily(IDENTITY, 1, 0),
            ExpFamily(MobiusTransform(1, 2, -0.5j, 1), 0.7 - 0.4j, 0.3j), ShiftedExp(0),
            ShiftedExp(1.5 - 0.5j)]


def test_eval_examples():
    assert eval_f(ShiftedExp(0), 0) == pytest.approx(1)
    assert eval_f(Mobius(INVERSION), 0) is INF
    assert eval_f(ExpFamily(IDENTITY, 1, 1j * math.pi), 0) == pytest.approx(-1)


def test_conformal_factor_examples():
    assert conformal_factor(ShiftedExp(0), 0) == pytest.approx(1, abs=1e-15)
    assert conformal_factor(Mobius(IDENTITY), 0) == pytest.approx(2, abs=1e-15)
    assert conformal_factor(ShiftedExp(0), math.log(3)) == pytest.approx(0.6, abs=1e-15)


def test_u_closed_forms():
    assert u_field(ShiftedExp(0), 0) == pytest.approx(0, abs=1e-15)
    assert u_field(ShiftedExp(0), 5) == pytest.approx(-math.log(math.cosh(5)), abs=1e-12)
    assert u_field(ShiftedExp(0), 5) == pytest.approx(-4.30690, abs=1e-5)
    # f = exp(2z): 2|f'|/(1+|f|^2) = 2 sech(2x), so u(0) = log 2
    R = rotation(0.6 + 0.2j, -0.3 + 0.7j)
    assert u_field(ExpFamily(R, 2, 0), 0) == pytest.approx(math.log(2), abs=1e-13)


def test_u_far_out_stays_finite():
    assert u_field(ShiftedExp(0), 800) == pytest.approx(math.log(2) - 800, abs=1e-9)
    assert u_field(ShiftedExp(0), -800) == pytest.approx(math.log(2) - 800, abs=1e-9)


def test_exp_family_matches_direct_formula(rng):
    L = MobiusTransform(1, 2, -0.5j, 1)
    a, b = 0.7 - 0.4j, 0.3j
    m = ExpFamily(L, a, b)
    z = random_points(rng, 50, 1.0)
    g = np.exp(a * z + b)
    f = (L.a * g + L.b) / (L.c * g + L.d)
    fp = a * g / (L.c * g + L.d) ** 2
    rho = 2 * np.abs(fp) / (1 + np.abs(f) ** 2)
    assert np.allclose(m.rho(z), rho, rtol=1e-12)
    assert np.allclose(m.values(z), f, rtol=1e-12)


def test_rho_positive_everywhere(rng):
    z = random_points(rng, 200, 5.0)
    for m in closed_form_maps():
        assert np.all(m.rho(z) > 0)


def test_rotation_invariance(rng):
    z = random_points(rng, 100)
    for m in closed_form_maps():
        for _ in range(3):
            R = rotation(*(rng.standard_normal(2) @ [1, 1j] for _ in range(2)))
            rm = rotate_map(m, R)
            assert np.allclose(rm.rho(z), m.rho(z), rtol=1e-10, atol=0)
            for zi in z[:5]:
                assert spherical_distance(eval_f(rm, zi), R(eval_f(m, zi))) < 1e-9


def test_rotate_identity_and_inversion():
    m = ShiftedExp(0)
    assert eval_f(rotate_map(m, IDENTITY), 0.3) == pytest.approx(eval_f(m, 0.3))
    assert eval_f(rotate_map(m, MobiusTransform(0, -1, 1, 0)), 0) == pytest.approx(-1)
    with pytest.raises(ValueError):
        rotate_map(m, MobiusTransform(2, 0, 0, 1))


def test_exp_family_level_lines():
    a, b = 1.3 + 0.5j, 0.2 - 0.1j
    m = ExpFamily(rotation(0.3, 1 + 1j), a, b)
    for c in (-1.0, 0.0, 0.8):
        # points with Re(az+b) = c: z = (c + i s - b) / a
        s = np.linspace(-5, 5, 21)
        z = (c + 1j * s - b) / a
        u = m.log_rho(z)
        assert np.ptp(u) < 1e-10


def test_schwarzian_closed_forms():
    for z in (0.3, 1 + 2j, -0.5j):
        assert abs(numeric_schwarzian(Mobius(MobiusTransform(2, 1j, -1, 1)), z)) < 1e-6
        assert abs(numeric_schwarzian(ShiftedExp(0), z) + 0.5) < 1e-6


def test_schwarzian_near_pole_uses_reciprocal():
    # 1/z has a pole at 0; the stencil at 1e-2 from it still works through 1/f
    assert abs(numeric_schwarzian(Mobius(INVERSION), 0.01, 1e-4)) < 1e-4


def test_schwarzian_of_ode_ratio():
    m = OdeRatio(LinearOdeProblem(Polynomial([0, 1])))
    assert abs(numeric_schwarzian(m, 2.0) - 4.0) < 1e-4
    rng = np.random.default_rng(7)
    for z in random_points(rng, 10, 1.0):
        assert abs(numeric_schwarzian(m, z) - 2 * z) < 1e-4
    assert 1.8 <= schwarzian_order(m, 1 + 0.5j, 0.02) <= 2.2


def test_schwarzian_rejects_bad_step():
    with pytest.raises(ValueError):
        numeric_schwarzian(ShiftedExp(0), 0, 0.0)


@pytest.mark.parametrize("m", closed_form_maps() + [
    OdeRatio(LinearOdeProblem(Polynomial([1, 0, 1j]))), MathieuRatio.from_lambda(0.3 + 0.1j)])
def test_description_round_trip(m):
    desc = m.to_description()
    back = map_from_description(desc)
    assert canonical_json(back.to_description()) == canonical_json(desc)
    z = np.array([0.2 + 0.1j, -0.7j])
    assert np.allclose(back.log_rho(z), m.log_rho(z), rtol=0, atol=1e-12)


@pytest.mark.parametrize("bad", [{}, {"kind": "nope"}, {"kind": "mobius", "coefficients": [1, 2]},
                                 {"kind": "shifted_exp", "t": "x"},
                                 {"kind": "mobius", "coefficients": [1, 2, 2, 4]},
                                 {"kind": "exp_family", "a": 0}])
def test_bad_descriptions(bad):
    with pytest.raises(ValueError):
        map_from_description(bad)
    if bad.get("kind") in (None, "nope"):
        with pytest.raises(MapDescriptionError):
            map_from_description(bad)


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30))
def test_shifted_exp_depends_on_real_part_only(x, y):
    m = ShiftedExp(0)
    assert u_field(m, complex(x, y)) == pytest.approx(-math.log(math.cosh(x)), abs=1e-12)
