import math

import numpy as np
import pytest

from liouville.fields import (NSD_TOL, choose_step, concavity_scan, hessian_u, hessians,
                              liouville_residual, quasiconcavity_witness, residual_convergence,
                              superlevel_convexity_check, witness_gap)
from liouville.maps import ExpFamily, Mobius, ShiftedExp
from liouville.metric import GridWindow
from liouville.ode import LinearOdeProblem, OdeRatio, Polynomial
from liouville.sphere import MobiusTransform, rotation

from conftest import random_points

IDENT = Mobius(MobiusTransform.identity())
ROT = rotation(0.6 + 0.3j, -0.2 + 0.9j)


def airy():
    return OdeRatio(LinearOdeProblem(Polynomial([0, 1])))


def three_maps():
    return [ShiftedExp(1), Mobius(MobiusTransform(2, 1j, -1, 1)), airy()]


def test_residual_examples():
    assert abs(liouville_residual(ShiftedExp(0), 0.3 + 0.7j, 1e-3)) < 1e-4
    assert abs(liouville_residual(IDENT, 2j, 1e-3)) < 1e-4
    conv = residual_convergence(ShiftedExp(0), [0.3 + 0.7j, -1.2 + 0.4j])
    assert all(1.8 <= p <= 2.2 for p in conv.orders)
    with pytest.raises(ValueError):
        liouville_residual(IDENT, 0, 0)


def test_hessian_closed_forms():
    s = hessian_u(ShiftedExp(0), 0.0)
    assert s.eigenvalues == pytest.approx([-1, 0], abs=1e-6)
    assert s.H[0, 1] == s.H[1, 0]
    x = 0.8
    s = hessian_u(ShiftedExp(0), x)
    assert s.H == pytest.approx(np.diag([-1 / math.cosh(x) ** 2, 0]), abs=1e-6)
    s = hessian_u(IDENT, 0.0)
    assert s.H == pytest.approx(-2 * np.eye(2), abs=1e-5)
    assert s.eigenvalues[0] <= s.eigenvalues[1]


def test_hessian_trace_identity(rng):
    z = random_points(rng, 50, 1.0)
    for m in three_maps():
        u, H = hessians(m, z, 1e-3)
        assert np.max(np.abs(H[:, 0, 0] + H[:, 1, 1] + np.exp(2 * u))) < 1e-3


def test_hessian_trace_order():
    z = np.array([0.4 + 0.2j, -0.3 + 1.1j])
    m = airy()
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        u, H = hessians(m, z, h)
        errs.append(np.max(np.abs(H[:, 0, 0] + H[:, 1, 1] + np.exp(2 * u))))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(1.8 <= p <= 2.2 for p in orders)


def test_choose_step_is_a_candidate():
    h = choose_step(ShiftedExp(1), np.array([0.1, 1j]))
    assert h in (1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4)


def test_concavity_examples():
    w = GridWindow.square(3, 0.25)
    scan = concavity_scan(ExpFamily(ROT, 1, 0), w)
    assert scan.fraction_nsd == 1.0
    scan = concavity_scan(IDENT, w)
    assert scan.fraction_nsd < 1.0
    assert scan.worst_eigenvalue > NSD_TOL
    # the radial profile -log(1 + r^2) turns convex beyond r = 1
    assert abs(scan.worst_location) > 1
    assert np.all(scan.lam_max[np.abs(w.points()) < 0.9] <= NSD_TOL)


def test_concavity_exports(tmp_path):
    w = GridWindow.square(1, 0.5)
    scan = concavity_scan(IDENT, w, 1e-3)
    scan.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "x,y,u,lambda_min,lambda_max"
    lo, hi = scan.to_pgm(tmp_path / "u.pgm")
    assert lo == pytest.approx(scan.u.min()) and hi == pytest.approx(scan.u.max())


def test_superlevel_examples():
    w = GridWindow.square(3, 0.1)
    for c in (-2.0, -0.5, 0.5):
        assert superlevel_convexity_check(IDENT, c, w).passed
    for c in (-2.0, -0.5, 0.0):
        assert superlevel_convexity_check(ExpFamily(ROT, 1, 0), c, w).passed
    res = superlevel_convexity_check(airy(), -3.0, GridWindow.square(4, 0.1))
    assert not res.passed
    u1, u2, um = res.witness_values
    assert min(u1, u2) >= -3.0 > um


def test_superlevel_determinism():
    w = GridWindow.square(4, 0.2)
    a = superlevel_convexity_check(airy(), -3.0, w, seed=5)
    b = superlevel_convexity_check(airy(), -3.0, w, seed=5)
    assert a == b
    with pytest.raises(ValueError):
        superlevel_convexity_check(IDENT, 5.0, w)


def test_witness_for_concave_map():
    rep = quasiconcavity_witness(ExpFamily(ROT, 1, 0), 10)
    assert not rep.success
    assert rep.gap <= 0


def test_witness_gap_consistent_with_report():
    m = airy()
    rep = quasiconcavity_witness(m, 10, np.arange(1.0, 30.0))
    assert rep.success
    assert rep.gap == pytest.approx(min(rep.u1, rep.u2) - rep.u_mid)
    assert witness_gap(m, rep.r, rep.omega) == pytest.approx(rep.gap, abs=1e-12)
    assert witness_gap(m, 2 * rep.r, rep.omega) > rep.gap
    with pytest.raises(ValueError):
        quasiconcavity_witness(m, -1)


def test_rotation_leaves_diagnostics_unchanged(rng):
    z = random_points(rng, 50, 1.0)
    for m in three_maps():
        rm = m.rotated(ROT)
        assert np.max(np.abs(rm.log_rho(z) - m.log_rho(z))) < 1e-9
        assert np.max(np.abs(liouville_residual(rm, z, 1e-2) - liouville_residual(m, z, 1e-2))) < 1e-9
        assert np.max(np.abs(hessians(rm, z, 1e-2)[1] - hessians(m, z, 1e-2)[1])) < 1e-9
    m = airy()
    a = quasiconcavity_witness(m, 10, np.arange(1.0, 15.0))
    b = quasiconcavity_witness(m.rotated(ROT), 10, np.arange(1.0, 15.0))
    assert (a.r, a.omega) == (b.r, b.omega)
    assert a.gap == pytest.approx(b.gap, abs=1e-9)
