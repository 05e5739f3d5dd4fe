import math

import numpy as np
import pytest

from meanfield import reduced as R
from meanfield import solver as S
from meanfield.fem import assemble, build_mesh
from meanfield.geometry import surface_catalog
from meanfield.green import GreenFunction

RADIAL = "exp(0.5*(x^2+y^2))"


@pytest.fixture(scope="module")
def disk_system():
    s = surface_catalog("disk", {}, "exp(0.3*x)")
    mesh = build_mesh(s, 0.08)
    return s, mesh, assemble(mesh)


@pytest.fixture(scope="module")
def radial_center():
    s = surface_catalog("disk", {}, RADIAL)
    return R.Configuration(GreenFunction(s, "disk-images"), [s.interior_point(0j)], 1)


@pytest.fixture(scope="module")
def near_critical(radial_center):
    lam = 8 * math.pi + 0.4
    return S.continue_family(radial_center, [lam], h=0.05)


def test_zero_lambda_is_linear(disk_system):
    s, mesh, system = disk_system
    u0 = np.cos(3 * np.real(mesh.z))
    res = S.newton_solve(s, mesh, 0.0, u0, system=system)
    assert res.iterations <= 1
    assert np.max(np.abs(res.u.values)) < 1e-9


def test_constant_potential_has_zero_solution():
    s = surface_catalog("disk")
    mesh = build_mesh(s, 0.1)
    res = S.newton_solve(s, mesh, 1.0)
    assert res.iterations == 0
    res = S.newton_solve(s, mesh, 1.0, 0.1 * np.imag(mesh.z) ** 2)
    assert np.ptp(res.u.values) < 1e-8


def test_newton_converges_quadratically(disk_system):
    s, mesh, system = disk_system
    res = S.newton_solve(s, mesh, 12.0, system=system, tol=1e-13)
    assert res.converged and res.residual < 1e-13
    order = res.convergence_order()
    assert order is not None and order >= 1.7


def test_discrete_residual_sums_to_zero(disk_system):
    # the constant lies in the kernel of K and the nonlinearity is normalized
    s, mesh, system = disk_system
    op = S.MeanFieldOperator(system, 7.0)
    phi = np.sin(2 * np.real(mesh.z)) * np.imag(mesh.z)
    r = op.residual(phi)
    assert abs(r.sum()) < 1e-12 * max(1.0, np.abs(r).max())


def test_jacobian_matches_finite_differences(disk_system):
    s, mesh, system = disk_system
    lam = 9.0
    op = S.MeanFieldOperator(system, lam)
    phi = 0.3 * np.real(mesh.z) ** 2
    A, b, I = op.jacobian_parts(phi)
    d = np.cos(np.imag(mesh.z))
    Jd = A @ d + (lam / I**2) * b * (b @ d)
    eps = 1e-6
    fd = (op.residual(phi + eps * d) - op.residual(phi - eps * d)) / (2 * eps)
    assert np.max(np.abs(Jd - fd)) < 1e-6 * np.max(np.abs(fd))


def test_negative_lambda_rejected(disk_system):
    s, mesh, system = disk_system
    with pytest.raises(ValueError):
        S.newton_solve(s, mesh, -1.0, system=system)


def test_failure_keeps_last_iterate(disk_system):
    s, mesh, system = disk_system
    with pytest.raises(S.NewtonFailure) as info:
        S.newton_solve(s, mesh, 12.0, system=system, max_iter=1)
    res = info.value.result
    assert res is not None and not res.converged and res.iterations == 1
    assert np.all(np.isfinite(res.u.values))


def test_warm_start_near_critical_value(near_critical):
    rec = near_critical
    assert rec.truncated is None and len(rec.results) == 1
    res = rec.results[0]
    assert res.converged and res.residual < 1e-9
    assert res.max_u > 5


def test_mass_identity(near_critical, radial_center):
    res = near_critical.results[0]
    con = S.concentration_diagnostics(res, radial_center, 0.2)
    for r in con.radii:
        assert con.total[r] == pytest.approx(res.lam, rel=1e-12)
    # most of the mass sits in the core for a concentrated solution
    assert con.masses[0.1][0] > 0.5 * res.lam
    assert con.weights == [8 * math.pi]


def test_wrong_side_schedule_raises(radial_center):
    lam = 8 * math.pi - 0.2
    with pytest.raises(S.FamilyError, match="no admissible rho"):
        S.continue_family(radial_center, [lam], h=0.1)


def test_schedule_validation(radial_center):
    with pytest.raises(ValueError):
        S.continue_family(radial_center, [])
    with pytest.raises(ValueError):
        S.continue_family(radial_center, [26.0, 25.5, 25.8])


def test_geometric_schedule():
    lk = 8 * math.pi
    right = S.geometric_schedule(lk, "right", eps=0.4, steps=4)
    assert right == pytest.approx([lk + 0.4, lk + 0.2, lk + 0.1, lk + 0.05], rel=1e-15)
    left = S.geometric_schedule(lk, "left")
    assert len(left) == S.DEFAULT_SCHEDULE_STEPS
    assert all(x < lk for x in left) and np.all(np.diff(left) > 0)


def test_graded_mesh_resolves_core(radial_center):
    rho = 0.05
    mesh = S.graded_mesh(radial_center, 0.1, rho)
    d = np.abs(mesh.z)
    assert np.min(d) < 1e-14  # the point itself is a node
    near = np.sort(d)[1:8]
    assert near.max() < 2 * rho / S.CORE_RESOLUTION * 3
