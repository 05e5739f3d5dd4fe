import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanfield.geometry import refined_chart
from meanfield.quadrature import (
    QuadratureRule,
    annulus,
    appendix_integral,
    bubble_moment,
    disk,
    half_disk,
    int13_half_plane,
    int13_half_plane_polar_oracle,
    int14_plane,
    integrate_chart,
    liouville_mass,
)


def test_area_of_unit_disk():
    assert integrate_chart(lambda y: np.ones(y.shape), disk(1.0)).value == pytest.approx(math.pi, rel=1e-13)


def test_bubble_density_on_unit_disk():
    res = integrate_chart(lambda y: 1 / (1 + np.abs(y) ** 2) ** 2, disk(1.0))
    assert res.converged
    assert res.value == pytest.approx(math.pi / 2, rel=1e-12)
    res = integrate_chart(lambda y: 2 / (1 + np.abs(y) ** 2) ** 3, disk(1.0))
    assert res.value == pytest.approx(3 * math.pi / 4, rel=1e-12)


def test_int01_example_value():
    formula, quad = appendix_integral("int01", 1.0, 0.1)
    assert formula == pytest.approx(math.pi - 0.01 * math.pi + 0.0001 * math.pi / 1.01, rel=1e-15)
    assert quad == pytest.approx(formula, rel=1e-8)


@pytest.mark.parametrize("kind", ["int01", "int02"])
@pytest.mark.parametrize("r", [0.5, 1.0])
@pytest.mark.parametrize("rho", [0.01, 0.1, 0.5])
def test_closed_forms_match_quadrature(kind, r, rho):
    formula, quad = appendix_integral(kind, r, rho)
    assert quad == pytest.approx(formula, rel=1e-8)
    fh, qh = appendix_integral(kind, r, rho, region="half")
    assert qh == pytest.approx(fh, rel=1e-8)


def test_plane_integrals():
    assert int14_plane().value == pytest.approx(math.pi, rel=1e-6)
    for tau in (1.0, 0.01, 3.0):
        assert liouville_mass(tau).value == pytest.approx(8 * math.pi, rel=1e-6)


def test_half_plane_first_moment_two_routes():
    quad = int13_half_plane().value
    oracle = int13_half_plane_polar_oracle()
    assert oracle == pytest.approx(math.pi / 8, rel=1e-14)
    assert quad == pytest.approx(oracle, abs=1e-8)
    # the constant 1/2 does not survive the check
    assert abs(quad - 0.5) > 0.1


def test_odd_integrand_vanishes_on_half_disk():
    _, q = appendix_integral("int13_1", 1.0, 0.1, region="half")
    assert abs(q) < 1e-12


def test_invalid_inputs():
    with pytest.raises(ValueError):
        appendix_integral("int01", 0.0, 0.1)
    with pytest.raises(ValueError):
        appendix_integral("int01", 1.0, -0.1)
    with pytest.raises(ValueError):
        QuadratureRule(order=1)
    with pytest.raises(ValueError):
        QuadratureRule(rel_tol=0.0)
    with pytest.raises(FloatingPointError):
        integrate_chart(lambda y: np.full(y.shape, np.nan), disk(1.0))


def test_refinement_limit_flags_nonconvergence():
    f = lambda y: np.cos(40 * y.real)
    assert not integrate_chart(f, disk(1.0), QuadratureRule(order=2, refinement_limit=1, n_theta=4)).converged
    single = integrate_chart(f, disk(1.0), QuadratureRule(order=2, refinement_limit=0, n_theta=4))
    assert not single.converged and single.error == math.inf


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), r=st.floats(0.1, 2.0))
def test_linearity(a, b, r):
    f = lambda y: np.exp(-np.abs(y) ** 2)
    g = lambda y: y.real**2 + 0.3 * y.imag
    for reg in (disk(r), half_disk(r), annulus(0.25 * r, r)):
        lhs = integrate_chart(lambda y: a * f(y) + b * g(y), reg).value
        rhs = a * integrate_chart(f, reg).value + b * integrate_chart(g, reg).value
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(tau=st.floats(1e-3, 1e2))
def test_liouville_mass_is_scale_free(tau):
    assert liouville_mass(tau).value == pytest.approx(8 * math.pi, rel=1e-6)


def test_constant_moment_interior_and_boundary(disk, cylinder):
    ci = refined_chart(disk, disk.interior_point(0j))
    one = lambda z: np.ones(np.shape(z))
    assert bubble_moment(one, ci, 0.01, mode="numeric") == pytest.approx(8 * math.pi, rel=2e-3)
    assert bubble_moment(one, ci, 0.01, mode="asymptotic") == pytest.approx(
        bubble_moment(one, ci, 0.01, mode="numeric"), rel=1e-5)
    cb = refined_chart(cylinder, cylinder.boundary_point(0, 0.5))
    num = bubble_moment(one, cb, 0.01, mode="numeric", r0=0.45)
    assert num == pytest.approx(4 * math.pi, rel=1e-3)
    # constant f has no first-order boundary term
    assert bubble_moment(one, cb, 0.01, mode="asymptotic", r0=0.45) == pytest.approx(num, rel=1e-5)


@pytest.mark.parametrize("kind", ["eqspan", "eqspan_1", "eqspan_2"])
def test_boundary_moment_expansions_converge(cylinder, kind):
    c = refined_chart(cylinder, cylinder.boundary_point(0, 0.5))
    f = lambda z: 1 + 0.5 * c.forward(z).imag
    rhos = np.array([0.1, 0.05, 0.025])
    errs = [abs(bubble_moment(f, c, r, kind, "numeric", r0=0.45, a=0.3)
                - bubble_moment(f, c, r, kind, "asymptotic", r0=0.45, a=0.3)) for r in rhos]
    assert np.polyfit(np.log(rhos), np.log(errs), 1)[0] >= 0.8


def test_moment_guards(disk):
    c = refined_chart(disk, disk.interior_point(0j))
    one = lambda z: np.ones(np.shape(z))
    with pytest.raises(ValueError):
        bubble_moment(one, c, 0.1, r0=0.2)
    with pytest.raises(ValueError):
        bubble_moment(one, c, -0.01)
