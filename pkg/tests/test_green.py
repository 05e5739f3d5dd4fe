import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanfield.green import (
    GreenFunction,
    SingularEvaluation,
    green_eval,
    green_oracle_cylinder,
    green_oracle_disk,
    robin,
    robin_oracle_disk,
)

R0 = -3 / (8 * math.pi)


def test_disk_example_value(disk, disk_green):
    expected = -math.log(0.5) / (2 * math.pi) + 1 / (16 * math.pi) - 3 / (8 * math.pi)
    assert expected == pytest.approx(0.010846, abs=1e-6)
    assert float(green_oracle_disk(0.5, 0.0)) == pytest.approx(expected, rel=1e-14)
    assert green_eval(disk_green, disk.interior_point(0.5), disk.interior_point(0j)) == pytest.approx(expected, rel=1e-12)


def test_singular_evaluation(disk, disk_green):
    p = disk.interior_point(0.2 + 0.1j)
    with pytest.raises(SingularEvaluation):
        green_eval(disk_green, p, p)
    with pytest.raises(SingularEvaluation):
        green_oracle_disk(0.3, 0.3)


def _random_pairs(n, seed):
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.uniform(0, 0.9**2, (n, 2)))
    t = rng.uniform(0, 2 * math.pi, (n, 2))
    return r * np.exp(1j * t)


def test_oracle_symmetry(disk, disk_green):
    for a, b in _random_pairs(20, 1):
        g1 = float(disk_green.G(np.array([a]), disk.interior_point(b))[0])
        g2 = float(disk_green.G(np.array([b]), disk.interior_point(a))[0])
        assert abs(g1 - g2) < 1e-8


def test_oracle_symmetry_boundary_source(disk, disk_green):
    pb = disk.boundary_point(0, 1.1)
    zb = disk.to_param(pb)
    for a in _random_pairs(5, 2)[:, 0]:
        g1 = float(disk_green.G(np.array([a]), pb)[0])
        g2 = float(disk_green.G(np.array([zb]), disk.interior_point(a))[0])
        assert g1 == pytest.approx(g2, abs=1e-10)


def _laplacian_fd(f, z, h=1e-3):
    return (f(z + h) + f(z - h) + f(z + 1j * h) + f(z - 1j * h) - 4 * f(z)) / h**2


def test_oracle_pde_and_flux():
    xi = 0.3 + 0.2j
    z = np.array([-0.5 + 0.1j, 0.1 - 0.6j, 0.7j, -0.2 - 0.2j])
    lap = _laplacian_fd(lambda w: green_oracle_disk(w, xi), z)
    assert np.max(np.abs(-lap + 1 / math.pi)) < 1e-6
    t = np.linspace(0, 2 * math.pi, 100, endpoint=False)
    zb = np.exp(1j * t)
    h = 1e-4
    # one-sided second-order derivative along the inward radius
    flux = (3 * green_oracle_disk(zb, xi) - 4 * green_oracle_disk(zb * (1 - h), xi)
            + green_oracle_disk(zb * (1 - 2 * h), xi)) / (2 * h)
    assert np.max(np.abs(flux)) < 1e-6


def test_oracle_source_gradient():
    xi = 0.2 - 0.35j
    x = np.array([0.5 + 0.1j, -0.3j])
    _, g = green_oracle_disk(x, xi, with_gradient=True)
    h = 1e-6
    d1 = (green_oracle_disk(x, xi + h) - green_oracle_disk(x, xi - h)) / (2 * h)
    d2 = (green_oracle_disk(x, xi + 1j * h) - green_oracle_disk(x, xi - 1j * h)) / (2 * h)
    assert np.allclose(g, d1 + 1j * d2, atol=1e-7)


def test_robin_center_and_rotation(disk, disk_green):
    assert robin(disk_green, disk.interior_point(0j)) == pytest.approx(R0, abs=1e-12)
    assert R0 == pytest.approx(-0.119366, abs=1e-6)
    for r in (0.2, 0.5, 0.7):
        a = disk_green.robin(disk.interior_point(r))
        b = disk_green.robin(disk.interior_point(1j * r))
        assert a == pytest.approx(b, abs=1e-8)
        assert a == pytest.approx(robin_oracle_disk(r), abs=1e-10)


def test_robin_cutoff_independence(disk, cylinder):
    for s, backend, pts in ((disk, "disk-images", (0.3 + 0.1j,)), (cylinder, "cylinder-series", ())):
        g2 = GreenFunction(s, backend, cutoff_fraction=0.5)
        g4 = GreenFunction(s, backend, cutoff_fraction=0.25)
        points = [s.interior_point(z) for z in pts] + [s.boundary_point(0, 0.4)]
        if s is cylinder:
            points.append(s.point(1.0, 0.7))
        for p in points:
            assert g2.robin(p) == pytest.approx(g4.robin(p), abs=1e-6)


def test_cylinder_oracle_pde_flux_and_symmetry(cylinder, cylinder_green):
    L = 2.0
    f = lambda th, s: green_oracle_cylinder(th, s, 0.4, 0.7, L)
    th = np.array([1.5, -2.0, 3.0])
    s = np.array([0.3, 1.4, 1.9])
    h = 1e-3
    lap = (f(th + h, s) + f(th - h, s) + f(th, s + h) + f(th, s - h) - 4 * f(th, s)) / h**2
    assert np.max(np.abs(-lap + 1 / (2 * math.pi * L))) < 1e-6
    tt = np.linspace(-3, 3, 50)
    for s0, sign in ((0.0, 1), (L, -1)):
        d = (-3 * f(tt, s0) + 4 * f(tt, s0 + sign * 1e-4) - f(tt, s0 + 2 * sign * 1e-4)) / 2e-4
        assert np.max(np.abs(d)) < 1e-6
    assert f(np.array([2.0]), np.array([1.2]))[0] == pytest.approx(
        green_oracle_cylinder(0.4, 0.7, 2.0, 1.2, L), abs=1e-12)


def test_cylinder_green_has_zero_mean(cylinder, cylinder_green):
    p = cylinder.point(0.5, 0.8)
    assert abs(cylinder_green.integrate_against(p, lambda z: np.ones(z.shape))) < 2e-3


def test_disk_green_has_zero_mean(disk, disk_green):
    for p in (disk.interior_point(0.3 + 0.1j), disk.boundary_point(0, 2.0)):
        assert abs(disk_green.integrate_against(p, lambda z: np.ones(z.shape))) < 2e-3


@pytest.fixture(scope="module")
def disk_fem(disk):
    return GreenFunction(disk, "fem", h=0.05)


def test_fem_regular_part_at_center(disk, disk_fem):
    assert disk_fem.robin(disk.interior_point(0j)) == pytest.approx(R0, abs=5e-3)


def test_fem_matches_oracle_away_from_source(disk, disk_fem, disk_green):
    p = disk.interior_point(0.3 + 0j)
    z = np.array([-0.5 + 0.2j, 0.1 - 0.7j, 0.6j, -0.8])
    assert np.max(np.abs(disk_fem.G(z, p) - disk_green.G(z, p))) < 5e-3


def test_fem_regular_part_is_continuous_in_source(disk, disk_fem):
    z = disk.sample_points(6, 12)
    base = disk_fem.regular_part_fem(disk.interior_point(0.2 + 0j))
    gaps = []
    for d in (0.04, 0.02, 0.01):
        other = disk_fem.regular_part_fem(disk.interior_point(0.2 + d))
        gaps.append(np.max(np.abs(other(z) - base(z))))
    assert gaps[0] > gaps[1] > gaps[2]


def test_fem_boundary_source_on_cylinder_is_smooth(cylinder):
    gf = GreenFunction(cylinder, "fem", h=0.05)
    p = cylinder.boundary_point(0, 0.0)
    c = gf.chart(p)
    h = 0.02
    y = np.array([0.05j, 0.1 + 0.1j, -0.1 + 0.05j])
    H = lambda w: gf.regular(c.inverse(w), p)
    second = (H(y + h) + H(y - h) - 2 * H(y)) / h**2
    assert np.all(np.isfinite(second)) and np.max(np.abs(second)) < 5.0


def test_backend_validation(disk, cylinder):
    with pytest.raises(ValueError):
        GreenFunction(cylinder, "disk-images")
    with pytest.raises(ValueError):
        GreenFunction(disk, "cylinder-series")
    with pytest.raises(ValueError):
        GreenFunction(disk, "spectral")


@settings(max_examples=40, deadline=None)
@given(r1=st.floats(0.0, 0.95), t1=st.floats(0, 2 * math.pi), r2=st.floats(0.0, 0.95), t2=st.floats(0, 2 * math.pi))
def test_oracle_symmetry_property(r1, t1, r2, t2):
    a, b = r1 * np.exp(1j * t1), r2 * np.exp(1j * t2)
    if abs(a - b) < 1e-6:
        return
    assert float(green_oracle_disk(a, b)) == pytest.approx(float(green_oracle_disk(b, a)), abs=1e-10)


def test_green_table(disk, disk_green):
    rows = disk_green.table([(0.5, disk.interior_point(0j)), (0.2j, disk.interior_point(0j))])
    assert rows[0][2] == pytest.approx(0.010846, abs=1e-6)
    # inside the cutoff core H = G + (1/2 pi) log|x|
    _, _, G, H = rows[1]
    assert H == pytest.approx(G + math.log(0.2) / (2 * math.pi), abs=1e-12)
