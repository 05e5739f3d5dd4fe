import math

import numpy as np
import pytest
from scipy.special import jnp_zeros

from meanfield.fem import (
    IncompatibleData,
    Refinement,
    assemble,
    build_mesh,
    load_boundary,
    load_weighted,
    neumann_eigenvalues,
    solve_neumann_meanzero,
)


@pytest.fixture(scope="module")
def disk_system(disk):
    return assemble(build_mesh(disk, 0.1))


def test_disk_mesh_structure(disk_system):
    m = disk_system.mesh
    assert m.boundary_cycles() == 1
    assert m.min_angle() > 20.0
    assert np.all(m.signed_areas() > 0)
    assert len(np.unique(np.round(m.z, 12))) == m.n_nodes
    on_circle = np.abs(np.abs(m.z) - 1.0) < 1e-12
    assert np.array_equal(on_circle, m.is_boundary)


def test_cylinder_mesh_has_two_boundary_cycles(cylinder):
    m = build_mesh(cylinder, 0.1)
    assert m.boundary_cycles() == 2
    assert set(np.unique(m.boundary_component)) == {-1, 0, 1}


def test_node_budget_guard(disk):
    with pytest.raises(ValueError, match="budget"):
        build_mesh(disk, 1e-6)


def test_constants_in_kernel_and_area(disk_system):
    K = disk_system.stiffness
    assert np.max(np.abs(K @ np.ones(K.shape[0]))) < 1e-12
    assert disk_system.area == pytest.approx(math.pi, rel=0.01)
    assert (K - K.T).count_nonzero() == 0 or abs(K - K.T).max() < 1e-14


def test_cylinder_area(cylinder):
    sysm = assemble(build_mesh(cylinder, 0.1))
    assert sysm.area == pytest.approx(4 * math.pi, rel=5e-3)


def test_first_neumann_eigenvalue_of_disk(disk):
    lam = neumann_eigenvalues(assemble(build_mesh(disk, 0.02)), k=3)
    oracle = jnp_zeros(1, 1)[0] ** 2
    assert oracle == pytest.approx(3.390, abs=1e-3)
    assert abs(lam[0]) < 1e-8
    assert lam[1] == pytest.approx(oracle, rel=0.02)


def test_zero_data_gives_zero(disk_system):
    u = solve_neumann_meanzero(disk_system, np.zeros(disk_system.mesh.n_nodes))
    assert np.max(np.abs(u.values)) == 0.0


def _harmonic_error(s, h):
    m = build_mesh(s, h)
    sysm = assemble(m)
    g = load_boundary(m, lambda z: 2 * (z.real**2 - z.imag**2))
    u = solve_neumann_meanzero(sysm, np.zeros(m.n_nodes), g)
    exact = m.z.real**2 - m.z.imag**2
    exact -= sysm.mean(exact)
    return float(np.max(np.abs(u.values - exact)))


def test_manufactured_harmonic_solution_converges(disk):
    hs = np.array([0.1, 0.05, 0.025])
    errs = [_harmonic_error(disk, h) for h in hs]
    assert errs[-1] < 5e-3
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 1.8


def test_incompatible_data(disk_system):
    m = disk_system.mesh
    f = load_weighted(m, lambda z: np.ones(z.shape))
    with pytest.raises(IncompatibleData):
        solve_neumann_meanzero(disk_system, f)
    u = solve_neumann_meanzero(disk_system, f, correct_mean=True)
    assert abs(disk_system.mean(u.values)) < 1e-12


def test_solve_is_self_adjoint(disk_system):
    m = disk_system.mesh
    rng = np.random.default_rng(0)
    M = disk_system.mass
    f, g = rng.standard_normal(m.n_nodes), rng.standard_normal(m.n_nodes)
    f -= disk_system.mean(f)
    g -= disk_system.mean(g)
    uf = solve_neumann_meanzero(disk_system, M @ f)
    ug = solve_neumann_meanzero(disk_system, M @ g)
    lhs, rhs = uf.values @ (M @ g), ug.values @ (M @ f)
    assert lhs == pytest.approx(rhs, rel=1e-9)
    assert abs(disk_system.mean(uf.values)) < 1e-12


def test_system_residual_is_small(disk_system):
    m = disk_system.mesh
    f = load_weighted(m, lambda z: z.real**3 - 0.1 * z.imag)
    u = solve_neumann_meanzero(disk_system, f, correct_mean=True)
    b = f - disk_system.mass_vector * f.sum() / disk_system.area
    r = disk_system.stiffness @ u.values - b
    assert np.linalg.norm(r) < 1e-10 * np.linalg.norm(b)


def test_graded_mesh_refines_near_center(disk):
    m = build_mesh(disk, 0.1, refinements=[Refinement(0.3 + 0j, 0.005, 1.2)], required_points=[0.3 + 0j])
    assert np.min(np.abs(m.z - 0.3)) < 1e-14
    near = np.abs(m.z[m.triangles].mean(axis=1) - 0.3) < 0.02
    edge = np.abs(m.z[m.triangles[:, 1]] - m.z[m.triangles[:, 0]])
    assert edge[near].max() < 0.03
    assert m.min_angle() > 20.0


def test_mesh_export(tmp_path, disk_system):
    p = tmp_path / "mesh.txt"
    disk_system.mesh.export_text(p)
    lines = p.read_text().splitlines()
    assert lines[0] == f"# nodes {disk_system.mesh.n_nodes}"
    assert len(lines) == 2 + disk_system.mesh.n_nodes + len(disk_system.mesh.triangles)
