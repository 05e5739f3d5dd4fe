"""Piecewise-linear finite elements on the parameter domain of a catalog surface.

The metric is g = e^psi |dz|^2, so the Dirichlet form is the flat one and the
metric only enters the mass matrix and the boundary mass.  Meshes come from
Shewchuk's Triangle with circles discretized beforehand; a size field in
metric units gives quasi-uniform meshes with optional geometric grading
towards selected points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
import triangle as tr
from matplotlib.tri import Triangulation

from .geometry import SurfaceModel, SurfacePoint

DEFAULT_NODE_BUDGET = 400_000

# degree-5 seven-point rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
TRI_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
TRI_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


@dataclass
class Refinement:
    """Grade the mesh towards ``center`` (parameter plane) down to size ``h_core``."""

    center: complex
    h_core: float
    grading: float = 1.2
    radius: float = math.inf  # beyond this metric distance the grading is switched off


@dataclass
class TriMesh:
    surface: SurfaceModel
    z: np.ndarray  # complex node positions in the parameter plane
    triangles: np.ndarray  # (nt, 3), counterclockwise
    boundary_edges: np.ndarray  # (nb, 2), domain on the left
    boundary_component: np.ndarray  # per node: -1 interior, else component index
    h: float
    metric_weights: np.ndarray = field(repr=False, default=None)
    _finder: object = field(repr=False, default=None)

    def __post_init__(self):
        if self.metric_weights is None:
            zc = self.z[self.triangles].mean(axis=1)
            self.metric_weights = np.exp(self.surface.psi(zc))

    @property
    def n_nodes(self):
        return len(self.z)

    @property
    def is_boundary(self):
        return self.boundary_component >= 0

    @property
    def nodes(self):
        """Nodes as SurfacePoints (boundary nodes in boundary charts)."""
        s = self.surface
        out = []
        for zz, comp in zip(self.z, self.boundary_component):
            if comp >= 0:
                out.append(s.boundary_point(int(comp), float(s.boundary_components[comp].arc(zz))))
            else:
                out.append(SurfacePoint("interior", "param", (zz.real, zz.imag)))
        return out

    def signed_areas(self):
        p = self.z[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1.real * d2.imag - d1.imag * d2.real)

    def min_angle(self):
        p = self.z[self.triangles]
        ang = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            ang.append(np.abs(np.angle(b / a)))
        return float(np.degrees(np.min(ang)))

    def boundary_cycles(self):
        """Number of closed cycles formed by the boundary edges."""
        nxt = {int(a): int(b) for a, b in self.boundary_edges}
        seen, cycles = set(), 0
        for start in nxt:
            if start in seen:
                continue
            cycles += 1
            v = start
            while v not in seen:
                seen.add(v)
                v = nxt[v]
        return cycles

    def finder(self):
        if self._finder is None:
            tri = Triangulation(self.z.real, self.z.imag, self.triangles)
            self._finder = (tri, tri.get_trifinder())
        return self._finder

    def locate(self, zq):
        """Triangle index and barycentric coordinates of query points (nearest node fallback)."""
        zq = np.atleast_1d(np.asarray(zq, dtype=complex))
        _, f = self.finder()
        t = np.asarray(f(zq.real, zq.imag))
        bad = t < 0
        if np.any(bad):
            # points on or slightly outside the polygonal boundary: snap to the nearest triangle
            zc = self.z[self.triangles].mean(axis=1)
            for i in np.flatnonzero(bad):
                t[i] = int(np.argmin(np.abs(zc - zq[i])))
        p = self.z[self.triangles[t]]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        det = d1.real * d2.imag - d1.imag * d2.real
        q = zq - p[:, 0]
        l1 = (q.real * d2.imag - q.imag * d2.real) / det
        l2 = (d1.real * q.imag - d1.imag * q.real) / det
        bary = np.stack([1 - l1 - l2, l1, l2], axis=1)
        return t, bary

    def quadrature_points(self):
        """Seven-point rule: (points (nt, 7) complex, weights (nt, 7) in dz measure)."""
        p = self.z[self.triangles]
        pts = TRI_BARY @ p.T  # (7, nt)
        area = np.abs(self.signed_areas())
        return pts.T, area[:, None] * TRI_W[None, :]

    def export_text(self, path):
        """Plain-text listing: node records then triangle records."""
        with open(path, "w") as fh:
            fh.write(f"# nodes {self.n_nodes}\n")
            for i, zz in enumerate(self.z):
                fh.write(f"{i} {zz.real:.17g} {zz.imag:.17g}\n")
            fh.write(f"# triangles {len(self.triangles)}\n")
            for i, t in enumerate(self.triangles):
                fh.write(f"{i} {t[0]} {t[1]} {t[2]}\n")


# ---------------------------------------------------------------------------
# meshing


def _size_field(s: SurfaceModel, h, refinements):
    """Target edge length in the parameter plane at points z."""

    def size(z):
        z = np.asarray(z, dtype=complex)
        scale = np.exp(-0.5 * s.psi(z))
        hm = np.full(z.shape, float(h))
        for ref in refinements:
            d = s.distance_estimate(z, ref.center)
            local = ref.h_core + (ref.grading - 1.0) * d
            local = np.where(d <= ref.radius, local, np.inf)
            hm = np.minimum(hm, local)
        return hm * scale

    return size


def _discretize_circle(radius, size, n_fine=20000, min_pts=12):
    t = np.linspace(0, 2 * math.pi, n_fine, endpoint=False)
    zz = radius * np.exp(1j * t)
    dens = radius / size(zz)  # points per radian
    cum = np.concatenate([[0.0], np.cumsum(dens) * (2 * math.pi / n_fine)])
    n = max(min_pts, int(math.ceil(cum[-1])))
    targets = np.arange(n) * cum[-1] / n
    tt = np.interp(targets, cum, np.concatenate([t, [2 * math.pi]]))
    return radius * np.exp(1j * tt)


def build_mesh(s: SurfaceModel, h: float, refinements=(), required_points=(), node_budget=DEFAULT_NODE_BUDGET,
               min_angle: float = 28.0, max_passes: int = 40) -> TriMesh:
    """Quasi-uniform (optionally graded) triangulation of the parameter domain."""
    if not h > 0:
        raise ValueError("mesh size must be positive")
    diam = max(math.sqrt(s.area), 1.0)
    if h > diam:
        raise ValueError("mesh size larger than the surface")
    refinements = [r if isinstance(r, Refinement) else Refinement(*r) for r in refinements]
    estimate = 2.5 * s.area / (h * h)
    for ref in refinements:
        g = ref.grading - 1.0
        estimate += 2.5 * 2 * math.pi / (g * g) * math.log(h / ref.h_core + 1.0) if ref.h_core < h else 0.0
    if estimate > node_budget:
        raise ValueError(f"node budget exceeded: about {int(estimate)} nodes requested, budget {node_budget}")
    size = _size_field(s, h, refinements)

    verts, segs = [], []
    for comp in s.boundary_components:
        ring = _discretize_circle(comp.radius, size)
        start = len(verts)
        verts.extend(ring)
        n = len(ring)
        segs.extend([(start + i, start + (i + 1) % n) for i in range(n)])
    for zp in required_points:
        zp = complex(zp)
        if np.min(np.abs(np.array(verts) - zp)) > 1e-12:
            verts.append(zp)
    V = np.array(verts)
    data = {"vertices": np.column_stack([V.real, V.imag]), "segments": np.array(segs)}
    if s.r_in > 0:
        data["holes"] = np.array([[0.0, 0.0]])
    a0 = (h * h * math.sqrt(3) / 4) * float(np.exp(-s.psi(np.array([s.r_out + 0j])))[0])
    a0 = min(a0, (h * h * math.sqrt(3) / 4) * float(np.max(np.exp(-s.psi(s.sample_points(8, 8))))))
    out = tr.triangulate(data, f"pq{min_angle}Ya{a0:.12g}")
    for _ in range(max_passes):
        P = out["vertices"][:, 0] + 1j * out["vertices"][:, 1]
        T = out["triangles"]
        if len(P) > node_budget:
            raise ValueError(f"node budget exceeded: {len(P)} nodes")
        zc = P[T].mean(axis=1)
        target = size(zc) ** 2 * math.sqrt(3) / 4
        d1, d2 = P[T[:, 1]] - P[T[:, 0]], P[T[:, 2]] - P[T[:, 0]]
        area = 0.5 * np.abs(d1.real * d2.imag - d1.imag * d2.real)
        if np.all(area <= 1.3 * target):
            break
        data = {"vertices": out["vertices"], "triangles": T, "segments": out["segments"],
                "triangle_max_area": np.minimum(target, area)[:, None]}
        if "holes" in out:
            data["holes"] = out["holes"]
        elif s.r_in > 0:
            data["holes"] = np.array([[0.0, 0.0]])
        out = tr.triangulate(data, f"rpq{min_angle}Ya")
    return _finish_mesh(s, out, h)


def _finish_mesh(s, out, h):
    P = out["vertices"][:, 0] + 1j * out["vertices"][:, 1]
    T = np.asarray(out["triangles"], dtype=np.int64)
    p = P[T]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    det = d1.real * d2.imag - d1.imag * d2.real
    T = np.where((det < 0)[:, None], T[:, [0, 2, 1]], T)
    if np.any(np.abs(det) < 1e-300):
        raise ValueError("degenerate triangle in mesh")
    # boundary edges: edges used by a single triangle, oriented as in their triangle
    e = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    be = e[counts[inv.ravel()] == 1]
    comp = np.full(len(P), -1, dtype=np.int64)
    bn = np.unique(be)
    for c in s.boundary_components:
        on = np.abs(np.abs(P[bn]) - c.radius) < 1e-9 * max(1.0, c.radius)
        comp[bn[on]] = c.index
    # project boundary nodes exactly onto their circle
    for c in s.boundary_components:
        idx = np.flatnonzero(comp == c.index)
        P[idx] = c.radius * P[idx] / np.abs(P[idx])
    if np.any(comp[bn] < 0):
        raise ValueError("boundary edge off the surface boundary")
    return TriMesh(s, P, T, be, comp, h)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class NeumannSystem:
    mesh: TriMesh
    stiffness: sps.csr_matrix
    mass: sps.csr_matrix
    boundary_mass: sps.csr_matrix
    _lu: object = field(default=None, repr=False)

    @property
    def mass_vector(self):
        """Row sums of the mass matrix: integrals of the hat functions."""
        if not hasattr(self, "_mvec"):
            self._mvec = np.asarray(self.mass.sum(axis=1)).ravel()
        return self._mvec

    @property
    def area(self):
        return float(self.mass_vector.sum())

    def factor(self):
        if self._lu is None:
            n = self.mesh.n_nodes
            m = self.mass_vector[:, None]
            A = sps.bmat([[self.stiffness, sps.csr_matrix(m)], [sps.csr_matrix(m.T), None]], format="csc")
            self._lu = spla.splu(A)
        return self._lu

    def mean(self, u):
        return float(self.mass_vector @ u) / self.area


def assemble(m: TriMesh) -> NeumannSystem:
    z, T = m.z, m.triangles
    p = z[T]
    x, y = p.real, p.imag
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    if np.any(det <= 0):
        raise ValueError("inverted element")
    area = 0.5 * det
    # gradients of barycentric functions
    bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / det[:, None]
    by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / det[:, None]
    Ke = area[:, None, None] * (bx[:, :, None] * bx[:, None, :] + by[:, :, None] * by[:, None, :])
    # mass with the conformal weight e^psi, 7-point rule
    qp = (TRI_BARY @ p.T).T
    wq = np.exp(m.surface.psi(qp)) * (area[:, None] * TRI_W[None, :])
    Me = np.einsum("tq,qa,qb->tab", wq, TRI_BARY, TRI_BARY)
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    n = m.n_nodes
    K = sps.csr_matrix((Ke.ravel(), (rows, cols)), shape=(n, n))
    M = sps.csr_matrix((Me.ravel(), (rows, cols)), shape=(n, n))
    # boundary mass: e^{psi/2} |dz| along boundary edges, 3-point Gauss
    gx, gw = np.polynomial.legendre.leggauss(3)
    a, b = z[m.boundary_edges[:, 0]], z[m.boundary_edges[:, 1]]
    L = np.abs(b - a)
    t = 0.5 * (gx + 1)
    zq = a[:, None] + (b - a)[:, None] * t[None, :]
    wb = np.exp(0.5 * m.surface.psi(zq)) * (0.5 * L[:, None] * gw[None, :])
    sh = np.stack([1 - t, t])  # (2, 3)
    Be = np.einsum("eq,aq,bq->eab", wb, sh, sh)
    E = m.boundary_edges
    B = sps.csr_matrix((Be.ravel(), (np.repeat(E, 2, axis=1).ravel(), np.tile(E, (1, 2)).ravel())), shape=(n, n))
    return NeumannSystem(m, K, M, B)


# ---------------------------------------------------------------------------
# loads


def load_weighted(m: TriMesh, f):
    """b_i = int f v_i dv_g for f a vectorized function of z."""
    qp, wq = m.quadrature_points()
    vals = f(qp) * np.exp(m.surface.psi(qp)) * wq
    return _scatter(m, vals)


def load_flat(m: TriMesh, f):
    """b_i = int f v_i dz (flat measure of the parameter plane)."""
    qp, wq = m.quadrature_points()
    return _scatter(m, f(qp) * wq)


def _scatter(m, vals):
    contrib = vals @ TRI_BARY  # (nt, 3)
    b = np.zeros(m.n_nodes)
    np.add.at(b, m.triangles.ravel(), contrib.ravel())
    return b


def load_boundary(m: TriMesh, g):
    """b_i = boundary integral of g v_i ds_g."""
    gx, gw = np.polynomial.legendre.leggauss(4)
    z = m.z
    a, b = z[m.boundary_edges[:, 0]], z[m.boundary_edges[:, 1]]
    t = 0.5 * (gx + 1)
    zq = a[:, None] + (b - a)[:, None] * t[None, :]
    # evaluate on the true circle: project the quadrature point radially
    comp = m.boundary_component[m.boundary_edges[:, 0]]
    rad = np.array([m.surface.boundary_components[c].radius for c in comp])
    zc = rad[:, None] * zq / np.abs(zq)
    w = np.exp(0.5 * m.surface.psi(zc)) * (0.5 * np.abs(b - a)[:, None] * gw[None, :])
    vals = g(zc) * w
    out = np.zeros(m.n_nodes)
    np.add.at(out, m.boundary_edges[:, 0], (vals * (1 - t)).sum(axis=1))
    np.add.at(out, m.boundary_edges[:, 1], (vals * t).sum(axis=1))
    return out


# ---------------------------------------------------------------------------
# fields and solves


@dataclass
class DiscreteField:
    mesh: TriMesh
    values: np.ndarray
    mean_zero: bool = False

    def __call__(self, zq):
        return self.evaluate(zq)

    def evaluate(self, zq):
        zq = np.asarray(zq, dtype=complex)
        shape = zq.shape
        t, bary = self.mesh.locate(zq.ravel())
        v = np.einsum("ij,ij->i", self.values[self.mesh.triangles[t]], bary)
        return v.reshape(shape)

    def gradient(self, zq):
        """Piecewise-constant complex gradient d1 u + i d2 u in the parameter plane."""
        zq = np.asarray(zq, dtype=complex)
        t, _ = self.mesh.locate(zq.ravel())
        T = self.mesh.triangles[t]
        p = self.mesh.z[T]
        x, y = p.real, p.imag
        det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
        bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / det[:, None]
        by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / det[:, None]
        u = self.values[T]
        return ((u * bx).sum(1) + 1j * (u * by).sum(1)).reshape(zq.shape)

    def __add__(self, other):
        return DiscreteField(self.mesh, self.values + _vals(other), False)

    def __sub__(self, other):
        return DiscreteField(self.mesh, self.values - _vals(other), False)

    def __mul__(self, c):
        return DiscreteField(self.mesh, self.values * float(c), self.mean_zero)

    __rmul__ = __mul__

    def export_text(self, path):
        with open(path, "w") as fh:
            for i, (zz, v) in enumerate(zip(self.mesh.z, self.values)):
                fh.write(f"{i} {zz.real:.17g} {zz.imag:.17g} {v:.17g}\n")


def _vals(x):
    return x.values if isinstance(x, DiscreteField) else np.asarray(x, dtype=float)


class IncompatibleData(ValueError):
    pass


def solve_neumann_meanzero(sys: NeumannSystem, load, boundary_load=None, correct_mean: bool = False,
                           compat_tol: float = 1e-8) -> DiscreteField:
    """Mean-zero solution of -Lap u = f, d_nu u = g in weak form.

    ``load`` is the assembled vector int f v_i dv_g (use ``load_weighted``),
    ``boundary_load`` the vector of int g v_i ds.  With ``correct_mean`` the
    constant needed for compatibility is removed from f.
    """
    b = np.array(load, dtype=float)
    if boundary_load is not None:
        b = b + boundary_load
    total = float(b.sum())
    scale = float(np.abs(b).sum()) + 1e-300
    if abs(total) > compat_tol * scale and not correct_mean:
        raise IncompatibleData(f"incompatible Neumann data: net source {total:.3e}")
    n = sys.mesh.n_nodes
    rhs = np.concatenate([b, [0.0]])
    sol = sys.factor().solve(rhs)
    u = sol[:n]
    u -= sys.mean(u)
    return DiscreteField(sys.mesh, u, True)


def neumann_eigenvalues(sys: NeumannSystem, k=4):
    """Smallest Neumann eigenvalues of the generalized problem K u = lam M u."""
    vals = spla.eigsh(sys.stiffness.tocsc(), k=k, M=sys.mass.tocsc(), sigma=-1e-3, which="LM",
                      return_eigenvectors=False)
    return np.sort(vals)
