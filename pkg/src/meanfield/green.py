"""Neumann Green function, its regular part and the Robin function.

Three backends share one interface:

* ``disk-images``: method of images on the flat unit disk (closed form);
* ``cylinder-series``: image sums in the axial direction combined with the
  periodic logarithm in the angular direction, on the flat cylinder;
* ``fem``: the regular part solved from a smooth Neumann problem on a mesh.

The singular part is Gamma(x) = -(4/varrho) chi(|y|/rbar) log|y| in the
refined chart at the source, and H = G - Gamma.  ``regular`` converts H to
any other cutoff scale; the Robin value does not depend on the cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .cutoff import chi, radial_cutoff
from .geometry import (CylinderSurface, DiskSurface, SurfaceModel, SurfacePoint, refined_chart,
                       rho_weight)
from .quadrature import QuadratureRule, disk, half_disk, integrate_chart, integrate_radial

BACKENDS = ("disk-images", "cylinder-series", "fem")


class SingularEvaluation(ValueError):
    pass


# ---------------------------------------------------------------------------
# closed-form oracles


def green_oracle_disk(x, xi, with_gradient=False):
    """Neumann Green function of the unit disk (zero mean, background -1/pi).

    ``x`` and ``xi`` are complex.  With ``with_gradient`` also returns the
    complex gradient with respect to the source, d_xi1 G + i d_xi2 G.
    """
    x = np.asarray(x, dtype=complex)
    xi = complex(xi)
    if np.any(np.abs(x - xi) == 0):
        raise SingularEvaluation("x coincides with the source")
    val = (-(np.log(np.abs(x - xi)) + np.log(np.abs(1 - np.conj(xi) * x))) / (2 * math.pi)
           + (np.abs(x) ** 2 + abs(xi) ** 2) / (4 * math.pi) - 3 / (8 * math.pi))
    if not with_gradient:
        return val
    grad = (1 / np.conj(x - xi) + x / (1 - np.conj(xi) * x)) / (2 * math.pi) + xi / (2 * math.pi)
    return val, grad


def robin_oracle_disk(xi):
    """Robin function of the unit disk in the parameter plane (psi = 0)."""
    r2 = abs(complex(xi)) ** 2
    if abs(r2 - 1) < 1e-14:
        return 1 / (8 * math.pi)
    return -math.log(1 - r2) / (2 * math.pi) + r2 / (2 * math.pi) - 3 / (8 * math.pi)


def _wrap(t):
    return np.angle(np.exp(1j * t))


def _cyl_terms(s, sp_, dth, L, tol=1e-12, skip=((0, 0),)):
    """Image sum  sum_{k,j} log|1 - exp(-(d_k + 2jL) + i dth)|  without the (k, j) terms in skip."""
    d = [np.abs(s - sp_), s + sp_, 2 * L - s - sp_, 2 * L - np.abs(s - sp_)]
    total = np.zeros(np.broadcast(s, sp_, dth).shape)
    jmax = int(math.ceil(-math.log(tol) / (2 * L))) + 1
    e = np.exp(1j * dth)
    for k, dk in enumerate(d):
        for j in range(jmax + 1):
            if (k, j) in skip:
                continue
            D = dk + 2 * j * L
            total = total + np.log(np.abs(1 - np.exp(-D) * e))
    return total


def green_oracle_cylinder(theta, s, theta_src, s_src, L):
    """Neumann Green function of the flat cylinder [0, L] x S^1, natural coordinates."""
    parts = _cylinder_parts(theta, s, theta_src, s_src, L)
    return parts[0] - parts[1] * np.log(np.abs(parts[2]))


def _cylinder_parts(theta, s, theta_src, s_src, L):
    """(smooth part, coefficient, w) with G = smooth - coefficient * log|w|.

    w = (s - s') + i (theta - theta') with the angle difference wrapped; the
    coefficient is 1/(2 pi) for interior sources and 1/pi on the boundary.
    """
    theta = np.asarray(theta, dtype=float)
    s = np.asarray(s, dtype=float)
    dth = _wrap(theta - theta_src)
    g0 = -np.maximum(s, s_src) + (s**2 + s_src**2) / (2 * L) + L / 3
    ds = np.abs(s - s_src)
    w = (s - s_src) + 1j * dth
    with np.errstate(divide="ignore", invalid="ignore"):
        # log|1 - e^{-|ds| + i dth}| = log|w| + log|(1 - e^{-v})/v| with v = |ds| - i dth
        v = ds - 1j * dth
        ratio = np.where(np.abs(v) > 0, -np.expm1(-v) / np.where(np.abs(v) > 0, v, 1), 1.0)
    sing = np.log(np.abs(ratio))
    coef = 1 / (2 * math.pi)
    on_bdry = (s_src == 0.0) or (s_src == L)
    if on_bdry:
        # the reflected image merges with the source: it contributes the same
        # log|w| once more, plus its own smooth ratio
        idx = 1 if s_src == 0.0 else 2
        d_img = [None, s + s_src, 2 * L - s - s_src][idx]
        vi = d_img - 1j * dth
        with np.errstate(divide="ignore", invalid="ignore"):
            ri = np.where(np.abs(vi) > 0, -np.expm1(-vi) / np.where(np.abs(vi) > 0, vi, 1), 1.0)
        rest = _cyl_terms(s, s_src, dth, L, skip=((0, 0), (idx, 0))) + np.log(np.abs(ri))
        coef = 1 / math.pi
    else:
        rest = _cyl_terms(s, s_src, dth, L)
    smooth = g0 / (2 * math.pi) - (sing + rest) / (2 * math.pi)
    return smooth, coef, w


# ---------------------------------------------------------------------------
# the Green function object


@dataclass
class GreenFunction:
    surface: SurfaceModel
    backend: str
    h: float = 0.05
    cutoff_fraction: float = 0.5
    mesh: fem.TriMesh | None = None
    chart_rotation: float = 0.0  # rotation of the base charts the refined charts are built from
    _charts: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)
    _system: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "disk-images" and not isinstance(self.surface, DiskSurface):
            raise ValueError("disk-images backend needs the disk")
        if self.backend == "cylinder-series" and not isinstance(self.surface, CylinderSurface):
            raise ValueError("cylinder-series backend needs the cylinder")
        if not 0 < self.cutoff_fraction <= 0.5:
            raise ValueError("cutoff fraction must lie in (0, 1/2]")

    # -- charts and cutoffs
    def chart(self, xi: SurfacePoint):
        if xi not in self._charts:
            base = self.surface.base_chart(xi, self.chart_rotation) if self.chart_rotation else None
            self._charts[xi] = refined_chart(self.surface, xi, base=base)
        return self._charts[xi]

    def cutoff_radius(self, xi):
        """rbar: Gamma uses chi(|y|/rbar), supported in |y| < 2 rbar <= chart radius."""
        return self.cutoff_fraction * self.chart(xi).radius

    def system(self):
        if self._system is None:
            if self.mesh is None:
                self.mesh = fem.build_mesh(self.surface, self.h)
            self._system = fem.assemble(self.mesh)
        return self._system

    # -- singular part
    def gamma(self, z, xi, scale=None):
        c = self.chart(xi)
        rb = self.cutoff_radius(xi) if scale is None else scale
        y, ok = c.local_coords(z)
        r = np.where(ok, np.abs(y), 1.0)
        with np.errstate(divide="ignore"):
            val = -(4 / rho_weight(xi)) * chi(r / rb) * np.log(r)
        return np.where(ok, val, 0.0)

    # -- oracle parts: G = smooth - (4/varrho) log|w|
    def _oracle_parts(self, z, xi):
        s = self.surface
        z = np.asarray(z, dtype=complex)
        zx = s.to_param(xi)
        k = 4 / rho_weight(xi)
        if self.backend == "disk-images":
            if xi.is_boundary:
                smooth = (np.abs(z) ** 2 + 1) / (4 * math.pi) - 3 / (8 * math.pi)
            else:
                smooth = (-np.log(np.abs(1 - np.conj(zx) * z)) / (2 * math.pi)
                          + (np.abs(z) ** 2 + abs(zx) ** 2) / (4 * math.pi) - 3 / (8 * math.pi))
            return smooth, z - zx, k
        L = s.L
        lz = np.log(z)
        s_src = math.log(abs(zx))
        if xi.is_boundary:
            # pin boundary sources exactly on their circle
            s_src = 0.0 if s.component_of(zx).index == 0 else L
        sm, _, w = _cylinder_parts(lz.imag, lz.real, math.atan2(zx.imag, zx.real), s_src, L)
        return sm, w, k

    def _log_y_over_w(self, z, xi, y, w):
        """log|y/w|, continuous at the source."""
        c = self.chart(xi)
        zx = self.surface.to_param(xi)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(np.abs(y)) - np.log(np.abs(w))
        small = np.abs(w) < 1e-9
        if np.any(small):
            dy = abs(complex(c.transform.deriv(np.array([zx]))[0]))
            dw = 1.0 if self.backend == "disk-images" else 1.0 / abs(zx)
            out = np.where(small, math.log(dy / dw), out)
        return out

    # -- public evaluation
    def G(self, z, xi):
        """G(x, xi) at parameter points z (array)."""
        z = np.asarray(z, dtype=complex)
        if self.backend == "fem":
            return self.regular(z, xi) + self.gamma(z, xi)
        sm, w, k = self._oracle_parts(z, xi)
        if np.any(np.abs(w) == 0):
            raise SingularEvaluation("x coincides with the source")
        return sm - k * np.log(np.abs(w))

    def regular(self, z, xi, scale=None):
        """H with the cutoff chi(|y|/scale) (default rbar)."""
        z = np.asarray(z, dtype=complex)
        rb = self.cutoff_radius(xi)
        sc = rb if scale is None else scale
        if 2 * sc > self.chart(xi).radius + 1e-12:
            raise ValueError("cutoff scale too large for the chart")
        k = 4 / rho_weight(xi)
        c = self.chart(xi)
        y, ok = c.local_coords(z)
        ya = np.where(ok, np.abs(y), 1.0)
        ya = np.where(ya > 0, ya, 1.0)  # chi = 1 near the source: the corrections vanish there
        if self.backend == "fem":
            base = self._fem_field(xi)(z)
            with np.errstate(divide="ignore"):
                corr = k * (chi(ya / sc) - chi(ya / rb)) * np.log(ya)
            return base + np.where(ok, corr, 0.0)
        sm, w, _ = self._oracle_parts(z, xi)
        yv = np.where(ok, y, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            far = sm - k * np.log(np.abs(w))
            near = sm + k * ((chi(ya / sc) - 1.0) * np.log(ya) + self._log_y_over_w(z, xi, yv, w))
        return np.where(ok, near, far)

    def robin(self, xi):
        """R(xi) = H(xi, xi) in the refined chart at xi."""
        zx = self.surface.to_param(xi)
        return float(self.regular(np.array([zx]), xi)[0])

    # -- FEM regular part
    def regular_part_fem(self, xi) -> fem.DiscreteField:
        return self._fem_field(xi)

    def _fem_field(self, xi):
        key = ("H", xi, self.cutoff_fraction)
        if key in self._cache:
            return self._cache[key]
        sysm = self.system()
        m = sysm.mesh
        c = self.chart(xi)
        rb = self.cutoff_radius(xi)
        k = 4 / rho_weight(xi)

        def load(zq):
            y, ok = c.local_coords(zq, radius=min(c.radius, 2.0 * rb * (1 + 1e-9)))
            ys = np.where(ok, y, 1.0)
            r = np.abs(ys)
            c0, c1, lap = radial_cutoff(ys, rb)
            A = lap * np.log(r) + 2 * c1 / r
            jac = c.jacobian(zq)
            return np.where(ok, -k * A * jac, 0.0)

        b = fem.load_flat(m, load)
        # the uniform background -1/|Sigma| is supplied by the mean correction
        u = fem.solve_neumann_meanzero(sysm, b, correct_mean=True)
        integral = k * chart_log_integral(c, rb)
        u = fem.DiscreteField(m, u.values + integral / sysm.area, False)
        self._cache[key] = u
        return u

    # -- source gradients
    def grad_source(self, z, xi, step=1e-4):
        """Gradient of G(x, .) at xi in refined-chart coordinates at xi.

        Interior sources give the complex gradient d1 + i d2; boundary sources
        the real arc-length derivative.
        """
        z = np.asarray(z, dtype=complex)
        if self.backend == "disk-images" and not xi.is_boundary:
            return green_oracle_disk(z, self.surface.to_param(xi), with_gradient=True)[1]
        return self._fd_source(lambda p: self.G(z, p), xi, step)

    def _fd_source(self, fun, xi, step):
        c = self.chart(xi)
        if xi.is_boundary:
            comp = self.surface.boundary_components[int(xi.chart_id[len("boundary"):])]
            t0 = xi.coords[0]
            pp = self.surface.boundary_point(comp.index, t0 + step)
            pm = self.surface.boundary_point(comp.index, t0 - step)
            return (fun(pp) - fun(pm)) / (2 * step)
        d1 = (fun(c.point_at(step)) - fun(c.point_at(-step))) / (2 * step)
        d2 = (fun(c.point_at(1j * step)) - fun(c.point_at(-1j * step))) / (2 * step)
        return d1 + 1j * d2

    # -- integrals against G
    def integrate_against(self, xi, f, g=None, rule=None):
        """int G(., xi) f dv_g + boundary int G(., xi) g ds_g  (f, g functions of z)."""
        m = self.system().mesh
        qp, wq = m.quadrature_points()
        Hq = self.regular(qp, xi)
        total = float(np.sum(Hq * f(qp) * np.exp(self.surface.psi(qp)) * wq))
        c = self.chart(xi)
        rb = self.cutoff_radius(xi)
        k = 4 / rho_weight(xi)
        rule = rule or QuadratureRule(order=16, refinement_limit=3, rel_tol=1e-9, abs_tol=1e-12)
        region = half_disk(2 * rb) if c.is_boundary else disk(2 * rb)

        def gam(y):
            zz = c.inverse(y)
            return -k * chi(np.abs(y) / rb) * np.log(np.abs(y)) * f(zz) * np.exp(c.phi(y))

        total += integrate_chart(gam, region, rule, scale=rb * 1e-2, breaks=(rb,)).value
        if g is not None:
            total += boundary_integral(self, xi, g)
        return total

    def table(self, pairs):
        """Records (x, xi, G, H) for export."""
        out = []
        for zx, xi in pairs:
            zx = np.array([complex(zx)])
            out.append((complex(zx[0]), xi, float(self.G(zx, xi)[0]), float(self.regular(zx, xi)[0])))
        return out


def chart_log_integral(c, rb):
    """int chi(|y|/rb) log|y| e^phi dy over the chart (half) disk."""
    region = half_disk(2 * rb) if c.is_boundary else disk(2 * rb)
    rule = QuadratureRule(order=16, refinement_limit=4, rel_tol=1e-12, abs_tol=1e-14)
    return integrate_chart(lambda y: chi(np.abs(y) / rb) * np.log(np.abs(y)) * np.exp(c.phi(y)),
                           region, rule, scale=rb * 1e-2, breaks=(rb,)).value


def boundary_integral(gf: GreenFunction, xi, g, n_per_comp=2048):
    """Boundary integral of G(., xi) g ds_g, with the log singularity handled in the chart."""
    s = gf.surface
    total = 0.0
    c = gf.chart(xi)
    rb = gf.cutoff_radius(xi)
    k = 4 / rho_weight(xi)
    for comp in s.boundary_components:
        # regular part: periodic trapezoid rule in arc length
        t = (np.arange(n_per_comp) + 0.5) * comp.length / n_per_comp
        zb = comp.param(t)
        Hb = gf.regular(zb, xi)
        total += float(np.sum(Hb * g(zb))) * comp.length / n_per_comp
    if xi.is_boundary:
        # Gamma lives on the segment -2 rb < y1 < 2 rb of the chart boundary line
        def f1(u):
            out = np.zeros_like(u)
            for sign in (1.0, -1.0):
                y = sign * u + 0j
                zz = c.inverse(y)
                out += -k * chi(u / rb) * np.log(u) * g(zz) * np.exp(0.5 * c.phi(y))
            return out

        total += integrate_radial(f1, 0.0, 2 * rb, scale=rb * 1e-2, breaks=(rb,))
    return total


def green_eval(gf: GreenFunction, x: SurfacePoint, xi: SurfacePoint) -> float:
    s = gf.surface
    zx, zs = s.to_param(x), s.to_param(xi)
    if abs(zx - zs) < 1e-14:
        raise SingularEvaluation("x coincides with the source")
    return float(gf.G(np.array([zx]), xi)[0])


def robin(gf: GreenFunction, xi: SurfacePoint) -> float:
    return gf.robin(xi)
