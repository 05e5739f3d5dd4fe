"""Polar quadrature on disks, half disks and annuli, plus the bubble integrals.

The radial direction is split into geometric panels (refined towards the
origin and around caller supplied break radii) with Gauss-Legendre nodes on
each panel; the angular direction uses the trapezoid rule on full circles and
Gauss-Legendre on half circles.  The error estimate compares a rule with its
doubled counterpart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cutoff import chi, chi_d1

TRUNCATION_RADIUS = 1.0e4


@dataclass(frozen=True)
class QuadratureRule:
    kind: str = "tensor-polar"
    order: int = 24
    refinement_limit: int = 3
    abs_tol: float = 1e-13
    rel_tol: float = 1e-11
    n_theta: int = 48

    def __post_init__(self):
        if self.order < 2:
            raise ValueError("quadrature order must be >= 2")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("quadrature tolerances must be positive")
        if self.refinement_limit < 0 or self.refinement_limit > 8:
            raise ValueError("refinement limit out of range")


DEFAULT_RULE = QuadratureRule()


@dataclass(frozen=True)
class Region:
    kind: str  # disk | half_disk | annulus | half_annulus
    r1: float
    r2: float

    @property
    def half(self):
        return self.kind.startswith("half")


def disk(r):
    return Region("disk", 0.0, float(r))


def half_disk(r):
    return Region("half_disk", 0.0, float(r))


def annulus(r1, r2):
    return Region("annulus", float(r1), float(r2))


def half_annulus(r1, r2):
    return Region("half_annulus", float(r1), float(r2))


@dataclass
class QuadResult:
    value: float
    error: float
    converged: bool

    def __float__(self):
        return float(self.value)


def radial_breaks(r1, r2, scale=None, breaks=(), ratio=2.0):
    """Panel end points on [r1, r2]: geometric towards the origin and around scale."""
    pts = {r1, r2}
    for b in breaks:
        if r1 < b < r2:
            pts.add(float(b))
    base = scale if scale is not None else max(r2, 1e-300) * 1e-3
    lo = max(r1, base * 1e-4) if r1 == 0 else r1
    if r1 == 0:
        pts.add(lo)
    # geometric ladder through the whole range
    x = lo
    while x < r2:
        if x > r1:
            pts.add(x)
        x *= ratio
    return np.array(sorted(pts))


_GL_CACHE = {}


def gauss_legendre(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def polar_nodes(region: Region, order, n_theta, scale=None, breaks=()):
    """Quadrature nodes (complex) and weights (including the Jacobian s)."""
    edges = radial_breaks(region.r1, region.r2, scale, breaks)
    x, w = gauss_legendre(order)
    a, b = edges[:-1, None], edges[1:, None]
    s = (0.5 * (b - a) * x[None, :] + 0.5 * (a + b)).ravel()
    ws = (0.5 * (b - a) * w[None, :]).ravel()
    if region.half:
        tx, tw = gauss_legendre(n_theta)
        t = 0.5 * math.pi * (tx + 1.0)
        wt = 0.5 * math.pi * tw
    else:
        t = (np.arange(n_theta) + 0.5) * (2.0 * math.pi / n_theta)
        wt = np.full(n_theta, 2.0 * math.pi / n_theta)
    Y = s[:, None] * np.exp(1j * t[None, :])
    W = (ws * s)[:, None] * wt[None, :]
    return Y.ravel(), W.ravel()


def integrate_chart(f, region: Region, rule: QuadratureRule = DEFAULT_RULE, scale=None, breaks=()):
    """Integrate f(y) (vectorized over complex y) over a chart region."""
    if region.r2 <= 0 or region.r1 < 0 or region.r1 >= region.r2:
        raise ValueError("invalid region radii")
    prev = None
    err = math.inf  # a single level has no error estimate
    order, nt = rule.order, rule.n_theta
    for level in range(rule.refinement_limit + 1):
        Y, W = polar_nodes(region, order, nt, scale, breaks)
        vals = np.asarray(f(Y), dtype=float)
        if np.any(~np.isfinite(vals)):
            raise FloatingPointError("integrand returned non-finite values")
        val = float(np.dot(vals, W))
        if prev is not None:
            err = abs(val - prev)
            if err <= max(rule.abs_tol, rule.rel_tol * abs(val)):
                return QuadResult(val, err, True)
        prev = val
        order *= 2
        nt *= 2
    return QuadResult(prev, err, False)


def integrate_radial(g, r1, r2, scale=None, breaks=(), order=32):
    """One-dimensional integral of g(s) on [r1, r2] with the same panel ladder."""
    edges = radial_breaks(r1, r2, scale, breaks)
    x, w = gauss_legendre(order)
    a, b = edges[:-1, None], edges[1:, None]
    s = (0.5 * (b - a) * x[None, :] + 0.5 * (a + b)).ravel()
    ws = (0.5 * (b - a) * w[None, :]).ravel()
    return float(np.dot(g(s), ws))


# ---------------------------------------------------------------------------
# closed forms and oracles for the bubble integrals


def int01_formula(r, rho):
    return math.pi - math.pi * rho**2 / r**2 + math.pi * rho**4 / ((r**2 + rho**2) * r**2)


def int02_formula(r, rho):
    return math.pi - math.pi * rho**4 / (r**2 + rho**2) ** 2


def int14_formula(r, rho):
    """Leading terms only; the remainder is O(rho^2)."""
    return math.pi + math.pi * rho**2 * math.log(rho**2) / r**2


INT13_PAPER_HALF = 0.5


def _integrand(kind, rho):
    if kind == "int01":
        return lambda y: rho**2 / (rho**2 + np.abs(y) ** 2) ** 2
    if kind == "int02":
        return lambda y: 2 * rho**4 / (rho**2 + np.abs(y) ** 2) ** 3
    if kind == "int13":
        return lambda y: rho**3 * y.imag / (rho**2 + np.abs(y) ** 2) ** 3
    if kind == "int13_1":
        return lambda y: rho**3 * y.real / (rho**2 + np.abs(y) ** 2) ** 3
    if kind == "int14":
        return lambda y: rho**2 * np.log1p(np.abs(y) ** 2 / rho**2) / (rho**2 + np.abs(y) ** 2) ** 2
    raise ValueError(f"unknown integral kind {kind!r}")


def appendix_integral(kind: str, r: float, rho: float, region: str = "full", rule=DEFAULT_RULE):
    """(formula value or None, quadrature value) for the bubble integrals.

    ``int13`` integrates rho^3 y_2 / (rho^2 + |y|^2)^3 (``int13_1`` the y_1
    version).  For int13 on the half disk the returned formula value is the
    constant stated in the literature (1/2); it does not agree with the
    quadrature, which is authoritative.
    """
    if not (r > 0 and rho > 0):
        raise ValueError("need r > 0 and rho > 0")
    if region not in ("full", "half"):
        raise ValueError("region must be 'full' or 'half'")
    reg = disk(r) if region == "full" else half_disk(r)
    q = integrate_chart(_integrand(kind, rho), reg, rule, scale=rho).value
    factor = 1.0 if region == "full" else 0.5
    if kind == "int01":
        formula = factor * int01_formula(r, rho)
    elif kind == "int02":
        formula = factor * int02_formula(r, rho)
    elif kind == "int14":
        formula = factor * int14_formula(r, rho)
    elif kind == "int13_1":
        formula = 0.0
    else:
        formula = 0.0 if region == "full" else INT13_PAPER_HALF
    return formula, q


def liouville_mass(tau: float = 1.0, rule=DEFAULT_RULE) -> QuadResult:
    """Integral of 8 tau^2 / (tau^2 + |y|^2)^2 over the plane (truncation + exact tail)."""
    R = TRUNCATION_RADIUS * tau
    res = integrate_chart(lambda y: 8 * tau**2 / (tau**2 + np.abs(y) ** 2) ** 2, disk(R), rule, scale=tau)
    tail = 8 * math.pi * tau**2 / (tau**2 + R**2)
    return QuadResult(res.value + tail, res.error, res.converged)


def int14_plane(rule=DEFAULT_RULE) -> QuadResult:
    """Integral of log(1 + |z|^2) / (1 + |z|^2)^2 over the plane (-> pi)."""
    R = TRUNCATION_RADIUS
    res = integrate_chart(lambda y: np.log1p(np.abs(y) ** 2) / (1 + np.abs(y) ** 2) ** 2, disk(R), rule, scale=1.0)
    T = R * R
    tail = math.pi * (1.0 + math.log1p(T)) / (1.0 + T)
    return QuadResult(res.value + tail, res.error, res.converged)


def int13_half_plane(rule=DEFAULT_RULE) -> QuadResult:
    """Integral of z_2 / (1 + |z|^2)^3 over the upper half plane (-> pi / 8)."""
    R = TRUNCATION_RADIUS
    res = integrate_chart(lambda y: y.imag / (1 + np.abs(y) ** 2) ** 3, half_disk(R), rule, scale=1.0)
    # tail: 2 * int_R^inf s^2/(1+s^2)^3 ds <= 2/(3 R^3)
    tail = 2.0 / (3.0 * R**3)
    return QuadResult(res.value + tail, res.error + tail, res.converged)


def int13_half_plane_polar_oracle() -> float:
    """Independent route: int_0^pi sin = 2 times int_0^inf s^2/(1+s^2)^3 ds = pi/16 (Beta function)."""
    from scipy.special import beta

    # int_0^inf s^2 (1+s^2)^-3 ds = B(3/2, 3/2) / 2
    return 2.0 * 0.5 * beta(1.5, 1.5)


# ---------------------------------------------------------------------------
# moments of a bubble against a function


def cutoff_moments(r0: float, half: bool):
    """Chart integrals of the cutoff derivative used by the moment expansions.

    Returns a dict with
      i_cube = int (1/r0) chi'(|y|/r0) / |y|^3 dy
      i_y2   = int (1/r0) chi'(|y|/r0) y_2 / |y|^3 dy   (half plane only, else 0)
      i_log  = int (1/r0) chi'(|y|/r0) log|y| / |y| dy
    """
    ang = math.pi if half else 2 * math.pi
    g = lambda s: chi_d1(s / r0) / r0
    br = (r0, 2 * r0)
    i_cube = ang * integrate_radial(lambda s: g(s) / s**2, r0, 2 * r0, breaks=br)
    i_log = ang * integrate_radial(lambda s: g(s) * np.log(s), r0, 2 * r0, breaks=br)
    i_y2 = 2.0 * integrate_radial(lambda s: g(s) / s, r0, 2 * r0, breaks=br) if half else 0.0
    return {"i_cube": i_cube, "i_y2": i_y2, "i_log": i_log}


def chart_taylor(f, chart, step=1e-3, one_sided=False):
    """Value, gradient and Hessian of f o y^{-1} at 0 by Richardson-extrapolated differences.

    With ``one_sided`` the stencil only uses y_2 >= 0 (boundary charts).
    """

    def g(y):
        return np.asarray(f(chart.inverse(np.asarray(y, dtype=complex))), dtype=float)

    def diffs(h):
        pts = np.array([0, h, -h, 1j * h, -1j * h, h + 1j * h, h - 1j * h, -h + 1j * h, -h - 1j * h])
        v = g(pts)
        f0 = v[0]
        d1 = (v[1] - v[2]) / (2 * h)
        d2 = (v[3] - v[4]) / (2 * h)
        d11 = (v[1] - 2 * f0 + v[2]) / h**2
        d22 = (v[3] - 2 * f0 + v[4]) / h**2
        d12 = (v[5] - v[6] - v[7] + v[8]) / (4 * h * h)
        return f0, np.array([d1, d2]), np.array([[d11, d12], [d12, d22]])

    def diffs_half(h):
        cols = np.array([0, 1, 2, 3])
        pts = np.concatenate([cols * 1j * h, h + cols * 1j * h, -h + cols * 1j * h])
        v = g(pts).reshape(3, 4)
        c, p, m = v
        f0 = c[0]
        d1_row = (p - m) / (2 * h)  # d/dy1 along the rows y2 = 0, h, 2h, 3h
        d1 = d1_row[0]
        d11 = (p[0] - 2 * f0 + m[0]) / h**2
        d2 = (-3 * c[0] + 4 * c[1] - c[2]) / (2 * h)
        d22 = (2 * c[0] - 5 * c[1] + 4 * c[2] - c[3]) / h**2
        d12 = (-3 * d1_row[0] + 4 * d1_row[1] - d1_row[2]) / (2 * h)
        return f0, np.array([d1, d2]), np.array([[d11, d12], [d12, d22]])

    rule = diffs_half if one_sided else diffs
    f0, g1, H1 = rule(step)
    _, g2, H2 = rule(2 * step)
    grad = (4 * g1 - g2) / 3
    hess = (4 * H1 - H2) / 3
    return float(f0), grad, hess


def _kernel(kind, rho, a):
    if kind == "eqspan":
        return lambda r2: np.ones_like(r2)
    if kind == "eqspan_1":
        return lambda r2: 1.0 / (rho**2 + r2)
    if kind == "eqspan_2":
        if a is None:
            raise ValueError("eqspan_2 needs the parameter a")
        return lambda r2: (a * rho**2 - r2) / (rho**2 + r2) ** 2
    raise ValueError(f"unknown moment kind {kind!r}")


def bubble_moment(f, chart, rho: float, kind: str = "eqspan", mode: str = "numeric",
                  r0: float = 0.2, a: float | None = None, rule=DEFAULT_RULE, step: float = 1e-3):
    """Moments  int chi e^{-phi} f e^{U} K dv_g  of a bubble of scale rho centered at the chart center.

    ``f`` is a vectorized function of the parametrization variable.  In the
    chart, e^{-phi} dv_g = dy, so the numeric mode is a chart quadrature.
    """
    from .geometry import rho_weight

    if not rho > 0:
        raise ValueError("rho must be positive")
    if 2 * r0 > chart.radius + 1e-12:
        raise ValueError("chart too small for the cutoff radius")
    if rho >= r0 / 4:
        raise ValueError("rho too large for the cutoff radius")
    K = _kernel(kind, rho, a)
    half = chart.is_boundary
    varrho = rho_weight(chart.center)
    if mode == "numeric":
        def integrand(y):
            r2 = np.abs(y) ** 2
            eu = 8 * rho**2 / (rho**2 + r2) ** 2
            return chi(np.sqrt(r2) / r0) * f(chart.inverse(y)) * eu * K(r2)

        reg = half_disk(2 * r0) if half else disk(2 * r0)
        return integrate_chart(integrand, reg, rule, scale=rho, breaks=(r0,)).value
    if mode != "asymptotic":
        raise ValueError("mode must be 'numeric' or 'asymptotic'")
    f0, grad, hess = chart_taylor(f, chart, step)
    f2 = grad[1] if half else 0.0
    lap = hess[0, 0] + hess[1, 1]
    if kind == "eqspan_1":
        return varrho * f0 / (2 * rho**2) + varrho * f2 / (4 * rho) + varrho * lap / 8
    if kind == "eqspan_2":
        return (varrho * (2 * a - 1) * f0 / (6 * rho**2) + (a - 1) * varrho * f2 / (8 * rho)
                + varrho * (a - 2) * lap / 24)
    m = cutoff_moments(r0, half)

    def remainder(y):
        p2 = f0 + grad[0] * y.real + grad[1] * y.imag + 0.5 * (
            hess[0, 0] * y.real**2 + 2 * hess[0, 1] * y.real * y.imag + hess[1, 1] * y.imag**2)
        r = np.abs(y)
        return chi(r / r0) * (f(chart.inverse(y)) - p2) / r**4

    # the cancellation f - P2 loses all digits near the center; the inner disk
    # contributes O(inner) for the half disk and O(inner^2) for the full disk
    inner = 0.02 * r0
    reg = half_annulus(inner, 2 * r0) if half else annulus(inner, 2 * r0)
    rem = integrate_chart(remainder, reg, rule, breaks=(r0,)).value
    coeff2 = (4 * f0 * m["i_cube"] + 8 * f2 * m["i_y2"] - varrho / 4 * lap * (2 * math.log(rho) + 1)
              - 2 * lap * m["i_log"] + 8 * rem)
    return varrho * f0 + varrho * f2 * rho + coeff2 * rho**2


# ---------------------------------------------------------------------------
# surface integrals with sharp features at a few points


class SurfaceIntegrator:
    """Integrals over a surface: chart polar rules on cores, mesh rule elsewhere.

    Each core is (chart, core radius, feature scale).  The two rules are
    joined by the C^inf partition omega = smooth_step(|y|/core radius), whose
    support (|y| < 2 core radius) must lie in the chart.
    """

    def __init__(self, mesh, cores, rule: QuadratureRule | None = None):
        self.mesh = mesh
        self.cores = list(cores)
        self.rule = rule or QuadratureRule(order=20, refinement_limit=3, rel_tol=1e-10, abs_tol=1e-13)
        for chart, rc, _ in self.cores:
            if 2 * rc > chart.radius + 1e-12:
                raise ValueError("core radius too large for its chart")
        self._qp, self._wq = mesh.quadrature_points()
        dv = np.exp(mesh.surface.psi(self._qp)) * self._wq
        omega = np.zeros(self._qp.shape)
        for chart, rc, _ in self.cores:
            y, ok = chart.local_coords(self._qp, radius=min(chart.radius, 2 * rc * (1 + 1e-9)))
            omega += np.where(ok, _smooth_step(np.abs(np.where(ok, y, 0)) / rc), 0.0)
        self._mesh_weight = (1.0 - omega) * dv
        self._mask = np.abs(1.0 - omega) > 0
        self._seg_z, self._seg_w, arc = _boundary_segments(mesh)
        dv = np.exp(mesh.surface.psi(self._seg_z)) * self._seg_w
        omega = np.zeros(self._seg_z.shape)
        for chart, rc, _ in self.cores:
            y, ok = chart.local_coords(arc, radius=min(chart.radius, 2 * rc * (1 + 1e-9)))
            omega += np.where(ok, _smooth_step(np.abs(np.where(ok, y, 0)) / rc), 0.0)
        self._seg_weight = (1.0 - omega) * dv

    def integrate(self, f):
        """int f dv_g for f a vectorized function of parameter points z."""
        vals = np.zeros(self._qp.shape)
        vals[self._mask] = f(self._qp[self._mask])
        total = float(np.sum(vals * self._mesh_weight))
        keep = self._seg_weight != 0
        total += float(np.sum(f(self._seg_z[keep]) * self._seg_weight[keep]))
        for chart, rc, scale in self.cores:
            reg = half_disk(2 * rc) if chart.is_boundary else disk(2 * rc)

            def g(y, chart=chart, rc=rc):
                return _smooth_step(np.abs(y) / rc) * f(chart.inverse(y)) * np.exp(chart.phi(y))

            total += integrate_chart(g, reg, self.rule, scale=scale, breaks=(rc,)).value
        return total


def _subdivision_template(level):
    """Barycentric vertices (4^level, 3, 3) of the uniform red refinement of a triangle."""
    tris = np.eye(3)[None]
    for _ in range(level):
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        tris = np.concatenate([np.stack(t, axis=1) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))])
    return tris


def graded_triangle_rule(mesh, centers, ratio=0.25, max_level=6, floor=0.0):
    """Seven-point rule on mesh triangles, subdivided near the given parameter points.

    A triangle of diameter d at distance D from the nearest center is split
    uniformly until the pieces are smaller than ratio * max(D, floor).  Returns
    points and weights in the flat dz measure.
    """
    from .fem import TRI_BARY, TRI_W

    p = mesh.z[mesh.triangles]  # (nt, 3)
    diam = np.max(np.abs(p - np.roll(p, 1, axis=1)), axis=1)
    cen = np.asarray(list(centers), dtype=complex)
    if cen.size:
        dist = np.min(np.abs(p.mean(axis=1)[:, None] - cen[None, :]), axis=1) - diam
        dist = np.maximum(dist, max(floor, 0.0) + 1e-3 * diam)
        level = np.ceil(np.log2(np.maximum(diam / (ratio * dist), 1.0))).astype(int)
        level = np.clip(level, 0, max_level)
    else:
        level = np.zeros(len(p), dtype=int)
    pts, wts = [], []
    area = 0.5 * np.abs(((p[:, 1] - p[:, 0]).conj() * (p[:, 2] - p[:, 0])).imag)
    for L in np.unique(level):
        sel = level == L
        tmpl = _subdivision_template(int(L))  # (ns, 3, 3)
        bary = np.einsum("qv,svk->sqk", TRI_BARY, tmpl)  # (ns, 7, 3)
        pts.append(np.einsum("sqk,tk->tsq", bary, p[sel]).reshape(int(sel.sum()), -1))
        wts.append((area[sel, None] * np.tile(TRI_W, len(tmpl))[None, :]) / len(tmpl))
    return (np.concatenate([x.ravel() for x in pts]), np.concatenate([x.ravel() for x in wts]))


def _boundary_segments(mesh, n_t=4, n_r=3):
    """Nodes and signed weights for the slivers between boundary chords and their circular arcs.

    Chords of an outer circle miss the sliver (weight +), chords of an inner
    circle cover part of the hole (weight -).  The third array holds the
    radial projections of the nodes onto the circle; partitions of unity are
    evaluated there because a sliver node may lie outside the surface.
    """
    comps = mesh.surface.boundary_components
    if len(mesh.boundary_edges) == 0:
        return np.zeros(0, complex), np.zeros(0), np.zeros(0, complex)
    a = mesh.z[mesh.boundary_edges[:, 0]]
    b = mesh.z[mesh.boundary_edges[:, 1]]
    comp = mesh.boundary_component[mesh.boundary_edges[:, 0]]
    R = np.array([comps[c].radius for c in comp])
    sign = np.array([1.0 if comps[c].outward > 0 else -1.0 for c in comp])
    ta = np.angle(a)
    dt = np.angle(b / a)
    mid = ta + 0.5 * dt
    half = 0.5 * np.abs(dt)
    xt, wt = gauss_legendre(n_t)
    xr, wr = gauss_legendre(n_r)
    th = mid[:, None] + 0.5 * dt[:, None] * xt[None, :]  # (ne, n_t)
    # chord in polar form: r_c(theta) = R cos(half) / cos(theta - mid)
    rc = R[:, None] * np.cos(half)[:, None] / np.cos(th - mid[:, None])
    lo, hi = rc, R[:, None]
    r = 0.5 * (lo + hi)[:, :, None] + 0.5 * (hi - lo)[:, :, None] * xr[None, None, :]
    w = (0.5 * np.abs(dt))[:, None, None] * wt[None, :, None] * (0.5 * (hi - lo))[:, :, None] * wr[None, None, :] * r
    z = r * np.exp(1j * th[:, :, None])
    on_arc = R[:, None, None] * np.exp(1j * th[:, :, None]) * np.ones_like(r)
    return z.ravel(), (w * sign[:, None, None]).ravel(), on_arc.ravel()


def _smooth_step(s):
    from .cutoff import smooth_step

    return smooth_step(s)
