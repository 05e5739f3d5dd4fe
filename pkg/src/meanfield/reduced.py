"""The finite-dimensional reduction: scaling functions, the Kirchhoff-Routh
function F_{k,m}, the coefficients A1, A2, B and the energy expansion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .cutoff import chi, smooth_step
from .geometry import SurfacePoint, kernel_count, rho_weight
from .green import GreenFunction, green_oracle_disk
from .quadrature import (QuadratureRule, _boundary_segments, annulus, chart_taylor, graded_triangle_rule, half_annulus,
                         integrate_chart)

LAMBDA_WINDOW = 10.0
TAYLOR_STEP = 2e-3
SMIN_FRACTION = 1e-2
RING_RULE = QuadratureRule(order=24, refinement_limit=4, rel_tol=1e-12, abs_tol=1e-14)


@dataclass
class Configuration:
    """m points on one surface, the first k interior, with a Green function backend."""

    green: GreenFunction
    points: tuple
    k: int

    def __post_init__(self):
        self.points = tuple(self.points)
        validate_points(self.green, self.points, self.k)

    @property
    def surface(self):
        return self.green.surface

    @property
    def m(self):
        return len(self.points)

    def with_points(self, points):
        return Configuration(self.green, points, self.k)


def validate_points(green, points, k, margin=0.0):
    m = len(points)
    if m == 0 or not 0 <= k <= m:
        raise ValueError("need 0 <= k <= m and m >= 1")
    for i, p in enumerate(points):
        if p.is_boundary != (i >= k):
            raise ValueError("the first k points must be interior, the rest on the boundary")
    s = green.surface
    for i in range(m):
        for j in range(i + 1, m):
            d = float(s.distance_estimate(s.to_param(points[i]), s.to_param(points[j])))
            if d <= margin or d < 1e-9:
                raise ValueError(f"points {i} and {j} lie in the thick diagonal (distance {d:.3g})")


def check_separation(cfg, r0):
    """The disks U_{2 r0}(xi_i) must fit in their charts and be pairwise disjoint."""
    g = cfg.green
    for i, p in enumerate(cfg.points):
        c = g.chart(p)
        if 2 * r0 > c.radius + 1e-12:
            raise ValueError(f"r0 = {r0} too large for the chart at point {i} (radius {c.radius:.4f})")
        for j, q in enumerate(cfg.points):
            if j != i:
                y, ok = c.local_coords(np.array([cfg.surface.to_param(q)]), radius=c.radius)
                if bool(ok[0]) and abs(y[0]) < 4 * r0:
                    raise ValueError(f"points {i} and {j} closer than 4 r0 in the chart")


def lam_km(cfg):
    return 4 * math.pi * (cfg.m + cfg.k)


def varrho(cfg):
    return np.array([rho_weight(p) for p in cfg.points])


# ---------------------------------------------------------------------------
# tau_i


def log_tau_field(cfg, i):
    """log tau_i as a function of chart coordinates y at xi_i."""
    g = cfg.green
    s = cfg.surface
    c = g.chart(cfg.points[i])
    w = varrho(cfg)

    def f(y):
        z = c.inverse(np.asarray(y, dtype=complex))
        out = np.log(s.V(z)) + w[i] * g.regular(z, cfg.points[i])
        for l, q in enumerate(cfg.points):
            if l != i:
                out = out + w[l] * g.G(z, q)
        return out

    return f


@dataclass
class TauValue:
    value: float
    log_grad: np.ndarray  # chart gradient (d1, d2) of log tau at xi
    laplacian: float  # Laplace-Beltrami of tau at xi
    laplacian_fd: float | None = None  # second differences (interior points only)


def tau(cfg, i, step=1e-4, with_fd=False):
    """tau_i(xi_i), the chart gradient of log tau_i at xi_i and Lap_g tau_i(xi_i).

    The Laplacian uses Lap_g log tau = Lap_g log V + lambda_km / |Sigma| near
    xi_i, so Lap_g tau = tau (Lap_g log V + lambda_km/|Sigma| + |grad log tau|^2).
    """
    f = log_tau_field(cfg, i)
    p = cfg.points[i]
    s = cfg.surface
    v0 = float(f(np.array([0j]))[0])
    h = step
    d1 = float((f(np.array([h + 0j])) - f(np.array([-h + 0j])))[0] / (2 * h))
    if p.is_boundary:
        # G and H have zero normal derivative on the boundary, and phi(0) = 0
        d2 = -float(s.normal_derivative_log_V(s.to_param(p)))
    else:
        d2 = float((f(np.array([1j * h])) - f(np.array([-1j * h])))[0] / (2 * h))
    zx = np.array([s.to_param(p)])
    t0 = math.exp(v0)
    lap = t0 * (float(s.laplace_log_V(zx)[0]) + lam_km(cfg) / s.area + d1 * d1 + d2 * d2)
    lap_fd = None
    if with_fd and not p.is_boundary:
        c = cfg.green.chart(p)
        tf = lambda z: np.exp(f(c.forward(z)))
        _, _, H = chart_taylor(tf, c, 1e-3)
        lap_fd = float(H[0, 0] + H[1, 1])
    return TauValue(t0, np.array([d1, d2]), lap, lap_fd)


# ---------------------------------------------------------------------------
# F_{k,m}


def f_value(cfg, points=None):
    pts = cfg.points if points is None else tuple(points)
    g = cfg.green
    s = cfg.surface
    w = np.array([rho_weight(p) for p in pts])
    total = 0.0
    for i, p in enumerate(pts):
        zi = np.array([s.to_param(p)])
        total += w[i] ** 2 * g.robin(p) + 2 * w[i] * math.log(float(s.V(zi)[0]))
        for j, q in enumerate(pts):
            if j != i:
                total += w[i] * w[j] * float(g.G(zi, q)[0])
    return total


def moved_point(cfg, i, direction, step):
    """xi_i displaced by step along a chart direction (0: y1, 1: y2) or arc length."""
    p = cfg.points[i]
    s = cfg.surface
    if p.is_boundary:
        comp = int(p.chart_id[len("boundary"):])
        return s.boundary_point(comp, p.coords[0] + step)
    c = cfg.green.chart(p)
    return c.point_at(step if direction == 0 else 1j * step)


def _replace(points, i, q):
    out = list(points)
    out[i] = q
    return tuple(out)


def gradient_directions(cfg):
    return [(i, j) for i, p in enumerate(cfg.points) for j in range(kernel_count(p))]


def f_km(cfg, step=1e-4):
    """Value and gradient of F_{k,m}: two chart components per interior point, one arc-length
    component per boundary point, by central differences (Richardson over step and 2 step)."""
    val = f_value(cfg)

    def diff(i, j, h):
        fp = f_value(cfg, _replace(cfg.points, i, moved_point(cfg, i, j, h)))
        fm = f_value(cfg, _replace(cfg.points, i, moved_point(cfg, i, j, -h)))
        return (fp - fm) / (2 * h)

    grad = [(4 * diff(i, j, step) - diff(i, j, 2 * step)) / 3 for i, j in gradient_directions(cfg)]
    return val, np.array(grad)


def f_km_gradient_oracle(cfg):
    """Analytic gradient of F_{k,m} on the disk with interior points (chart components)."""
    g = cfg.green
    s = cfg.surface
    if g.backend != "disk-images" or cfg.k != cfg.m:
        raise ValueError("the analytic gradient needs the disk oracle and interior points")
    w = varrho(cfg)
    out = []
    for i, p in enumerate(cfg.points):
        zi = s.to_param(p)
        gz = w[i] ** 2 * (zi / (math.pi * (1 - abs(zi) ** 2)) + zi / math.pi)
        gz += 2 * w[i] * complex(s.grad_log_V(np.array([zi]))[0])
        for l, q in enumerate(cfg.points):
            if l != i:
                zl = np.array([s.to_param(q)])
                gz += 2 * w[i] * w[l] * complex(green_oracle_disk(zl, zi, with_gradient=True)[1][0])
        d = complex(g.chart(p).transform.deriv(np.array([zi]))[0])
        gy = gz / np.conj(d)
        out += [gy.real, gy.imag]
    return np.array(out)


# ---------------------------------------------------------------------------
# coefficients


@dataclass
class ReducedCoefficients:
    F: float
    gradF: np.ndarray
    A1: float
    A2: float
    B: float
    r: tuple
    B_at_r: tuple
    r_spread: float
    taus: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def case(self):
        # zero is judged relative to sum varrho_i tau_i, the size of each coefficient's summands
        w = self.diagnostics.get("varrho", ())
        scale = sum(wi * t.value for wi, t in zip(w, self.taus))
        return sign_case(self.A1, self.A2, self.B, tol=SIGN_RTOL * scale if scale > 0 else 1e-10)


SIGN_RTOL = 1e-6


def sign_case(A1, A2, B, tol=1e-10):
    """'a1' (A1 = 0, A2 != 0), 'a2' (A1 = A2 = 0, B != 0) or 'none'; zero means |.| <= tol."""
    if abs(A1) <= tol and abs(A2) > tol:
        return "a1"
    if abs(A1) <= tol and abs(A2) <= tol and abs(B) > tol:
        return "a2"
    return "none"


def _local_data(cfg, i, t):
    """(varrho, tau, K, k_g, d_nu log V, is_boundary) at xi_i."""
    s = cfg.surface
    p = cfg.points[i]
    z = np.array([s.to_param(p)])
    K = float(s.gauss_curvature(z)[0])
    if p.is_boundary:
        kg = s.geodesic_curvature(p)
        dn = s.normal_derivative_log_V(z[0])
    else:
        kg = dn = 0.0
    return rho_weight(p), t, K, kg, dn, p.is_boundary


def _point_data(cfg, taus):
    return [_local_data(cfg, i, t) for i, t in enumerate(taus)]


def a1_a2(cfg, taus):
    A1 = 0.0
    A2 = 0.0
    for w, t, K, kg, dn, bd in _point_data(cfg, taus):
        A2 += 0.5 * w * (t.laplacian - 2 * K * t.value)
        if bd:
            A1 -= w * math.sqrt(t.value) * (dn + 2 * kg)
            A2 += 2 * w * kg * (dn + kg) * t.value
    return A1, A2


def singular_integral(cfg, r, r0, mesh=None, integrator=None):
    """8 int over the surface minus the chart disks |y| < r of V e^{sum varrho G}."""
    g = cfg.green
    s = cfg.surface
    w = varrho(cfg)
    pts = cfg.points

    def dens(z):
        out = np.log(s.V(z))
        for l, q in enumerate(pts):
            out = out + w[l] * g.G(z, q)
        return np.exp(out)

    if mesh is None:
        mesh = g.system().mesh if g.backend == "fem" else fem.build_mesh(s, 0.05)
    charts = [g.chart(p) for p in pts]
    for c in charts:
        if 2 * r0 > c.radius + 1e-12:
            raise ValueError("r0 too large for a chart")
    # the mesh part carries (1 - omega) V e^{sum varrho G}, of size r0^{-4} next to the disks
    centers = [s.to_param(p) for p in pts]
    speed = max(abs(complex(c.transform.deriv(np.array([z]))[0])) for c, z in zip(charts, centers))
    qp, wq = graded_triangle_rule(mesh, centers, ratio=0.1, floor=0.5 * r0 / speed)
    sz, sw, arc = _boundary_segments(mesh, n_t=12, n_r=12)
    total = 0.0
    # mesh triangles along an inner circle and sliver nodes reach outside the surface; the
    # partition is evaluated at their radial projections so both pieces see the same omega
    for zz, ww, zo in ((qp, wq, s.clamp(qp)), (sz, sw, arc)):
        om = np.zeros(zz.shape)
        for c in charts:
            y, ok = c.local_coords(zo, radius=min(c.radius, 2 * r0 * (1 + 1e-9)))
            om += np.where(ok, smooth_step(np.abs(np.where(ok, y, 0)) / r0), 0.0)
        keep = om < 1
        total += float(np.sum(dens(zz[keep]) * (1 - om[keep]) * np.exp(s.psi(zz[keep])) * ww[keep]))
    for c in charts:
        reg = half_annulus(r, 2 * r0) if c.is_boundary else annulus(r, 2 * r0)

        def f(y, c=c):
            return smooth_step(np.abs(y) / r0) * dens(c.inverse(y)) * np.exp(c.phi(y))

        total += integrate_chart(f, reg, RING_RULE, scale=r, breaks=(r0,)).value
    return 8 * total


def inner_remainder(cfg, i, r, r0, tau_value=None):
    """8 int_{|y|<r} (f - P2 f)/|y|^4 dy with f = tau_i e^{phi} in the chart at xi_i.

    Below smin = SMIN_FRACTION r0 rounding in f - P2 f (amplified by |y|^{-4})
    dominates; there the radial density is replaced by a two-term fit, which
    leaves an O(smin^3) error.
    """
    c = cfg.green.chart(cfg.points[i])
    lt = log_tau_field(cfg, i)

    def f_of_z(z):
        y = c.forward(z)
        return np.exp(lt(y) + c.phi(y))

    f0, gr, H = chart_taylor(f_of_z, c, TAYLOR_STEP, one_sided=c.is_boundary)
    # only the trace of H survives the angular integration; take it from the tau identity
    # (flat Laplacian of tau e^phi at 0) instead of second differences
    t = tau(cfg, i) if tau_value is None else tau_value
    _, _, K, kg, dn, bd = _local_data(cfg, i, t)
    lap_f = t.laplacian - 2 * K * t.value + (4 * kg * t.value * (dn + kg) if bd else 0.0)
    shift = 0.5 * (lap_f - H[0, 0] - H[1, 1])
    H = H + shift * np.eye(2)
    if c.is_boundary:
        # H and G have zero normal derivative on the boundary and d_{y2} phi(0) = -2 k_g, so the
        # inward derivative is exact; the one-sided difference would be amplified by 1/smin below
        s = cfg.surface
        p = cfg.points[i]
        zx = s.to_param(p)
        gr = np.array([gr[0], -f0 * (s.normal_derivative_log_V(zx) + 2 * s.geodesic_curvature(p))])

    def integrand(y):
        p2 = f0 + gr[0] * y.real + gr[1] * y.imag + 0.5 * (H[0, 0] * y.real**2 + 2 * H[0, 1] * y.real * y.imag
                                                          + H[1, 1] * y.imag**2)
        return (np.exp(lt(y) + c.phi(y)) - p2) / np.abs(y) ** 4

    smin = SMIN_FRACTION * r0
    if r <= 2 * smin:
        raise ValueError("regularization radius below the rounding floor")
    reg = half_annulus(smin, r) if c.is_boundary else annulus(smin, r)
    val = integrate_chart(integrand, reg, RING_RULE, scale=smin).value
    # radial density D(s) = s int integrand(s e^{it}) dt is a + b s (boundary) or a s + b s^2
    # (interior) near 0; fit it at smin and 2 smin and integrate the fit over (0, smin)
    n = 64
    if c.is_boundary:
        x, w = np.polynomial.legendre.leggauss(n)
        t, wt = 0.5 * math.pi * (x + 1), 0.5 * math.pi * w
    else:
        t, wt = (np.arange(n) + 0.5) * 2 * math.pi / n, np.full(n, 2 * math.pi / n)
    d1, d2 = (float(np.dot(integrand(sr * np.exp(1j * t)), wt)) * sr for sr in (smin, 2 * smin))
    if c.is_boundary:
        slope = (d2 - d1) / smin
        val += (d1 - slope * smin) * smin + 0.5 * slope * smin**2
    else:
        quad = (d2 - 2 * d1) / (2 * smin**2)
        lin = (d1 - quad * smin**2) / smin
        val += 0.5 * lin * smin**2 + quad * smin**3 / 3
    return 8 * val


def b_at_radius(cfg, taus, A2, r, r0, mesh=None):
    """The r-regularized combination defining B, including the inner remainder."""
    val = 0.0
    inv_r2 = 0.0
    inv_r = 0.0
    for i, (w, t, K, kg, dn, bd) in enumerate(_point_data(cfg, taus)):
        lt = math.log(t.value)
        val -= 0.25 * w * lt * (t.laplacian - 2 * K * t.value)
        inv_r2 += w * t.value
        if bd:
            val -= w * kg * (dn + kg) * lt * t.value
            inv_r += 16 * t.value * (dn + 2 * kg)
        val += inner_remainder(cfg, i, r, r0, t)
    val -= 0.5 * A2
    val += singular_integral(cfg, r, r0, mesh)
    val += -inv_r2 / r**2 + inv_r / r - A2 * math.log(1 / r)
    return val


def coefficients(cfg, r0=0.2, mesh=None, rtol=1e-5):
    """F, grad F, A1, A2 and B (evaluated at r = r0/4 and r0/8)."""
    check_separation(cfg, r0)
    F, dF = f_km(cfg)
    taus = [tau(cfg, i) for i in range(cfg.m)]
    A1, A2 = a1_a2(cfg, taus)
    if cfg.k == cfg.m:
        A1 = 0.0
    radii = (r0 / 4, r0 / 8)
    Bs = tuple(b_at_radius(cfg, taus, A2, r, r0, mesh) for r in radii)
    spread = abs(Bs[0] - Bs[1])
    B = Bs[1]
    diag = {"B_converged": spread <= rtol * max(1.0, abs(B)), "varrho": tuple(varrho(cfg))}
    return ReducedCoefficients(F, dF, A1, A2, B, radii, Bs, spread, taus, diag)


# ---------------------------------------------------------------------------
# energies


def energy_j(u: fem.DiscreteField, lam: float, s, system: fem.NeumannSystem | None = None):
    """J(u) = 1/2 int |grad u|^2 - lam log int V e^u for a P1 field."""
    m = u.mesh
    sysm = system or fem.assemble(m)
    dirichlet = float(u.values @ (sysm.stiffness @ u.values))
    return 0.5 * dirichlet - lam * log_integral_exp(m, u.values, s.V)


def log_integral_exp(mesh, values, V):
    """log int V e^{u_h} dv by the mesh rule, with the maximum factored out."""
    from .fem import TRI_BARY

    qp, wq = mesh.quadrature_points()
    uq = (values[mesh.triangles] @ TRI_BARY.T)
    top = float(uq.max())
    I = float(np.sum(V(qp) * np.exp(uq - top) * np.exp(mesh.surface.psi(qp)) * wq))
    return top + math.log(I)


def energy_w(bcfg, lam=None):
    """J(W) for the ansatz W = sum PU_i of a BubbleConfig.

    int |grad W|^2 = sum_i int chi_i e^{U_i} W dy, evaluated in the charts.
    """
    from .ansatz import CORE_RULE, Ansatz

    lam = lam_km(bcfg) if lam is None else lam
    W = Ansatz(bcfg)
    dir_ = 0.0
    for b in bcfg.bubbles:
        def f(y, b=b):
            eu = 8 * b.rho**2 / (b.rho**2 + np.abs(y) ** 2) ** 2
            return chi(np.abs(y) / b.r0) * eu * W(b.chart.inverse(y))

        dir_ += integrate_chart(f, b.region(), CORE_RULE, scale=b.rho, breaks=(b.r0,)).value
    return 0.5 * dir_ - lam * math.log(W.integral_VeW())


@dataclass
class EnergyExpansion:
    rho: float
    lam: float
    terms: dict
    d_rho: float
    d2_rho: float

    @property
    def total(self):
        return float(sum(self.terms.values()))


def expansion_e(coef: ReducedCoefficients, cfg, rho, lam=None, window=LAMBDA_WINDOW):
    lk = lam_km(cfg)
    lam = lk if lam is None else lam
    if abs(lam - lk) > window * rho**2 * abs(math.log(rho)):
        raise ValueError("lambda outside the window |lambda - lambda_km| <= C rho^2 |log rho|")
    A1, A2, B = coef.A1, coef.A2, coef.B
    lr = math.log(rho)
    terms = {
        "constant": -lk - lam * math.log(lk / 8),
        "F": -0.5 * coef.F,
        "lambda_log_rho": 2 * (lam - lk) * lr,
        "A1": -A1 * rho,
        "A2": A2 * rho**2 * lr,
        "B": -B * rho**2,
        "A1_squared": A1**2 * rho**2 / (2 * lk),
    }
    d1 = 2 * (lam - lk) / rho - A1 + (A1**2 / lk + A2 - 2 * B) * rho + 2 * A2 * rho * lr
    d2 = -2 * (lam - lk) / rho**2 + A1**2 / lk + 3 * A2 + 2 * A2 * lr - 2 * B
    return EnergyExpansion(rho, lam, terms, d1, d2)


def rho_derivative_scaled(coef, lk, mu, dl):
    """(rho d_rho E)/(lambda - lambda_km) at rho = mu sqrt|lambda - lambda_km| (signed dl)."""
    rho = mu * math.sqrt(abs(dl))
    A1, A2, B = coef.A1, coef.A2, coef.B
    body = 2 * dl - A1 * rho + (A1**2 / lk + A2 + 2 * A2 * math.log(rho) - 2 * B) * rho**2
    return body / dl


def select_rho(coef: ReducedCoefficients, cfg, lam, tol=1e-13):
    """rho(lambda, xi) from the root of the d_rho expansion, or None."""
    lk = lam_km(cfg)
    dl = lam - lk
    if dl == 0:
        raise ValueError("lambda equals lambda_km")
    case = coef.case
    L = abs(math.log(abs(dl)))
    if case == "a1":
        if (coef.A2 > 0) != (dl > 0):
            return None
        a = abs(coef.A2)
        lo, hi = math.sqrt(1 / (2 * 2 * a * L)), math.sqrt(2 / a)
    elif case == "a2":
        if (coef.B > 0) != (dl > 0):
            return None
        b = abs(coef.B)
        lo, hi = math.sqrt(1 / (4 * 2 * b * L)), math.sqrt(2 / b)
    else:
        raise ValueError("no sign case applies (need A1 = 0 and A2 != 0, or A1 = A2 = 0 and B != 0)")
    g = lambda mu: rho_derivative_scaled(coef, lk, mu, dl)
    glo, ghi = g(lo), g(hi)
    if glo * ghi > 0:
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
        if hi - lo < tol * hi:
            break
    mu = 0.5 * (lo + hi)
    return mu * math.sqrt(abs(dl))
