"""Liouville bubbles, their Neumann projections and the residual of the ansatz.

Every projection is computed as an explicit part plus a smooth corrector:

    PU  = chi (U - log 8 rho^2) + varrho H_{r0}(., xi) + eta,
    PZ0 = chi (Z0 + 2) + eta_0,        PZj = chi Zj + eta_j,

where chi = chi(|y|/r0) in the refined chart, H_{r0} is the regular part of
the Green function with that same cutoff, and each corrector solves a
Neumann problem whose load lives on the annulus r0 < |y| < 2 r0.  The
correctors are smooth on the scale r0 whatever rho is, so a quasi-uniform
mesh resolves them; the sharp bubble profile is never discretized.
``project_bubble(..., mode="direct")`` instead solves the defining problem
on a graded mesh and serves as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .cutoff import chi, chi_d1, radial_cutoff
from .geometry import kernel_count, rho_weight
from .green import GreenFunction
from .quadrature import QuadratureRule, SurfaceIntegrator, disk, half_disk, integrate_chart

CORE_RULE = QuadratureRule(order=20, refinement_limit=3, rel_tol=1e-11, abs_tol=1e-14)


@dataclass(frozen=True)
class StarNormParams:
    kappa: float = 0.3
    r0: float = 0.2

    def __post_init__(self):
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")


def liouville_bubble(tau, y):
    """u(y) = log 8 tau^2 / (tau^2 + |y|^2)^2."""
    return np.log(8 * tau**2) - 2 * np.log(tau**2 + np.abs(y) ** 2)


def kernel_profile(j, y, rho):
    """Z_j(y) = z_j(y / rho): z0 = 2(1-|y|^2)/(1+|y|^2), zj = 4 y_j/(1+|y|^2)."""
    r2 = np.abs(y) ** 2
    if j == 0:
        return 2 * (rho**2 - r2) / (rho**2 + r2)
    comp = y.real if j == 1 else y.imag
    return 4 * rho * comp / (rho**2 + r2)


def bubble_u(tau, chart, x):
    """U_{tau,xi}(x) for a SurfacePoint or parameter values x inside the chart."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    s = chart.surface
    z = np.atleast_1d(np.asarray(s.to_param(x) if hasattr(x, "location_tag") else x, dtype=complex))
    y, ok = chart.local_coords(z)
    if not np.all(ok):
        raise ValueError("point outside the chart")
    out = liouville_bubble(tau, y)
    return float(out[0]) if hasattr(x, "location_tag") else out


# ---------------------------------------------------------------------------
# configuration


def scaling_values(green: GreenFunction, points, V):
    """tau_i(xi_i) = V(xi_i) exp(varrho_i R(xi_i) + sum_{l != i} varrho_l G(xi_i, xi_l))."""
    s = green.surface
    out = []
    for i, p in enumerate(points):
        zi = np.array([s.to_param(p)])
        e = rho_weight(p) * green.robin(p)
        for l, q in enumerate(points):
            if l != i:
                e += rho_weight(q) * float(green.G(zi, q)[0])
        out.append(float(V(zi)[0]) * math.exp(e))
    return np.array(out)


@dataclass
class Bubble:
    index: int
    point: object
    chart: object
    varrho: float
    tau: float
    rho: float  # rho_i = rho sqrt(tau_i)
    r0: float

    @property
    def is_boundary(self):
        return self.point.is_boundary

    def region(self, radius=None):
        r = 2 * self.r0 if radius is None else radius
        return half_disk(r) if self.is_boundary else disk(r)

    def coords(self, z, radius=None):
        return self.chart.local_coords(z, radius=min(self.chart.radius, 2 * self.r0) if radius is None else radius)


@dataclass
class BubbleConfig:
    """m bubbles (first k interior) of common scale rho on one surface."""

    green: GreenFunction
    points: tuple
    k: int
    rho: float
    r0: float
    lam: float | None = None
    h: float = 0.05
    tau_override: tuple | None = None
    system: fem.NeumannSystem | None = None
    bubbles: list = field(default_factory=list, repr=False)
    _fields: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.points = tuple(self.points)
        m = len(self.points)
        if not 0 <= self.k <= m or m == 0:
            raise ValueError("need 0 <= k <= m and m >= 1")
        for i, p in enumerate(self.points):
            if p.is_boundary != (i >= self.k):
                raise ValueError("the first k points must be interior, the rest on the boundary")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        s = self.surface
        for i, p in enumerate(self.points):
            c = self.green.chart(p)
            if 2 * self.r0 > c.radius + 1e-12:
                raise ValueError(f"r0 = {self.r0} too large for the chart at point {i} (radius {c.radius:.4f})")
        for i in range(m):
            for j in range(i + 1, m):
                zi, zj = s.to_param(self.points[i]), s.to_param(self.points[j])
                ci = self.green.chart(self.points[i])
                y, ok = ci.local_coords(np.array([zj]), radius=ci.radius)
                close = bool(ok[0]) and abs(y[0]) < 4 * self.r0
                if close or abs(zi - zj) < 1e-12:
                    raise ValueError(f"points {i} and {j} are too close (inside the thick diagonal)")
        V = s.V
        taus = np.array(self.tau_override) if self.tau_override is not None else scaling_values(self.green, self.points, V)
        self.bubbles = []
        for i, p in enumerate(self.points):
            self.bubbles.append(Bubble(i, p, self.green.chart(p), rho_weight(p), float(taus[i]),
                                       self.rho * math.sqrt(taus[i]), self.r0))
        if self.system is None:
            if self.green.backend == "fem":
                self.system = self.green.system()
            else:
                self.system = fem.assemble(fem.build_mesh(s, self.h))
        if max(b.rho for b in self.bubbles) >= self.r0 / 2:
            raise ValueError("rho_i too large for r0")

    @property
    def surface(self):
        return self.green.surface

    @property
    def m(self):
        return len(self.points)

    @property
    def lam_km(self):
        return 4 * math.pi * (self.m + self.k)

    @property
    def mesh(self):
        return self.system.mesh

    def with_rho(self, rho):
        return BubbleConfig(self.green, self.points, self.k, rho, self.r0, self.lam, self.h,
                            tuple(b.tau for b in self.bubbles), self.system)

    def with_points(self, points):
        return BubbleConfig(self.green, points, self.k, self.rho, self.r0, self.lam, self.h, None, self.system)

    def integrator(self):
        if "integrator" not in self._fields:
            cores = [(b.chart, b.r0, b.rho) for b in self.bubbles]
            self._fields["integrator"] = SurfaceIntegrator(self.mesh, cores)
        return self._fields["integrator"]


# ---------------------------------------------------------------------------
# loads on the cutoff annulus


def _annulus_load(b: Bubble, density):
    """Flat load vector for  -Lap_g eta = e^{-phi} density(y)  with density supported in the chart."""
    def f(zq):
        y, ok = b.coords(zq)
        ys = np.where(ok, y, 1.0)
        return np.where(ok, density(ys) * b.chart.jacobian(zq), 0.0)

    return f


def _bubble_density(b: Bubble, rho):
    def dens(y):
        r = np.abs(y)
        c0, c1, lap = radial_cutoff(y, b.r0)
        return (-2 * lap * np.log1p(rho**2 / r**2) + 8 * rho**2 * c1 / (r * (rho**2 + r**2)))

    return dens


def _kernel_density(b: Bubble, j, rho):
    def dens(y):
        r = np.abs(y)
        r2 = r * r
        c0, c1, lap = radial_cutoff(y, b.r0)
        if j == 0:
            return lap * 4 * rho**2 / (rho**2 + r2) - 16 * rho**2 * c1 * r / (rho**2 + r2) ** 2
        comp = y.real if j == 1 else y.imag
        Zj = 4 * rho * comp / (rho**2 + r2)
        return lap * Zj + 8 * rho * c1 * comp * (rho**2 - r2) / (r * (rho**2 + r2) ** 2)

    return dens


def _corrector_density_F(b: Bubble):
    """Load of the corrector F: Lap chi / |y|^2 - 4 chi_r / |y|^3 (flat chart operators)."""

    def dens(y):
        r = np.abs(y)
        c0, c1, lap = radial_cutoff(y, b.r0)
        return lap / r**2 - 4 * c1 / r**3

    return dens


def _solve_corrector(cfg: BubbleConfig, b: Bubble, density, mean_value):
    m = cfg.mesh
    load = fem.load_flat(m, _annulus_load(b, density))
    u = fem.solve_neumann_meanzero(cfg.system, load, correct_mean=True)
    return fem.DiscreteField(m, u.values + mean_value / cfg.surface.area, mean_value == 0.0)


def _chart_integral(b: Bubble, f, scale):
    """int over the chart disk of radius 2 r0 of f(y) e^phi dy."""
    return integrate_chart(lambda y: f(y) * np.exp(b.chart.phi(y)), b.region(), CORE_RULE, scale=scale,
                           breaks=(b.r0,)).value


# ---------------------------------------------------------------------------
# projections


@dataclass
class ProjectedBubble:
    """PU_i as explicit part + FEM corrector."""

    cfg: BubbleConfig
    bubble: Bubble
    eta: fem.DiscreteField
    eta_mean: float

    def explicit(self, z):
        b = self.bubble
        z = np.asarray(z, dtype=complex)
        y, ok = b.coords(z)
        ys = np.where(ok, y, 1.0)
        # chi (U - log 8 rho^2) = -2 chi log(rho^2 + |y|^2)
        prof = np.where(ok, chi(np.abs(ys) / b.r0) * (-2 * np.log(b.rho**2 + np.abs(ys) ** 2)), 0.0)
        return prof + b.varrho * self.cfg.green.regular(z, b.point, scale=b.r0)

    def __call__(self, z):
        return self.explicit(z) + self.eta(np.asarray(z, dtype=complex))

    def source(self, z):
        """-Lap_g PU + mean:  chi e^{-phi} e^U."""
        b = self.bubble
        y, ok = b.coords(z)
        ys = np.where(ok, y, 1.0)
        eu = 8 * b.rho**2 / (b.rho**2 + np.abs(ys) ** 2) ** 2
        return np.where(ok, chi(np.abs(ys) / b.r0) * eu * np.exp(-b.chart.phi(ys)), 0.0)

    def nodal(self):
        return fem.DiscreteField(self.cfg.mesh, self(self.cfg.mesh.z), True)


def project_bubble(cfg: BubbleConfig, i: int, mesh=None, mode: str = "split"):
    """Mean-zero Neumann projection of the i-th bubble."""
    b = cfg.bubbles[i]
    if mode == "direct":
        return _project_bubble_direct(cfg, b, mesh)
    key = ("PU", i)
    if key not in cfg._fields:
        mean = 2 * _chart_integral(b, lambda y: chi(np.abs(y) / b.r0) * np.log1p(b.rho**2 / np.abs(y) ** 2),
                                   b.rho)
        eta = _solve_corrector(cfg, b, _bubble_density(b, b.rho), mean)
        cfg._fields[key] = ProjectedBubble(cfg, b, eta, mean / cfg.surface.area)
    return cfg._fields[key]


def _project_bubble_direct(cfg: BubbleConfig, b: Bubble, mesh=None):
    """Solve -Lap PU = chi e^{-phi} e^U - mean on a mesh graded towards the bubble."""
    s = cfg.surface
    zc = s.to_param(b.point)
    if mesh is None:
        mesh = fem.build_mesh(s, cfg.h, refinements=[fem.Refinement(zc, b.rho / 6, 1.2)], required_points=[zc])
    sysm = fem.assemble(mesh)
    dmin = np.min(np.abs(mesh.z - zc)[np.abs(mesh.z - zc) > 0])
    if dmin * math.exp(0.5 * float(s.psi(np.array([zc]))[0])) > b.rho / 2:
        raise ValueError("mesh too coarse for rho")

    def f(zq):
        y, ok = b.coords(zq)
        ys = np.where(ok, y, 1.0)
        eu = 8 * b.rho**2 / (b.rho**2 + np.abs(ys) ** 2) ** 2
        return np.where(ok, chi(np.abs(ys) / b.r0) * eu * b.chart.jacobian(zq), 0.0)

    load = fem.load_flat(mesh, f)
    return fem.solve_neumann_meanzero(sysm, load, correct_mean=True)


def bubble_mass(b: Bubble):
    """int chi e^{-phi} e^U dv_g = int chi e^U dy."""
    return integrate_chart(lambda y: chi(np.abs(y) / b.r0) * 8 * b.rho**2 / (b.rho**2 + np.abs(y) ** 2) ** 2,
                           b.region(), CORE_RULE, scale=b.rho, breaks=(b.r0,)).value


# ---------------------------------------------------------------------------
# asymptotic expansion of PU


def cutoff_constants(b: Bubble):
    """(int chi (e^phi - 1)/|y|^2 dy,  int (1/r0) chi'(|y|/r0) log|y| / |y| dy)."""
    c = b.chart
    I1 = integrate_chart(lambda y: chi(np.abs(y) / b.r0) * np.expm1(c.phi(y)) / np.abs(y) ** 2, b.region(),
                         CORE_RULE, scale=b.r0 * 0.01, breaks=(b.r0,)).value
    ang = math.pi if b.is_boundary else 2 * math.pi
    from .quadrature import integrate_radial

    I2 = ang * integrate_radial(lambda s: chi_d1(s / b.r0) / b.r0 * np.log(s), b.r0, 2 * b.r0, breaks=(b.r0, 2 * b.r0))
    return I1, I2


def h_constant(b: Bubble, area, rho=None):
    """The additive constant of the expansion of PU (rho defaults to rho_i)."""
    rho = b.rho if rho is None else rho
    I1, I2 = cutoff_constants(b)
    return -b.varrho * rho**2 * math.log(rho) / (2 * area) + 2 * rho**2 / area * (b.varrho / 8 + I1 - I2)


def h1_constant(b: Bubble, area, rho=None):
    rho = b.rho if rho is None else rho
    I1, I2 = cutoff_constants(b)
    return -b.varrho * rho**2 * math.log(rho) / area + 4 / area * (I1 - I2) * rho**2


def h2_constant(b: Bubble, area, rho=None):
    rho = b.rho if rho is None else rho
    I1, I2 = cutoff_constants(b)
    return -b.varrho * rho**2 * math.log(rho) / area + 4 / area * (I1 - I2 - b.varrho / 4) * rho**2


def corrector_F(cfg: BubbleConfig, i: int):
    """F_xi: -Lap_g F = e^{-phi}(Lap chi/|y|^2 - 4 chi_r/|y|^3) - mean, zero Neumann data, zero mean."""
    key = ("F", i)
    if key not in cfg._fields:
        b = cfg.bubbles[i]
        cfg._fields[key] = _solve_corrector(cfg, b, _corrector_density_F(b), 0.0)
    return cfg._fields[key]


@dataclass
class AsymptoticPU:
    cfg: BubbleConfig
    bubble: Bubble
    F: fem.DiscreteField
    h: float

    def __call__(self, z):
        b = self.bubble
        z = np.asarray(z, dtype=complex)
        y, ok = b.coords(z)
        ys = np.where(ok, y, 1.0)
        prof = np.where(ok, chi(np.abs(ys) / b.r0) * (-2 * np.log(b.rho**2 + np.abs(ys) ** 2)), 0.0)
        H = self.cfg.green.regular(z, b.point, scale=b.r0)
        return prof + b.varrho * H + self.h - 2 * b.rho**2 * self.F(z)

    def far_field(self, z):
        """varrho G - 2 rho^2 chi/|y|^2 + h - 2 rho^2 F  (valid away from xi)."""
        b = self.bubble
        z = np.asarray(z, dtype=complex)
        y, ok = b.coords(z)
        ys = np.where(ok, y, 1.0)
        corr = np.where(ok, chi(np.abs(ys) / b.r0) / np.abs(ys) ** 2, 0.0)
        return b.varrho * self.cfg.green.G(z, b.point) - 2 * b.rho**2 * corr + self.h - 2 * b.rho**2 * self.F(z)


def asymptotic_pu(cfg: BubbleConfig, i: int) -> AsymptoticPU:
    b = cfg.bubbles[i]
    return AsymptoticPU(cfg, b, corrector_F(cfg, i), h_constant(b, cfg.surface.area))


# ---------------------------------------------------------------------------
# kernel projections


@dataclass
class ProjectedKernel:
    cfg: BubbleConfig
    bubble: Bubble
    j: int
    eta: fem.DiscreteField

    def explicit(self, z):
        b = self.bubble
        y, ok = b.coords(np.asarray(z, dtype=complex))
        ys = np.where(ok, y, 1.0)
        Z = kernel_profile(self.j, ys, b.rho) + (2.0 if self.j == 0 else 0.0)
        return np.where(ok, chi(np.abs(ys) / b.r0) * Z, 0.0)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return self.explicit(z) + self.eta(z)


def project_kernel(cfg: BubbleConfig, i: int, j: int, mesh=None) -> ProjectedKernel:
    b = cfg.bubbles[i]
    if j < 0 or j > kernel_count(b.point):
        raise ValueError(f"kernel index {j} not admitted at a {'boundary' if b.is_boundary else 'interior'} point")
    key = ("PZ", i, j)
    if key not in cfg._fields:
        if j == 0:
            prof = lambda y: chi(np.abs(y) / b.r0) * 4 * b.rho**2 / (b.rho**2 + np.abs(y) ** 2)
        else:
            prof = lambda y: chi(np.abs(y) / b.r0) * kernel_profile(j, y, b.rho)
        mean = -_chart_integral(b, prof, b.rho)
        eta = _solve_corrector(cfg, b, _kernel_density(b, j, b.rho), mean)
        cfg._fields[key] = ProjectedKernel(cfg, b, j, eta)
    return cfg._fields[key]


def kernel_indices(cfg: BubbleConfig):
    return [(i, j) for i, b in enumerate(cfg.bubbles) for j in range(kernel_count(b.point) + 1)]


def gram_pz(cfg: BubbleConfig, mesh=None):
    """Dirichlet inner products <PZ_ij, PZ_lt> = int chi_i e^{U_i} Z_ij PZ_lt dy."""
    idx = kernel_indices(cfg)
    P = {(i, j): project_kernel(cfg, i, j) for i, j in idx}
    n = len(idx)
    Gm = np.zeros((n, n))
    for a, (i, j) in enumerate(idx):
        b = cfg.bubbles[i]
        for c_, (l, t) in enumerate(idx):
            pz = P[(l, t)]

            def f(y, b=b, j=j, pz=pz):
                eu = 8 * b.rho**2 / (b.rho**2 + np.abs(y) ** 2) ** 2
                return chi(np.abs(y) / b.r0) * eu * kernel_profile(j, y, b.rho) * pz(b.chart.inverse(y))

            Gm[a, c_] = integrate_chart(f, b.region(), CORE_RULE, scale=b.rho, breaks=(b.r0,)).value
    return 0.5 * (Gm + Gm.T), idx


# ---------------------------------------------------------------------------
# the approximate solution W and its residual


class Ansatz:
    """W = sum_i PU_i with cached pieces."""

    def __init__(self, cfg: BubbleConfig):
        self.cfg = cfg
        self.parts = [project_bubble(cfg, i) for i in range(cfg.m)]

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return sum(p(z) for p in self.parts)

    def source(self, z):
        return sum(p.source(z) for p in self.parts)

    def masses(self):
        return [bubble_mass(p.bubble) for p in self.parts]

    def integral_VeW(self):
        s = self.cfg.surface
        return self.cfg.integrator().integrate(lambda z: s.V(z) * np.exp(self(z)))

    def nodal(self):
        return fem.DiscreteField(self.cfg.mesh, self(self.cfg.mesh.z), True)


def star_weight(cfg: BubbleConfig, z, params: StarNormParams):
    z = np.asarray(z, dtype=complex)
    w = np.zeros(z.shape)
    for b in cfg.bubbles:
        y, ok = b.chart.local_coords(z, radius=min(b.chart.radius, params.r0))
        d2 = np.where(ok, np.abs(np.where(ok, y, 0)) ** 2, params.r0**2)
        w += b.rho**params.kappa / (b.rho**2 + d2) ** (1 + params.kappa / 2)
    return w


def star_samples(cfg: BubbleConfig, params: StarNormParams, n_angle=24):
    """Mesh nodes plus rings at radii rho_i 2^j around every bubble."""
    pts = [cfg.mesh.z]
    for b in cfg.bubbles:
        radii = []
        r = b.rho / 8
        while r < 2 * params.r0 and r < b.chart.radius:
            radii.append(r)
            r *= 2 ** 0.5
        radii = np.array(radii)
        if b.is_boundary:
            t = np.linspace(0, math.pi, n_angle // 2 + 1)
        else:
            t = np.linspace(0, 2 * math.pi, n_angle, endpoint=False)
        Y = (radii[:, None] * np.exp(1j * t[None, :])).ravel()
        pts.append(np.concatenate([[b.chart.inverse(np.array([0j]))[0]], b.chart.inverse(Y)]))
    return np.concatenate(pts)


def star_norm(h, cfg: BubbleConfig, params: StarNormParams, samples=None):
    """sup |h| / weight over the deterministic sample set."""
    z = star_samples(cfg, params) if samples is None else samples
    vals = np.asarray(h(z), dtype=float)
    if np.any(np.isnan(vals)):
        raise FloatingPointError("NaN in the field")
    w = star_weight(cfg, z, params)
    ratio = np.abs(vals) / w
    k = int(np.argmax(ratio))
    return float(ratio[k]), complex(z[k])


@dataclass
class ResidualReport:
    evaluator: object
    star: float
    argmax: complex
    integral: float


def residual(cfg: BubbleConfig, lam: float | None = None, params: StarNormParams | None = None):
    """R = Lap_g W + lam (V e^W / int V e^W - 1/|Sigma|) for W = sum PU_i."""
    lam = cfg.lam_km if lam is None else lam
    if cfg.lam is not None and lam is None:
        lam = cfg.lam
    params = params or StarNormParams(r0=cfg.r0)
    W = Ansatz(cfg)
    s = cfg.surface
    I = W.integral_VeW()
    cbar = sum(W.masses()) / s.area

    def R(z):
        z = np.asarray(z, dtype=complex)
        return -W.source(z) + cbar + lam * s.V(z) * np.exp(W(z)) / I - lam / s.area

    star, where = star_norm(R, cfg, params)
    return ResidualReport(R, star, where, I)
