"""Numerical checks of the asymptotic machinery, one function per check.

Every check returns a ``Check`` with the measured numbers and a pass flag.
The ledger text built from a list of checks contains no timings, so two runs
with the same inputs produce identical bytes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import iv

from . import quadrature as Q
from .ansatz import BubbleConfig, StarNormParams, asymptotic_pu, gram_pz, project_bubble, residual
from .fem import Refinement, assemble, build_mesh
from .geometry import surface_catalog
from .green import GreenFunction
from . import reduced as R


@dataclass
class Check:
    criterion: int
    name: str
    passed: bool
    values: dict = field(default_factory=dict)
    detail: str = ""
    seconds: float = 0.0

    def line(self):
        vals = " ".join(f"{k}={_fmt(v)}" for k, v in self.values.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.criterion:>2} {self.name}: {vals}"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def slope(x, y):
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def _timed(fn):
    def run(*args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        out.seconds = time.perf_counter() - t0
        return out

    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


# ---------------------------------------------------------------------------
# bubble integrals


@_timed
def check_bubble_integrals():
    """Closed forms of int01/int02 against quadrature; int14 constant; Liouville mass."""
    worst = 0.0
    for r in (0.5, 1.0):
        for rho in (0.01, 0.1, 0.5):
            for kind in ("int01", "int02"):
                f, q = Q.appendix_integral(kind, r, rho)
                worst = max(worst, abs(f - q) / abs(f))
    i14 = Q.int14_plane().value
    mass = Q.liouville_mass(1.0).value
    mass2 = Q.liouville_mass(0.01).value
    e14 = abs(i14 - math.pi) / math.pi
    em = max(abs(mass - 8 * math.pi), abs(mass2 - 8 * math.pi)) / (8 * math.pi)
    ok = worst < 1e-8 and e14 < 1e-6 and em < 1e-6
    return Check(1, "bubble integral identities", ok,
                 {"closed_form_rel_err": worst, "int14_rel_err": e14, "liouville_mass_rel_err": em})


@_timed
def check_half_plane_moment():
    """The half-plane integral of z2/(1+|z|^2)^3 by two routes, against the constant 1/2."""
    q = Q.int13_half_plane().value
    oracle = Q.int13_half_plane_polar_oracle()
    stated = Q.INT13_PAPER_HALF
    agree = abs(q - oracle) < 1e-8
    return Check(2, "half-plane first moment", agree,
                 {"quadrature": q, "beta_route": oracle, "pi_over_8": math.pi / 8, "stated_constant": stated,
                  "agrees_with_stated": abs(q - stated) < 1e-8})


# ---------------------------------------------------------------------------
# Green function


def _disk_samples(n, rmax, seed):
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.uniform(0, rmax**2, n))
    t = rng.uniform(0, 2 * math.pi, n)
    return r * np.exp(1j * t)


@_timed
def check_green_convergence(hs=(0.1, 0.05, 0.025), gap=0.25):
    """FEM Green function against the image formula away from the source, and the Robin value at 0."""
    s = surface_catalog("disk", {})
    oracle = GreenFunction(s, "disk-images")
    Z = _disk_samples(400, 0.95, 0)
    sources = [s.interior_point(0j), s.interior_point(0.3 + 0j)]
    errs = np.zeros((len(hs), len(sources)))
    robin_err = None
    for a, h in enumerate(hs):
        gf = GreenFunction(s, "fem", h=h)
        for b, xi in enumerate(sources):
            far = np.abs(Z - s.to_param(xi)) > gap
            errs[a, b] = np.max(np.abs(gf.G(Z[far], xi) - oracle.G(Z[far], xi)))
        robin_err = abs(gf.robin(sources[0]) + 3 / (8 * math.pi))
    slopes = [slope(hs, errs[:, b]) for b in range(len(sources))]
    ok = min(slopes) >= 1.5 and robin_err < 1e-3
    vals = {f"slope_source{b}": v for b, v in enumerate(slopes)}
    vals.update({"linf_finest": float(errs[-1].max()), "robin_err_finest": robin_err})
    return Check(3, "FEM Green function vs image formula", ok, vals)


@_timed
def check_green_symmetry(hs=(0.1, 0.05, 0.025), pairs=6):
    """G(x, xi) = G(xi, x) for the image formula and the FEM backend; representation formula."""
    s = surface_catalog("disk", {})
    oracle = GreenFunction(s, "disk-images")
    A, B = _disk_samples(20, 0.8, 1), _disk_samples(20, 0.8, 2)

    def asym(gf, n):
        return max(abs(gf.G(np.array([a]), s.interior_point(b))[0] - gf.G(np.array([b]), s.interior_point(a))[0])
                   for a, b in zip(A[:n], B[:n]))

    e_oracle = asym(oracle, 20)
    e_fem = [asym(GreenFunction(s, "fem", h=h), pairs) for h in hs]
    sym_slope = slope(hs, e_fem)

    # h(x) = x1^3 + e^{x2}: Lap h = 6 x1 + e^{x2}, d_nu h = 3 x1^3 + x2 e^{x2} on the circle, mean 2 I_1(1)
    fun = lambda z: z.real**3 + np.exp(z.imag)
    lap = lambda z: 6 * z.real + np.exp(z.imag)
    dn = lambda z: 3 * z.real**3 + z.imag * np.exp(z.imag)
    mean = 2 * iv(1, 1.0)
    gf = GreenFunction(s, "fem", h=hs[-1])
    rep = 0.0
    for z in (0.1 + 0.2j, -0.4 + 0.3j, 0.5 - 0.5j):
        val = gf.integrate_against(s.interior_point(z), lambda q: -lap(q), dn)
        rep = max(rep, abs(float(fun(np.array([z]))[0]) - mean - val))
    ok = e_oracle < 1e-8 and sym_slope >= 1.5 and rep < 5e-3
    return Check(4, "Green symmetry and representation formula", ok,
                 {"oracle_asymmetry": e_oracle, "fem_asymmetry_finest": e_fem[-1], "fem_asymmetry_slope": sym_slope,
                  "representation_residual": rep})


# ---------------------------------------------------------------------------
# projected bubbles and kernels


@_timed
def check_projection_rate(rhos=(0.2, 0.1, 0.05), z=0.2 + 0.1j, r0=0.2):
    """Sup distance between the projected bubble and its asymptotic expansion on a fixed graded mesh."""
    s = surface_catalog("disk", {})
    gf = GreenFunction(s, "disk-images")
    xi = s.interior_point(z)
    tau = math.exp(8 * math.pi * gf.robin(xi))
    mesh = build_mesh(s, 0.05, refinements=[Refinement(z, min(rhos) * math.sqrt(tau) / 6, 1.2)], required_points=[z])
    system = assemble(mesh)
    errs = []
    for rho in rhos:
        cfg = BubbleConfig(gf, [xi], 1, rho, r0, system=system)
        pu, asym = project_bubble(cfg, 0), asymptotic_pu(cfg, 0)
        errs.append(float(np.max(np.abs(pu(mesh.z) - asym(mesh.z)))))
    sl = slope(rhos, errs)
    return Check(5, "projected bubble expansion rate", sl >= 2.5,
                 {"slope": sl, **{f"err_rho{rho:g}": e for rho, e in zip(rhos, errs)}})


def _off_diagonal(G):
    return float(np.max(np.abs(G - np.diag(np.diag(G)))))


@_timed
def check_kernel_gram(rho_diag=0.05, rhos=(0.1, 0.05, 0.025)):
    """Dirichlet Gram matrix of the kernel projections: diagonal limits and off-diagonal decay.

    The interior point sits off-centre on the disk.  The boundary point is on the
    flat cylinder; its potential breaks the rotational symmetry, so the
    off-diagonal entries do not vanish identically.
    """
    disk = surface_catalog("disk", {})
    gd = GreenFunction(disk, "disk-images")
    cyl = surface_catalog("cylinder", {"L": 2.0}, "exp(0.1*x)")
    gc = GreenFunction(cyl, "cylinder-series")
    cases = {
        "interior": (gd, [disk.interior_point(0.3 + 0.1j)], 1, 0.2, 32 * math.pi / 3),
        "boundary": (gc, [cyl.boundary_point(0, 0.5)], 0, 0.5, 16 * math.pi / 3),
    }
    vals, ok = {}, True
    for name, (g, pts, k, r0, target) in cases.items():
        offs, diag_err = [], None
        for rho in sorted(set(rhos) | {rho_diag}, reverse=True):
            G, _ = gram_pz(BubbleConfig(g, pts, k, rho, r0))
            if rho == rho_diag:
                diag_err = float(np.max(np.abs(np.diag(G) / target - 1)))
            if rho in rhos:
                offs.append(_off_diagonal(G))
        sl = slope(sorted(rhos, reverse=True), offs)
        vals[f"{name}_diag_rel_err"] = diag_err
        vals[f"{name}_offdiag_slope"] = sl
        ok = ok and diag_err < 0.02 and sl >= 0.8
    return Check(6, "kernel projection Gram matrix", ok, vals)


@_timed
def check_residual_rates(rhos=(0.2, 0.1, 0.05), kappa=0.3, r0=0.2):
    """Weighted residual norm of the ansatz at and away from a critical point of F."""
    s = surface_catalog("disk", {}, "exp(0.5*(x^2+y^2))")
    gf = GreenFunction(s, "disk-images")
    params = StarNormParams(kappa, r0)
    vals = {}
    for name, z in (("critical", 0j), ("off_critical", 0.3 + 0.1j)):
        p = s.interior_point(z)
        norms = [residual(BubbleConfig(gf, [p], 1, rho, r0), params=params).star for rho in rhos]
        vals[f"{name}_slope"] = slope(rhos, norms)
        vals[f"{name}_finest"] = norms[-1]
    ok = vals["critical_slope"] >= 1.5 and 0.8 <= vals["off_critical_slope"] <= 1.3
    return Check(7, "ansatz residual rates", ok, vals)


# ---------------------------------------------------------------------------
# reduced energy


@_timed
def check_energy_expansion(rhos=(0.2, 0.1, 0.05), r0=0.2, step=1e-3):
    """J(W) against the rho expansion, and d_xi J(W) against -grad F / 2."""
    s = surface_catalog("disk", {}, "exp(0.5*(x^2+y^2))")
    gf = GreenFunction(s, "disk-images")
    cfg = R.Configuration(gf, [s.interior_point(0j)], 1)
    coef = R.coefficients(cfg, r0=r0)
    scaled = []
    for rho in rhos:
        J = R.energy_w(BubbleConfig(gf, cfg.points, 1, rho, r0))
        scaled.append(abs(J - R.expansion_e(coef, cfg, rho).total) / rho**2)

    off = R.Configuration(gf, [s.interior_point(0.3 + 0.1j)], 1)
    _, dF = R.f_km(off)
    chart = gf.chart(off.points[0])
    gaps = []
    for rho in rhos:
        g = []
        for direction in (1.0, 1j):
            Jp, Jm = (R.energy_w(BubbleConfig(gf, [chart.point_at(sg * step * direction)], 1, rho, r0))
                      for sg in (1, -1))
            g.append((Jp - Jm) / (2 * step))
        gaps.append(float(np.max(np.abs(np.array(g) + 0.5 * np.asarray(dF)))))
    s1, s2 = slope(rhos, scaled), slope(rhos, gaps)
    ok = s1 > 0 and all(a > b for a, b in zip(scaled, scaled[1:])) and s2 >= 0.8
    return Check(8, "energy expansion", ok,
                 {"scaled_gap_slope": s1, "scaled_gap_finest": scaled[-1], "xi_derivative_slope": s2,
                  "xi_derivative_gap_finest": gaps[-1]})


def _relative_change(a, b, scale):
    return abs(a - b) / max(abs(a), abs(b), scale)


@_timed
def check_coefficients(r0=0.2, rotation=0.7, rtol=1e-6):
    """A1 = 0 for interior configurations, r-independence of B, invariance under chart rotation."""
    cases = [
        ("disk_interior", surface_catalog("disk", {}, "exp(0.5*(x^2+y^2))"), "disk-images",
         lambda s: s.interior_point(0.3 + 0.1j), 1),
        ("cylinder_boundary", surface_catalog("cylinder", {"L": 2.0}, "exp(0.1*x)"), "cylinder-series",
         lambda s: s.boundary_point(0, 0.0), 0),
    ]
    vals, ok = {}, True
    for name, s, backend, point, k in cases:
        coefs = []
        for rot in (0.0, rotation):
            gf = GreenFunction(s, backend, chart_rotation=rot)
            cfg = R.Configuration(gf, [point(s)], k)
            coefs.append(R.coefficients(cfg, r0=r0))
        c0, c1 = coefs
        scale = float(sum(w * t.value for w, t in zip(c0.diagnostics["varrho"], c0.taus)))
        rot = max(_relative_change(getattr(c0, a), getattr(c1, a), scale) for a in ("A1", "A2", "B"))
        vals[f"{name}_rotation_rel"] = rot
        vals[f"{name}_B_r_spread"] = c0.r_spread
        ok = ok and rot < rtol and bool(c0.diagnostics["B_converged"])
        if k == len(c0.taus):
            vals[f"{name}_A1"] = c0.A1
            ok = ok and c0.A1 == 0.0
    return Check(9, "coefficient sanity", ok, vals)


CHECKS = (check_bubble_integrals, check_half_plane_moment, check_green_convergence, check_green_symmetry,
          check_projection_rate, check_kernel_gram, check_residual_rates, check_energy_expansion, check_coefficients)


def run_all(select=None, log=None):
    out = []
    for fn in CHECKS:
        if select is not None and fn.__name__ not in select:
            continue
        c = fn()
        out.append(c)
        if log:
            log(f"{c.line()}  ({c.seconds:.1f} s)")
    return out


def ledger_text(checks, header=()):
    lines = list(header) + [c.line() for c in checks]
    n = sum(c.passed for c in checks)
    lines.append(f"summary: {n}/{len(checks)} passed")
    return "\n".join(lines) + "\n"
