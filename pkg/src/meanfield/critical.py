"""Critical points of F_{k,m} on the configuration manifold, their stability, and the
hypotheses of the blow-up theorems."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import reduced
from .geometry import kernel_count
from .green import GreenFunction
from .reduced import Configuration, f_value, gradient_directions

HESSIAN_STEP = 1e-3
DEGENERACY_RTOL = 1e-4
EQUALITY_TOL = 1e-8
DIAGONAL_MARGIN = 0.05


# ---------------------------------------------------------------------------
# coordinates on the manifold: chart displacements (interior) and arc length (boundary)


def displace(cfg: Configuration, v):
    """Configuration moved by the tangent vector v (ordered as gradient_directions)."""
    v = np.asarray(v, dtype=float)
    pts = list(cfg.points)
    s = cfg.surface
    pos = 0
    for i, p in enumerate(cfg.points):
        n = kernel_count(p)
        d = v[pos:pos + n]
        pos += n
        if not np.any(d):
            continue
        if p.is_boundary:
            comp = int(p.chart_id[len("boundary"):])
            pts[i] = s.boundary_point(comp, p.coords[0] + d[0])
        else:
            c = cfg.green.chart(p)
            y = complex(d[0], d[1])
            if abs(y) >= c.radius:
                raise ValueError("step leaves the chart")
            pts[i] = c.point_at(y)
    return tuple(pts)


def manifold_dim(cfg):
    return len(gradient_directions(cfg))


def min_separation(cfg):
    """Smallest pairwise distance estimate between the points (inf for m = 1)."""
    s = cfg.surface
    out = math.inf
    for i in range(cfg.m):
        for j in range(i + 1, cfg.m):
            d = float(s.distance_estimate(s.to_param(cfg.points[i]), s.to_param(cfg.points[j])))
            out = min(out, d)
    return out


def hessian_fd(fun, n, step=HESSIAN_STEP):
    """Central second differences of a function of n variables at 0."""
    f0 = fun(np.zeros(n))
    H = np.zeros((n, n))
    e = np.eye(n) * step
    fp = [fun(e[a]) for a in range(n)]
    fm = [fun(-e[a]) for a in range(n)]
    for a in range(n):
        H[a, a] = (fp[a] - 2 * f0 + fm[a]) / step**2
        for b in range(a + 1, n):
            val = (fun(e[a] + e[b]) - fun(e[a] - e[b]) - fun(-e[a] + e[b]) + fun(-e[a] - e[b])) / (4 * step**2)
            H[a, b] = H[b, a] = val
    return H


def classify_eigenvalues(eigs, scale=None):
    eigs = np.asarray(eigs, dtype=float)
    scale = max(1.0, float(np.max(np.abs(eigs)))) if scale is None else scale
    thr = DEGENERACY_RTOL * scale
    if np.any(np.abs(eigs) <= thr):
        return "degenerate"
    if np.all(eigs > 0):
        return "nondegenerate-min"
    if np.all(eigs < 0):
        return "nondegenerate-max"
    return "nondegenerate-saddle"


def winding_number(grad_fun, radius, samples=32):
    """Degree of a planar vector field on the circle of the given radius about 0."""
    t = 2 * math.pi * np.arange(samples) / samples
    g = np.array([complex(*grad_fun(radius * np.array([math.cos(a), math.sin(a)]))) for a in t])
    if np.any(np.abs(g) == 0):
        return 0
    dth = np.angle(np.roll(g, -1) / g)
    return int(round(float(np.sum(dth)) / (2 * math.pi)))


def strict_extremum(fun, n, radius, samples=32, seed=0):
    """'min' or 'max' if every sample on the sphere of the given radius lies above (below) fun(0)."""
    rng = np.random.default_rng(seed)
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif n == 2:
        t = 2 * math.pi * np.arange(samples) / samples
        dirs = np.stack([np.cos(t), np.sin(t)], axis=1)
    else:
        dirs = rng.standard_normal((samples * n, n))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    f0 = fun(np.zeros(n))
    vals = np.array([fun(radius * d) for d in dirs]) - f0
    floor = 1e-12 * max(1.0, abs(f0))
    if np.all(vals > floor):
        return "min"
    if np.all(vals < -floor):
        return "max"
    return None


# ---------------------------------------------------------------------------
# reports


@dataclass
class CriticalPointReport:
    configuration: Configuration
    gradient: np.ndarray
    grad_norm: float
    hessian: np.ndarray | None = None
    eigenvalues: np.ndarray | None = None
    classification: str | None = None
    stable: bool | None = None
    stability_reason: str | None = None
    degree: int | None = None
    iterations: int = 0
    tol: float = 0.0
    conditions: dict = field(default_factory=dict)

    def record(self):
        s = self.configuration.surface
        pts = [s.to_param(p) for p in self.configuration.points]
        return {
            "points": ";".join(f"{z.real:.12g}{z.imag:+.12g}j" for z in pts),
            "grad_norm": f"{self.grad_norm:.6e}",
            "eigenvalues": ";".join(f"{e:.10g}" for e in (self.eigenvalues if self.eigenvalues is not None else [])),
            "classification": self.classification or "",
            "stable": "" if self.stable is None else str(self.stable).lower(),
            "iterations": str(self.iterations),
        }


class CriticalSearchError(RuntimeError):
    pass


def _check_margin(cfg, rho_max):
    margin = 4 * rho_max + DIAGONAL_MARGIN
    sep = min_separation(cfg)
    if sep < margin:
        raise ValueError(f"configuration inside the diagonal margin (separation {sep:.4g} < {margin:.4g})")


def find_critical(cfg0: Configuration, tol=1e-8, max_iter=50, rho_max=0.0, max_step=0.1):
    """Damped Newton on grad F_{k,m} = 0; boundary points move along their circle only."""
    _check_margin(cfg0, rho_max)
    cfg = cfg0
    n = manifold_dim(cfg)
    _, g = reduced.f_km(cfg)
    gn = float(np.linalg.norm(g))
    it = 0
    while gn >= tol:
        if it >= max_iter:
            raise CriticalSearchError(f"no convergence in {max_iter} iterations (|grad F| = {gn:.3e})")
        it += 1
        H = hessian_fd(lambda v, c=cfg: f_value(c, displace(c, v)), n)
        try:
            step = -np.linalg.lstsq(H, g, rcond=1e-10)[0]
        except np.linalg.LinAlgError:
            step = -g
        sn = float(np.linalg.norm(step))
        if sn > max_step:
            step *= max_step / sn
        accepted = False
        for _ in range(30):
            try:
                trial = cfg.with_points(displace(cfg, step))
                _check_margin(trial, rho_max)
            except ValueError:
                step = 0.5 * step
                continue
            _, gt = reduced.f_km(trial)
            gtn = float(np.linalg.norm(gt))
            if gtn < gn:
                cfg, g, gn = trial, gt, gtn
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            if gn < 10 * tol:
                break
            raise CriticalSearchError(f"line search failed at |grad F| = {gn:.3e}")
    return CriticalPointReport(cfg, g, gn, iterations=it, tol=tol)


def classify_stability(report: CriticalPointReport, step=HESSIAN_STEP):
    """Hessian signature, with degree and strict-extremum probes for degenerate points."""
    cfg = report.configuration
    n = manifold_dim(cfg)
    fun = lambda v: f_value(cfg, displace(cfg, v))
    H = hessian_fd(fun, n, step)
    eigs = np.linalg.eigvalsh(0.5 * (H + H.T))
    cls = classify_eigenvalues(eigs)
    report.hessian, report.eigenvalues, report.classification = H, eigs, cls
    if cls != "degenerate":
        report.stable, report.stability_reason = True, "nondegenerate"
        return cls
    report.stable, report.stability_reason = False, "degenerate Hessian"
    ext = strict_extremum(fun, n, 10 * step)
    if ext is not None:
        report.stable, report.stability_reason = True, f"strict local {ext}"
    if n == 2:
        grad = lambda v: reduced.f_km(cfg.with_points(displace(cfg, v)))[1]
        report.degree = winding_number(grad, 10 * step)
        if report.degree != 0:
            report.stable, report.stability_reason = True, f"degree {report.degree}"
    return cls


def perturbation_probe(report: CriticalPointReport, factor="exp(0.001*x)", tol=None):
    """Distance to the critical point of F for the potential V * factor, searched from the same start."""
    cfg = report.configuration
    g = cfg.green
    s2 = cfg.surface.with_potential(f"({cfg.surface.potential_text})*{factor}")
    g2 = GreenFunction(s2, g.backend, h=g.h, cutoff_fraction=g.cutoff_fraction, mesh=g.mesh,
                       chart_rotation=g.chart_rotation)
    g2._system = g._system
    cfg2 = Configuration(g2, cfg.points, cfg.k)
    rep2 = find_critical(cfg2, tol=report.tol if tol is None else tol)
    s = cfg.surface
    return max(abs(s.to_param(p) - s.to_param(q)) for p, q in zip(cfg.points, rep2.configuration.points)), rep2


# ---------------------------------------------------------------------------
# theorem hypotheses


@dataclass
class ConditionReport:
    theorem: str
    valid_input: bool
    holds: bool
    side: str | None  # "right" | "left" | None
    values: dict = field(default_factory=dict)
    message: str = ""


def _boundary_samples(s, n=256):
    out = []
    for comp in s.boundary_components:
        t = np.linspace(0, 2 * math.pi, n, endpoint=False)
        out.append(comp.radius * np.exp(1j * t))
    return np.concatenate(out) if out else np.zeros(0, complex)


def _potential_ok(s):
    z = np.concatenate([s.sample_points(24, 48), _boundary_samples(s)])
    v = s.V(z)
    return bool(np.all(np.isfinite(v)) and np.all(v > 0))


def _side(value):
    if value > 0:
        return "right"
    if value < 0:
        return "left"
    return None


def check_theorem_conditions(cfg: Configuration, theorem: str, coef=None, neighborhood=0.05):
    """Evaluate the hypotheses of one of the blow-up theorems at cfg.

    theorem: 'T1_1' (one interior point), 'T1_2' (one boundary point),
    'T1_3' (several points, conditions on V and the curvatures), 'main'
    (sign case of A1, A2, B).  Equalities hold within EQUALITY_TOL.
    """
    s = cfg.surface
    if not _potential_ok(s):
        return ConditionReport(theorem, False, False, None, message="V is not positive and finite on the samples")
    area = s.area
    if theorem == "T1_1":
        if cfg.m != 1 or cfg.k != 1:
            raise ValueError("T1_1 needs one interior point")
        z = np.array([s.to_param(cfg.points[0])])
        q = float(s.laplace_log_V(z)[0] - 2 * s.gauss_curvature(z)[0] + 8 * math.pi / area)
        side = _side(q)
        return ConditionReport(theorem, True, side is not None, side, {"quantity": q})
    if theorem == "T1_2":
        if cfg.m != 1 or cfg.k != 0:
            raise ValueError("T1_2 needs one boundary point")
        p = cfg.points[0]
        comp = int(p.chart_id[len("boundary"):])
        circle = s.boundary_components[comp]
        ts = p.coords[0] + np.linspace(-neighborhood, neighborhood, 21)
        zs = np.array([circle.param(t) for t in ts])
        kg = circle.geodesic_curvature
        eq = max(abs(s.normal_derivative_log_V(z) + 2 * kg) for z in zs)
        K = s.gauss_curvature(zs)
        q = s.laplace_log_V(zs) - 2 * K + 4 * kg + 4 * math.pi / area
        # the same bracket as it appears in A2 at a critical point: 4 k_g (d_nu log V + k_g) = -4 k_g^2
        q_a2 = s.laplace_log_V(zs) - 2 * K - 4 * kg**2 + 4 * math.pi / area
        sides = {_side(x) for x in q}
        side = sides.pop() if len(sides) == 1 else None
        holds = eq <= EQUALITY_TOL and side is not None
        return ConditionReport(theorem, True, holds, side if holds else None,
                               {"equality_residual": eq, "quantity": float(q[len(q) // 2]),
                                "quantity_min": float(q.min()), "quantity_max": float(q.max()),
                                "quantity_from_A2": float(q_a2[len(q_a2) // 2])})
    if theorem == "T1_3":
        zb = _boundary_samples(s)
        eq = max((abs(s.normal_derivative_log_V(z) + 2 * s.geodesic_curvature(z)) for z in zb), default=0.0)
        zi = s.sample_points(24, 48)
        zi = zi[s.contains(zi, strict=True, tol=1e-9)]
        inner = -s.laplace_log_V(zi) + 2 * s.gauss_curvature(zi)
        kgb = np.array([s.geodesic_curvature(z) for z in zb])
        bnd = -s.laplace_log_V(zb) + 2 * s.gauss_curvature(zb) + 4 * kgb**2
        sup = max(float(inner.max()), float(bnd.max()) if bnd.size else -math.inf)
        inf = min(float(inner.min()), float(bnd.min()) if bnd.size else math.inf)
        mk = cfg.m + cfg.k
        side = "right" if mk > sup else "left" if mk < inf else None
        holds = eq <= EQUALITY_TOL and side is not None
        return ConditionReport(theorem, True, holds, side if holds else None,
                               {"equality_residual": eq, "sup": sup, "inf": inf, "m_plus_k": mk,
                                "sup_scaled": sup * area / (4 * math.pi), "inf_scaled": inf * area / (4 * math.pi)})
    if theorem == "main":
        coef = reduced.coefficients(cfg) if coef is None else coef
        case = coef.case
        if case == "a1":
            side = _side(coef.A2)
        elif case == "a2":
            side = _side(coef.B)
        else:
            side = None
        return ConditionReport(theorem, True, side is not None, side,
                               {"A1": coef.A1, "A2": coef.A2, "B": coef.B, "case": case})
    raise ValueError(f"unknown theorem {theorem!r} (expected T1_1, T1_2, T1_3 or main)")
