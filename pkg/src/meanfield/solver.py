"""Newton's method for the discretized mean field equation, continuation in lambda
towards lambda_km from a bubble warm start, and concentration diagnostics.

The discrete problem for a P1 field u is

    F(u) = K u - lam (b(u) / I(u) - m / |Sigma|_h) = 0,   mean(u) = 0,

with b_i(u) = int V e^{u_h} v_i dv_g, I(u) = sum_i b_i and m the mass
vector.  Its Jacobian is K - lam (B / I - b b^T / I^2) with
B_ij = int V e^{u_h} v_i v_j dv_g.  All exponentials are taken as
e^{u - max u}; the factor cancels between numerator and normalization.

Near lambda_km the solutions carry bubbles of width rho_i, and a P1 field
cannot represent them well enough: the discrete branch folds before lambda
gets close to lambda_km.  A ``Background`` W (the ansatz) is therefore kept
exact at the quadrature points and only u - W is discretized; the
Dirichlet term of W enters through its known Laplacian.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from . import fem, reduced
from .ansatz import Ansatz, BubbleConfig, gram_pz, kernel_indices, project_kernel
from .fem import TRI_BARY, DiscreteField

DEFAULT_SCHEDULE_EPS = 0.4
DEFAULT_SCHEDULE_STEPS = 7


class NewtonFailure(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class FamilyError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# the discrete nonlinearity


@dataclass
class Background:
    """A field W known at the quadrature points together with int (-Lap_g W) v_i dv_g."""

    quad: np.ndarray  # (nt, 7) values of W at the mesh quadrature points
    load: np.ndarray  # (n,) weak Laplacian, summing to zero
    nodal: np.ndarray  # (n,) values of W at the nodes

    @classmethod
    def from_ansatz(cls, W: Ansatz, system: fem.NeumannSystem):
        mesh = system.mesh
        if W.cfg.mesh is not mesh:
            raise ValueError("ansatz correctors live on another mesh")
        qp, _ = mesh.quadrature_points()
        T = mesh.triangles
        quad = np.zeros(qp.shape)
        nodal = np.zeros(mesh.n_nodes)
        for part in W.parts:
            quad += part.explicit(qp) + part.eta.values[T] @ TRI_BARY.T
            nodal += part.explicit(mesh.z) + part.eta.values
        load = fem.load_weighted(mesh, W.source)
        load -= system.mass_vector * (load.sum() / system.area)
        return cls(quad, load, nodal)

    @classmethod
    def zero(cls, system: fem.NeumannSystem):
        mesh = system.mesh
        return cls(np.zeros((len(mesh.triangles), len(TRI_BARY))), np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes))


class MeanFieldOperator:
    """Residual and Jacobian of the discrete mean field equation on one mesh, for u = W + phi_h."""

    def __init__(self, system: fem.NeumannSystem, lam: float, background: Background | None = None):
        self.system = system
        self.lam = float(lam)
        m = system.mesh
        self.mesh = m
        self.background = background or Background.zero(system)
        qp, wq = m.quadrature_points()
        s = m.surface
        # V dv_g at every quadrature point
        self.weight = s.V(qp) * np.exp(s.psi(qp)) * wq  # (nt, 7)
        self.mvec = system.mass_vector
        self.area = system.area
        T = m.triangles
        self._rows = np.repeat(T, 3, axis=1).ravel()
        self._cols = np.tile(T, (1, 3)).ravel()

    def quad_values(self, phi):
        return phi[self.mesh.triangles] @ TRI_BARY.T + self.background.quad

    def _exp(self, phi):
        uq = self.quad_values(phi)
        top = float(uq.max())
        return np.exp(uq - top) * self.weight, top

    def density(self, phi):
        """b (scaled by e^{-max u}), I and the shift."""
        e, top = self._exp(phi)
        b = np.zeros(self.mesh.n_nodes)
        np.add.at(b, self.mesh.triangles.ravel(), (e @ TRI_BARY).ravel())
        return b, float(e.sum()), top, e

    def residual(self, phi):
        b, I, _, _ = self.density(phi)
        return self.system.stiffness @ phi + self.background.load - self.lam * (b / I - self.mvec / self.area)

    def jacobian_parts(self, phi):
        b, I, _, e = self.density(phi)
        Be = np.einsum("tq,qa,qb->tab", e, TRI_BARY, TRI_BARY)
        n = self.mesh.n_nodes
        B = sps.csr_matrix((Be.ravel(), (self._rows, self._cols)), shape=(n, n))
        return self.system.stiffness - (self.lam / I) * B, b, I

    def dual_norm(self, r):
        """sqrt(r . w) with w the mean-zero solution of K w = r (the H^{-1} norm of a mean-free r)."""
        rr = r - self.mvec * (r.sum() / self.area)
        w = self.system.factor().solve(np.concatenate([rr, [0.0]]))[:-1]
        return math.sqrt(max(float(rr @ w), 0.0))


class BorderedSolver:
    """Solve (A + lam b b^T / I^2) x = r, m.x = 0 by a bordered LU of A and Sherman-Morrison."""

    def __init__(self, A, mvec, b, coeff):
        mm = sps.csr_matrix(mvec[:, None])
        self.M = sps.bmat([[A, mm], [mm.T, None]], format="csc")
        self.lu = spla.splu(self.M)
        n = len(mvec)
        self.n = n
        self.u = np.concatenate([coeff * b, [0.0]])
        self.v = np.concatenate([b, [0.0]])
        self.Au = self.lu.solve(self.u)
        self.denom = 1.0 + float(self.v @ self.Au)

    def solve(self, r):
        rhs = np.concatenate([r, [0.0]])
        x = self.lu.solve(rhs)
        x = x - self.Au * (float(self.v @ x) / self.denom)
        return x[:self.n]

    def condition_estimate(self):
        """1-norm condition estimate of the bordered matrix without the rank-one term."""
        n1 = self.M.shape[0]
        inv = spla.LinearOperator((n1, n1), matvec=self.lu.solve, rmatvec=lambda y: self.lu.solve(y, trans="T"),
                                  dtype=float)
        return float(spla.onenormest(self.M) * spla.onenormest(inv))


# ---------------------------------------------------------------------------
# Newton


@dataclass
class SolveResult:
    lam: float
    u: DiscreteField
    iterations: int
    residual: float
    max_u: float
    peaks: list
    history: list = field(default_factory=list)
    converged: bool = True
    condition: float | None = None
    phi: np.ndarray | None = None  # the discretized correction u - W
    background: Background | None = None

    def quad_values(self):
        """u at the mesh quadrature points, with W exact."""
        m = self.u.mesh
        phi = self.u.values if self.phi is None else self.phi
        q = phi[m.triangles] @ TRI_BARY.T
        return q if self.background is None else q + self.background.quad

    def convergence_order(self):
        """Estimated order from the last three residuals above the rounding floor."""
        floor = 1e-12 * max(1.0, self.history[0]) if self.history else 0.0
        h = [x for x in self.history if x > floor]
        if len(h) < 3:
            return None
        a, b, c = h[-3:]
        if not (a > b > c) or b >= 1 or a >= 1:
            return None
        return math.log(c / b) / math.log(b / a)


def peak_locations(u: DiscreteField, charts=(), radius=None):
    """Parameter position of the maximum of u, globally and inside each chart disk."""
    m = u.mesh
    out = [complex(m.z[int(np.argmax(u.values))])]
    for c in charts:
        _, ok = c.local_coords(m.z, radius=c.radius if radius is None else radius)
        if np.any(ok):
            idx = np.flatnonzero(ok)
            out.append(complex(m.z[idx[int(np.argmax(u.values[idx]))]]))
        else:
            out.append(complex("nan"))
    return out


def newton_solve(s, mesh, lam, u0=None, tol=1e-9, max_iter=40, system=None, charts=(), damping_steps=30,
                 background: Background | None = None):
    """Newton iteration for the discrete problem; converged when the dual residual norm < tol.

    With a background W the unknown is phi = u - W and u0 is the initial phi.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    system = system or fem.assemble(mesh)
    if system.mesh is not mesh:
        raise ValueError("system assembled on another mesh")
    op = MeanFieldOperator(system, lam, background)
    u = np.zeros(mesh.n_nodes) if u0 is None else np.array(u0.values if isinstance(u0, DiscreteField) else u0,
                                                             dtype=float)
    u -= system.mean(u)
    r = op.residual(u)
    rn = op.dual_norm(r)
    history = [rn]
    it = 0
    cond = None
    while rn >= tol:
        if it >= max_iter:
            res = _result(op, u, it, rn, history, charts, False, cond)
            raise NewtonFailure(f"no convergence in {max_iter} iterations (residual {rn:.3e})", res)
        it += 1
        A, b, I = op.jacobian_parts(u)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                solver = BorderedSolver(A, op.mvec, b, lam / I**2)
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            res = _result(op, u, it, rn, history, charts, False, None)
            raise NewtonFailure(f"singular Jacobian: {exc}", res) from exc
        if abs(solver.denom) < 1e-14:
            cond = solver.condition_estimate()
            res = _result(op, u, it, rn, history, charts, False, cond)
            raise NewtonFailure(f"Jacobian near-singular (condition estimate {cond:.3e})", res)
        du = solver.solve(-r)
        du -= system.mean(du)
        t = 1.0
        for _ in range(damping_steps):
            trial = u + t * du
            rt = op.residual(trial)
            rtn = op.dual_norm(rt)
            if np.isfinite(rtn) and rtn < rn:
                break
            t *= 0.5
        else:
            cond = solver.condition_estimate()
            res = _result(op, u, it, rn, history, charts, False, cond)
            raise NewtonFailure(f"damping failed at residual {rn:.3e} (condition estimate {cond:.3e})", res)
        u, r, rn = trial, rt, rtn
        history.append(rn)
        if it == max_iter or rn < tol:
            cond = solver.condition_estimate()
    return _result(op, u, it, rn, history, charts, True, cond)


def lambda_tangent(system, phi, lam, background=None):
    """dphi/dlam along the solution branch: J phi' = b/I - m/|Sigma|_h, mean(phi') = 0."""
    op = MeanFieldOperator(system, lam, background)
    A, b, I = op.jacobian_parts(phi)
    solver = BorderedSolver(A, op.mvec, b, lam / I**2)
    rhs = b / I - op.mvec / op.area
    du = solver.solve(rhs)
    return du - system.mean(du)


def continuation_solve(prev: SolveResult, lam, system, tol=1e-9, max_iter=40, charts=(), min_step=1e-4):
    """Reach lam from a solved point by tangent-predicted sub-steps, halving a sub-step on failure."""
    cur = prev
    mesh = system.mesh
    bg = prev.background
    step = lam - prev.lam
    while cur.lam != lam:
        target = lam if abs(lam - cur.lam) <= abs(step) else cur.lam + step
        phi = cur.phi if cur.phi is not None else cur.u.values
        guess = phi + (target - cur.lam) * lambda_tangent(system, phi, cur.lam, bg)
        try:
            nxt = newton_solve(mesh.surface, mesh, target, guess, tol=tol, max_iter=max_iter, system=system,
                               charts=charts, background=bg)
        except NewtonFailure as exc:
            step *= 0.5
            if abs(step) < min_step * abs(lam - prev.lam):
                raise NewtonFailure(f"continuation stalled at lambda = {cur.lam:.10g}: {exc}", exc.result) from exc
            continue
        cur = nxt
    return cur


def _result(op: MeanFieldOperator, phi, it, rn, history, charts, ok, cond):
    bg = op.background
    f = DiscreteField(op.mesh, phi + bg.nodal, True)
    return SolveResult(op.lam, f, it, float(rn), float(op.quad_values(phi).max()), peak_locations(f, charts),
                       list(history), ok, cond, phi.copy(), bg)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class Concentration:
    radii: tuple
    masses: dict  # radius -> list of mu_i(r)
    remainder: dict  # radius -> lam - sum mu_i(r), from the same quadrature
    total: dict  # radius -> sum mu_i + remainder
    peak_drift: list
    weights: list  # varrho(xi_i)


def concentration_diagnostics(result: SolveResult, cfg: reduced.Configuration, r0=0.2, radii=None):
    """Local masses mu_i(r) of lam V e^u / int V e^u over the chart disks U_r(xi_i)."""
    radii = (r0 / 2, r0 / 4) if radii is None else tuple(radii)
    mesh = result.u.mesh
    s = cfg.surface
    qp, wq = mesh.quadrature_points()
    uq = result.quad_values()
    e = np.exp(uq - uq.max()) * s.V(qp) * np.exp(s.psi(qp)) * wq
    dens = result.lam * e / e.sum()
    charts = [cfg.green.chart(p) for p in cfg.points]
    masses, rem, tot = {}, {}, {}
    for r in radii:
        inside = np.zeros(qp.shape, dtype=bool)
        mus = []
        for c in charts:
            _, ok = c.local_coords(qp, radius=r)
            ok &= ~inside
            mus.append(float(dens[ok].sum()))
            inside |= ok
        masses[r] = mus
        rem[r] = float(dens[~inside].sum())
        tot[r] = float(sum(mus) + rem[r])
    peaks = peak_locations(result.u, charts, radius=r0)
    drift = [abs(pk - s.to_param(p)) for pk, p in zip(peaks[1:], cfg.points)]
    return Concentration(radii, masses, rem, tot, drift, list(reduced.varrho(cfg)))


def multipliers(bcfg: BubbleConfig, lam):
    """Coefficients c_ij of sum c_ij Lap PZ_ij closest to the warm-start residual.

    Solves sum_t c_lt <Lap PZ_lt, PZ_ij> = <R(W), PZ_ij> with the Dirichlet
    Gram matrix; <R(W), .> is the discrete residual of the nodal ansatz.
    """
    W = Ansatz(bcfg).nodal()
    op = MeanFieldOperator(bcfg.system, lam)
    r = op.residual(W.values)
    Gm, idx = gram_pz(bcfg)
    rhs = np.array([float(r @ project_kernel(bcfg, i, j)(bcfg.mesh.z)) for i, j in idx])
    return np.linalg.solve(Gm, rhs), idx


# ---------------------------------------------------------------------------
# continuation


def geometric_schedule(lam_km, side, eps=DEFAULT_SCHEDULE_EPS, steps=DEFAULT_SCHEDULE_STEPS):
    sign = 1.0 if side == "right" else -1.0
    return [lam_km + sign * eps * 2.0**-n for n in range(steps)]


@dataclass
class FamilyRecord:
    configuration: reduced.Configuration
    coefficients: reduced.ReducedCoefficients
    results: list = field(default_factory=list)
    rhos: list = field(default_factory=list)
    concentration: list = field(default_factory=list)
    multipliers: list = field(default_factory=list)
    truncated: str | None = None
    mesh_nodes: int = 0

    @property
    def lams(self):
        return [r.lam for r in self.results]

    def rows(self):
        out = []
        for res, rho, con, c in zip(self.results, self.rhos, self.concentration, self.multipliers):
            r1, r2 = con.radii
            out.append({
                "lambda": f"{res.lam:.12g}",
                "rho": f"{rho:.10g}",
                "max_u": f"{res.max_u:.10g}",
                "mass_r0_2": ";".join(f"{x:.10g}" for x in con.masses[r1]),
                "mass_r0_4": ";".join(f"{x:.10g}" for x in con.masses[r2]),
                "remainder_r0_2": f"{con.remainder[r1]:.6e}",
                "peak_drift": ";".join(f"{x:.4e}" for x in con.peak_drift),
                "residual": f"{res.residual:.3e}",
                "iterations": str(res.iterations),
                "multiplier_max": f"{float(np.max(np.abs(c))) if len(c) else 0.0:.3e}",
            })
        return out

    def blowup_rate(self):
        """Least-squares slope of max u against log(1/|lam - lam_km|)."""
        lk = reduced.lam_km(self.configuration)
        if len(self.results) < 2:
            return None
        x = np.array([-math.log(abs(r.lam - lk)) for r in self.results])
        y = np.array([r.max_u for r in self.results])
        return float(np.polyfit(x, y, 1)[0])


CORE_RESOLUTION = 40.0
GRADING = 1.05


def graded_mesh(cfg: reduced.Configuration, h, rho_min, grading=GRADING, resolution=CORE_RESOLUTION):
    """Mesh of size h graded to h_core = rho_min / resolution at every point of cfg.

    Coarser cores shift the discrete concentration threshold by more than the
    smallest lambda - lambda_km of the default schedule and Newton stalls.

    The size field is in metric units, which agree with refined chart units at xi.
    """
    s = cfg.surface
    zs = [s.to_param(p) for p in cfg.points]
    refs = [fem.Refinement(z, rho_min / resolution, grading) for z in zs]
    return fem.build_mesh(s, h, refinements=refs, required_points=zs)


def continue_family(cfg: reduced.Configuration, schedule, coef=None, r0=0.2, h=0.02, mesh=None, tol=1e-9,
                    max_iter=40, log=None):
    """Solve along the schedule from W(rho(lam), xi) warm starts.

    Raises FamilyError when select_rho has no root for the first lambda; a
    later failure truncates the family and is recorded in ``truncated``.
    """
    lams = list(schedule)
    if len(lams) == 0:
        raise ValueError("empty schedule")
    d = np.diff(lams)
    if len(lams) > 1 and not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("schedule must be strictly monotone")
    coef = reduced.coefficients(cfg, r0=r0) if coef is None else coef
    rhos = []
    for lam in lams:
        rho = reduced.select_rho(coef, cfg, lam)
        if rho is None:
            if not rhos:
                raise FamilyError(f"no admissible rho at lambda = {lam:.6g} (wrong side of lambda_km or no bracket)")
            break
        rhos.append(rho)
    taus = coef.taus if coef.taus else [reduced.tau(cfg, i) for i in range(cfg.m)]
    rho_min = min(rhos) * math.sqrt(min(t.value for t in taus))
    if mesh is None:
        mesh = graded_mesh(cfg, h, rho_min)
    system = fem.assemble(mesh)
    rec = FamilyRecord(cfg, coef, mesh_nodes=mesh.n_nodes)
    charts = [cfg.green.chart(p) for p in cfg.points]
    prev = None
    for lam, rho in zip(lams, rhos):
        bcfg = BubbleConfig(cfg.green, cfg.points, cfg.k, rho, r0, lam, h=h, system=system)
        bg = Background.from_ansatz(Ansatz(bcfg), system)
        try:
            res = newton_solve(cfg.surface, mesh, lam, None, tol=tol, max_iter=max_iter, system=system, charts=charts,
                               background=bg)
        except NewtonFailure as exc:
            if prev is None:
                rec.truncated = f"lambda = {lam:.10g}: {exc}"
                break
            try:
                res = continuation_solve(prev, lam, system, tol=tol, max_iter=max_iter, charts=charts)
            except NewtonFailure as exc2:
                rec.truncated = f"lambda = {lam:.10g}: {exc2}"
                break
        rec.results.append(res)
        rec.rhos.append(rho)
        rec.concentration.append(concentration_diagnostics(res, cfg, r0))
        rec.multipliers.append(multipliers(bcfg, lam)[0])
        prev = res
        if log:
            log(f"lambda={lam:.8g} rho={rho:.5g} max_u={res.max_u:.5g} it={res.iterations} res={res.residual:.2e}")
    if len(rhos) < len(lams) and rec.truncated is None:
        rec.truncated = f"lambda = {lams[len(rhos)]:.10g}: no admissible rho"
    return rec
