"""Command-line front end: ``meanfield <command> --config FILE``.

Exit status 0 on success, 2 for configuration errors, 3 for numerical
failures.  Artifacts written before a numerical failure are kept.
"""

from __future__ import annotations

import csv
import io
import math
import sys
from importlib import metadata
from pathlib import Path

import click
import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import critical as C
from . import reduced as R
from . import solver as S
from . import verify as VF
from .ansatz import Ansatz, BubbleConfig
from .config import ConfigError, ExperimentConfig, load_config
from .fem import assemble, build_mesh
from .geometry import surface_catalog
from .green import GreenFunction, SingularEvaluation

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
COMMANDS = ("green", "reduced", "critical", "verify", "solve", "family", "report")
REPORT_FILES = ("green.txt", "reduced.txt", "critical.txt", "verify.txt", "solve.txt", "family.txt")


class NumericalFailure(RuntimeError):
    pass


def package_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


class Run:
    """One command invocation: config, output directory and report writers."""

    def __init__(self, cfg: ExperimentConfig, command, out, quiet):
        self.cfg = cfg
        self.command = command
        self.out = Path(out)
        self.quiet = quiet
        self.out.mkdir(parents=True, exist_ok=True)

    def log(self, msg):
        if not self.quiet:
            click.echo(msg, err=True)

    def header(self):
        return [
            f"# command: {self.command}",
            f"# config sha256: {self.cfg.digest()}",
            f"# versions: meanfield {package_version()}, numpy {np.__version__}, scipy {scipy.__version__}",
        ]

    def write_text(self, name, lines):
        path = self.out / name
        path.write_text("\n".join(self.header() + list(lines)) + "\n", encoding="utf-8")
        return path

    def write_csv(self, name, rows, columns=None):
        buf = io.StringIO()
        buf.write("\n".join(self.header()) + "\n")
        if rows:
            columns = columns or list(rows[0])
            w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        (self.out / name).write_text(buf.getvalue(), encoding="utf-8")

    # -- model construction
    def surface(self):
        try:
            return surface_catalog(self.cfg.surface, self.cfg.surface_params, self.cfg.potential)
        except ValueError as exc:
            raise ConfigError(f"surface: {exc}") from None

    def green(self, s=None):
        s = s or self.surface()
        return GreenFunction(s, self.cfg.resolved_backend, h=self.cfg.green_h)

    def points(self, s):
        cfg = self.cfg
        try:
            pts = [s.point(a, b) for a, b in cfg.interior]
            pts += [s.boundary_point(c, t) for c, t in cfg.boundary]
        except ValueError as exc:
            raise ConfigError(f"points: {exc}") from None
        return pts

    def configuration(self, required=True):
        s = self.surface()
        pts = self.points(s)
        if not pts:
            if required:
                raise ConfigError(f"points: the {self.command} command needs at least one point")
            return None
        try:
            return R.Configuration(self.green(s), pts, len(self.cfg.interior))
        except ValueError as exc:
            raise ConfigError(f"points: {exc}") from None


def _fmt(x):
    return f"{float(x):.12g}"


def _z(z):
    return f"{z.real:.12g}{z.imag:+.12g}j"


# ---------------------------------------------------------------------------
# commands


def cmd_green(run: Run):
    s = run.surface()
    gf = run.green(s)
    sources = run.points(s) or [s.interior_point(s.sample_points(1, 1)[0])]
    oracle = None
    if run.cfg.resolved_backend == "fem" and s.name in ("disk", "cylinder"):
        oracle = GreenFunction(s, "disk-images" if s.name == "disk" else "cylinder-series")
    Z = s.sample_points(6, 12)
    Z = Z[s.contains(Z, strict=True, tol=1e-6)]
    rows, lines = [], []
    for xi in sources:
        zx = s.to_param(xi)
        keep = np.abs(Z - zx) > 1e-6
        G = gf.G(Z[keep], xi)
        H = gf.regular(Z[keep], xi)
        Go = oracle.G(Z[keep], xi) if oracle is not None else None
        for a, z in enumerate(Z[keep]):
            row = {"x": _z(z), "xi": _z(zx), "G": _fmt(G[a]), "H": _fmt(H[a])}
            if Go is not None:
                row.update({"G_oracle": _fmt(Go[a]), "difference": f"{G[a] - Go[a]:.3e}"})
            rows.append(row)
        line = f"xi = {_z(zx)}  robin = {gf.robin(xi):.12g}"
        if oracle is not None:
            line += f"  robin_oracle = {oracle.robin(xi):.12g}  max|G - G_oracle| = {np.max(np.abs(G - Go)):.3e}"
        lines.append(line)
    run.write_csv("green.csv", rows)
    run.write_text("green.txt", [f"backend: {gf.backend}"] + lines)


def cmd_reduced(run: Run):
    cfg = run.configuration()
    coef = R.coefficients(cfg, r0=run.cfg.r0)
    s = cfg.surface
    lines = [
        f"points: {'; '.join(_z(s.to_param(p)) for p in cfg.points)}",
        f"F = {coef.F:.12g}",
        f"gradF = {'; '.join(f'{g:.10g}' for g in coef.gradF)}",
        f"A1 = {coef.A1:.10g}",
        f"A2 = {coef.A2:.10g}",
        f"B = {coef.B:.10g}  (r = {', '.join(f'{r:g}' for r in coef.r)}, spread {coef.r_spread:.3e})",
        f"case = {coef.case}",
    ]
    # F and |grad F| with the first point moved over a grid
    n = run.cfg.grid
    p0 = cfg.points[0]
    rows = []
    if p0.is_boundary:
        comp = s.boundary_components[int(p0.chart_id[len("boundary"):])]
        cands = [s.boundary_point(comp.index, comp.length * j / n) for j in range(n)]
    else:
        Z = np.unique(np.round(s.sample_points(n + 2, 4 * n), 12))
        cands = [s.interior_point(z) for z in Z[s.contains(Z, strict=True, tol=1e-6)]]
    for q in cands:
        try:
            moved = cfg.with_points((q,) + tuple(cfg.points[1:]))
            F, dF = R.f_km(moved)
        except (ValueError, SingularEvaluation):
            continue
        rows.append({"point": _z(s.to_param(q)), "F": _fmt(F), "grad_norm": f"{float(np.linalg.norm(dF)):.6e}"})
    run.write_csv("reduced_map.csv", rows)
    run.write_text("reduced.txt", lines)


def cmd_critical(run: Run):
    cfg0 = run.configuration()
    rng = np.random.default_rng(run.cfg.seed)
    n = C.manifold_dim(cfg0)
    starts = [cfg0]
    for _ in range(run.cfg.starts - 1):
        try:
            starts.append(cfg0.with_points(C.displace(cfg0, run.cfg.spread * rng.standard_normal(n))))
        except ValueError:
            continue
    rows, lines, found = [], [], 0
    for a, start in enumerate(starts):
        try:
            rep = C.find_critical(start, tol=run.cfg.critical_tol)
        except (C.CriticalSearchError, ValueError) as exc:
            lines.append(f"start {a}: no critical point ({exc})")
            continue
        found += 1
        C.classify_stability(rep)
        rec = {"start": str(a), **rep.record()}
        for th in _theorems(rep.configuration):
            cond = C.check_theorem_conditions(rep.configuration, th)
            rec[f"{th}_side"] = cond.side or "none"
        rows.append(rec)
        lines.append(f"start {a}: {rec['points']} {rec['classification']} |grad F| = {rec['grad_norm']}")
    run.write_csv("critical.csv", rows)
    run.write_text("critical.txt", lines)
    if not found:
        raise NumericalFailure("no start converged to a critical point")


def _theorems(cfg):
    out = []
    if cfg.m == 1:
        out.append("T1_1" if cfg.k == 1 else "T1_2")
    return out + ["T1_3"]


def cmd_verify(run: Run):
    checks = VF.run_all(log=run.log)
    text = VF.ledger_text(checks, header=run.header())
    (run.out / "verify.txt").write_text(text, encoding="utf-8")
    if not all(c.passed for c in checks):
        raise NumericalFailure("verification failed: " + ", ".join(str(c.criterion) for c in checks if not c.passed))


def cmd_solve(run: Run):
    cfg = run.cfg
    if cfg.lam is None:
        raise ConfigError("solver.lambda is required for the solve command")
    s = run.surface()
    conf = run.configuration(required=False)
    background, mesh = None, None
    note = "zero start"
    if conf is not None:
        coef = R.coefficients(conf, r0=cfg.r0)
        rho = None
        if cfg.lam != R.lam_km(conf):
            try:
                rho = R.select_rho(coef, conf, cfg.lam)
            except ValueError:
                pass
        if rho is not None:
            tau_min = min(t.value for t in coef.taus)
            mesh = S.graded_mesh(conf, cfg.h, rho * math.sqrt(tau_min))
            system = assemble(mesh)
            bcfg = BubbleConfig(conf.green, conf.points, conf.k, rho, cfg.r0, cfg.lam, h=cfg.h, system=system)
            background = S.Background.from_ansatz(Ansatz(bcfg), system)
            note = f"bubble start, rho = {rho:.10g}"
    if mesh is None:
        mesh = build_mesh(s, cfg.h)
        system = assemble(mesh)
    run.log(f"solving at lambda = {cfg.lam:g} on {mesh.n_nodes} nodes ({note})")
    try:
        res = S.newton_solve(s, mesh, cfg.lam, tol=cfg.tol, max_iter=cfg.max_iter, system=system,
                             background=background)
        failure = None
    except S.NewtonFailure as exc:
        res, failure = exc.result, str(exc)
    _write_solution(run, res, note, failure)
    if failure:
        raise NumericalFailure(failure)


def _write_solution(run, res, note, failure):
    lines = [
        f"lambda = {res.lam:.12g}",
        f"start: {note}",
        f"converged: {str(failure is None).lower()}",
        f"iterations = {res.iterations}",
        f"residual = {res.residual:.3e}",
        f"max_u = {res.max_u:.10g}",
        f"peak = {_z(res.peaks[0])}",
    ]
    if res.condition is not None:
        lines.append(f"condition_estimate = {res.condition:.3e}")
    if failure:
        lines.append(f"failure: {failure}")
    run.write_text("solve.txt", lines)
    m = res.u.mesh
    rows = [{"x": f"{z.real:.12g}", "y": f"{z.imag:.12g}", "u": f"{u:.12g}"} for z, u in zip(m.z, res.u.values)]
    run.write_csv("solution.csv", rows)


def cmd_family(run: Run):
    cfg = run.cfg
    conf = run.configuration()
    coef = R.coefficients(conf, r0=cfg.r0)
    lk = R.lam_km(conf)
    if cfg.schedule:
        schedule = list(cfg.schedule)
    else:
        side = cfg.side
        if side == "auto":
            cond = C.check_theorem_conditions(conf, "main", coef=coef)
            if cond.side is None:
                raise NumericalFailure(f"no sign case applies (A1 = {coef.A1:.3g}, A2 = {coef.A2:.3g}, "
                                       f"B = {coef.B:.3g}); set family.side or family.schedule")
            side = cond.side
        schedule = S.geometric_schedule(lk, side, cfg.eps, cfg.steps)
    try:
        rec = S.continue_family(conf, schedule, coef, r0=cfg.r0, h=cfg.h, tol=cfg.tol, max_iter=cfg.max_iter,
                                log=run.log)
    except S.FamilyError as exc:
        run.write_text("family.txt", [f"lambda_km = {lk:.12g}", f"failure: {exc}"])
        raise NumericalFailure(str(exc)) from None
    rows = rec.rows()
    run.write_csv("family.csv", rows)
    lines = [
        f"lambda_km = {lk:.12g}",
        f"A1 = {coef.A1:.10g}  A2 = {coef.A2:.10g}  B = {coef.B:.10g}  case = {coef.case}",
        f"mesh nodes = {rec.mesh_nodes}",
        f"solved = {len(rec.results)} of {len(schedule)}",
    ]
    rate = rec.blowup_rate()
    if rate is not None:
        lines.append(f"blowup rate d max_u / d log(1/|lambda - lambda_km|) = {rate:.6g}")
    lines.append("lambda, mass(r0/2) / varrho, mass(r0/4) / varrho, max_u")
    for res, con in zip(rec.results, rec.concentration):
        r1, r2 = con.radii
        w = con.weights
        lines.append(f"{res.lam:.12g}, {';'.join(f'{m / wi:.6f}' for m, wi in zip(con.masses[r1], w))}, "
                     f"{';'.join(f'{m / wi:.6f}' for m, wi in zip(con.masses[r2], w))}, {res.max_u:.6g}")
    if rec.truncated:
        lines.append(f"truncated: {rec.truncated}")
    run.write_text("family.txt", lines)
    if rec.truncated:
        raise NumericalFailure(f"family truncated at {rec.truncated}")


def cmd_report(run: Run):
    lines = []
    for name in REPORT_FILES:
        path = run.out / name
        if not path.exists():
            continue
        body = [ln for ln in path.read_text(encoding="utf-8").splitlines() if not ln.startswith("# command")]
        lines.append(f"== {name}")
        lines.extend(body)
    if not lines:
        lines = ["no reports found"]
    run.write_text("summary.txt", lines)


HANDLERS = {
    "green": cmd_green, "reduced": cmd_reduced, "critical": cmd_critical, "verify": cmd_verify,
    "solve": cmd_solve, "family": cmd_family, "report": cmd_report,
}


def execute(command, cfg: ExperimentConfig, out=None, seed=None, threads=1, quiet=False):
    """Run one command; returns the exit status."""
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    run = Run(cfg, command, out or cfg.out, quiet)
    (run.out / "config.used").write_text(cfg.to_text(), encoding="utf-8")
    try:
        with threadpool_limits(limits=threads), np.errstate(over="ignore"):
            HANDLERS[command](run)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except (NumericalFailure, S.NewtonFailure, C.CriticalSearchError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    return 0


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("command", type=click.Choice(COMMANDS))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True, help="Experiment config.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory (overrides output.dir).")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Seed for multi-start searches.")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True, help="BLAS thread limit.")
@click.option("--quiet", is_flag=True, help="No progress messages.")
def main(command, config_path, out, seed, threads, quiet):
    """Run COMMAND (green, reduced, critical, verify, solve, family, report)."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    sys.exit(execute(command, cfg, out, seed, threads, quiet))


if __name__ == "__main__":
    main()
