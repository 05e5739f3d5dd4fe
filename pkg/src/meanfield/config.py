"""Experiment configuration: a small sectioned key = value format.

    # comments start with '#', also after a value
    surface = disk              # shorthand for [surface] name
    [surface]
    potential = exp(0.5*(x^2+y^2))
    [points]
    interior = 0 0              # natural coordinates, entries separated by ';'
    [solver]
    tol = 1e-9

Duplicate keys, duplicate sections, unknown sections and unknown keys are
errors that name the offending line.  ``ExperimentConfig.to_text`` writes a
canonical form that parses back to an equal config.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields

SURFACES = ("disk", "cylinder", "cap")
BACKENDS = ("auto", "disk-images", "cylinder-series", "fem")
SIDES = ("auto", "right", "left")


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _pos_float(v):
    return v > 0


# section -> key -> (field name, type, default, validator, description of the range)
SCHEMA = {
    "surface": {
        "name": ("surface", str, None, lambda v: v in SURFACES, f"one of {', '.join(SURFACES)}"),
        "L": ("length", float, 2.0, _pos_float, "L > 0"),
        "theta0": ("theta0", float, math.pi / 2, lambda v: 0 < v < math.pi, "0 < theta0 < pi"),
        "potential": ("potential", str, "1", lambda v: bool(v.strip()), "a nonempty expression"),
    },
    "points": {
        "interior": ("interior", str, (), None, ""),
        "boundary": ("boundary", str, (), None, ""),
        "m": ("m", int, None, lambda v: v >= 1, "m >= 1"),
        "k": ("k", int, None, lambda v: v >= 0, "k >= 0"),
    },
    "green": {
        "backend": ("backend", str, "auto", lambda v: v in BACKENDS, f"one of {', '.join(BACKENDS)}"),
        "h": ("green_h", float, 0.05, lambda v: 0 < v <= 1, "0 < h <= 1"),
    },
    "mesh": {
        "h": ("h", float, 0.05, lambda v: 0 < v <= 1, "0 < h <= 1"),
    },
    "ansatz": {
        "kappa": ("kappa", float, 0.3, lambda v: 0 < v < 1, "0 < kappa < 1"),
        "r0": ("r0", float, 0.2, _pos_float, "r0 > 0"),
    },
    "solver": {
        "tol": ("tol", float, 1e-9, _pos_float, "tol > 0"),
        "max_iter": ("max_iter", int, 40, lambda v: v >= 1, "max_iter >= 1"),
        "lambda": ("lam", float, None, lambda v: v >= 0, "lambda >= 0"),
    },
    "family": {
        "eps": ("eps", float, 0.4, _pos_float, "eps > 0"),
        "steps": ("steps", int, 7, lambda v: v >= 1, "steps >= 1"),
        "side": ("side", str, "auto", lambda v: v in SIDES, f"one of {', '.join(SIDES)}"),
        "schedule": ("schedule", str, (), None, ""),
        "lambda_window": ("lambda_window", float, 10.0, _pos_float, "C > 0"),
    },
    "critical": {
        "starts": ("starts", int, 4, lambda v: v >= 1, "starts >= 1"),
        "tol": ("critical_tol", float, 1e-8, _pos_float, "tol > 0"),
        "spread": ("spread", float, 0.1, _pos_float, "spread > 0"),
    },
    "reduced": {
        "grid": ("grid", int, 5, lambda v: 1 <= v <= 50, "1 <= grid <= 50"),
    },
    "output": {
        "dir": ("out", str, "out", lambda v: bool(v.strip()), "a nonempty path"),
        "seed": ("seed", int, 0, lambda v: v >= 0, "seed >= 0"),
    },
}
TOP_LEVEL = {"surface": ("surface", "name")}


@dataclass(frozen=True)
class ExperimentConfig:
    surface: str
    length: float = 2.0
    theta0: float = math.pi / 2
    potential: str = "1"
    interior: tuple = ()  # natural coordinate pairs
    boundary: tuple = ()  # (component, arc length) pairs
    m: int | None = None
    k: int | None = None
    backend: str = "auto"
    green_h: float = 0.05
    h: float = 0.05
    kappa: float = 0.3
    r0: float = 0.2
    tol: float = 1e-9
    max_iter: int = 40
    lam: float | None = None
    eps: float = 0.4
    steps: int = 7
    side: str = "auto"
    schedule: tuple = ()
    lambda_window: float = 10.0
    starts: int = 4
    critical_tol: float = 1e-8
    spread: float = 0.1
    grid: int = 5
    out: str = "out"
    seed: int = 0

    @property
    def surface_params(self):
        if self.surface == "cylinder":
            return {"L": self.length}
        if self.surface == "cap":
            return {"theta0": self.theta0}
        return {}

    @property
    def resolved_backend(self):
        if self.backend != "auto":
            return self.backend
        return {"disk": "disk-images", "cylinder": "cylinder-series"}.get(self.surface, "fem")

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return ExperimentConfig(**d)

    def to_text(self):
        """Canonical serialization; every field is written explicitly."""
        vals = asdict(self)
        lines = []
        for section, keys in SCHEMA.items():
            body = []
            for key, (name, typ, *_rest) in keys.items():
                v = vals[name]
                if v is None or (name in ("interior", "boundary", "schedule") and not v):
                    continue
                if name == "interior":
                    v = "; ".join(f"{_num(a)} {_num(b)}" for a, b in v)
                elif name == "boundary":
                    v = "; ".join(f"{int(c)} {_num(t)}" for c, t in v)
                elif name == "schedule":
                    v = "; ".join(_num(x) for x in v)
                elif typ is float:
                    v = _num(v)
                body.append(f"{key} = {v}")
            if body:
                lines.append(f"[{section}]")
                lines.extend(body)
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def _num(x):
    return repr(float(x))


def _strip_comment(line):
    i = line.find("#")
    return line if i < 0 else line[:i]


def _convert(raw, typ, key, lineno):
    try:
        if typ is int:
            f = float(raw)
            if not f.is_integer():
                raise ValueError
            return int(f)
        if typ is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ.__name__}", lineno) from None


def _pairs(text, key, lineno, first_int=False):
    out = []
    for entry in filter(None, (e.strip() for e in text.split(";"))):
        parts = entry.replace(",", " ").split()
        if len(parts) != 2:
            raise ConfigError(f"{key}: entry {entry!r} needs two numbers", lineno)
        a = _convert(parts[0], int if first_int else float, key, lineno)
        b = _convert(parts[1], float, key, lineno)
        out.append((a, b))
    return tuple(out)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; defaults are filled in for absent keys."""
    section = None
    seen_sections = set()
    found = {}  # field name -> (raw value, line)
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            if section in seen_sections:
                raise ConfigError(f"duplicate section [{section}]", lineno)
            seen_sections.add(section)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno)
        if section is None:
            if key not in TOP_LEVEL:
                raise ConfigError(f"unknown top-level key {key!r}", lineno)
            sec, key = TOP_LEVEL[key]
        else:
            sec = section
        if key not in SCHEMA[sec]:
            raise ConfigError(f"unknown key {key!r} in [{sec}]", lineno)
        name = SCHEMA[sec][key][0]
        if name in found:
            raise ConfigError(f"duplicate key {sec}.{key} (first set on line {found[name][1]})", lineno)
        found[name] = (value, lineno, sec, key)

    values = {}
    for sec, keys in SCHEMA.items():
        for key, (name, typ, default, check, rng) in keys.items():
            if name not in found:
                if default is None and name == "surface":
                    raise ConfigError("missing required field surface.name")
                values[name] = default
                continue
            raw, lineno, _, _ = found[name]
            if name == "interior":
                values[name] = _pairs(raw, "interior", lineno)
                continue
            if name == "boundary":
                values[name] = _pairs(raw, "boundary", lineno, first_int=True)
                continue
            if name == "schedule":
                values[name] = tuple(_convert(x.strip(), float, "schedule", lineno)
                                     for x in raw.split(";") if x.strip())
                continue
            v = _convert(raw, typ, f"{sec}.{key}", lineno)
            if check is not None and not check(v):
                raise ConfigError(f"{sec}.{key} = {raw} out of range ({rng})", lineno)
            values[name] = v
    cfg = ExperimentConfig(**values)
    _validate(cfg, found)
    return cfg


def _validate(cfg: ExperimentConfig, found):
    def line_of(name):
        return found[name][1] if name in found else None

    n_int, n_bd = len(cfg.interior), len(cfg.boundary)
    if cfg.m is not None and (n_int or n_bd) and cfg.m != n_int + n_bd:
        raise ConfigError(f"points.m = {cfg.m} but {n_int + n_bd} points are listed", line_of("m"))
    if cfg.k is not None and (n_int or n_bd) and cfg.k != n_int:
        raise ConfigError(f"points.k = {cfg.k} but {n_int} interior points are listed", line_of("k"))
    if cfg.m is not None and cfg.k is not None and cfg.k > cfg.m:
        raise ConfigError("points.k must not exceed points.m", line_of("k"))
    ncomp = 2 if cfg.surface == "cylinder" else 1
    for c, _ in cfg.boundary:
        if not 0 <= c < ncomp:
            raise ConfigError(f"boundary component {c} does not exist on the {cfg.surface}", line_of("boundary"))
    if cfg.backend == "disk-images" and cfg.surface != "disk":
        raise ConfigError("green.backend = disk-images needs surface disk", line_of("backend"))
    if cfg.backend == "cylinder-series" and cfg.surface != "cylinder":
        raise ConfigError("green.backend = cylinder-series needs surface cylinder", line_of("backend"))
    sched = cfg.schedule
    if len(sched) > 1:
        d = [b - a for a, b in zip(sched, sched[1:])]
        if not (all(x > 0 for x in d) or all(x < 0 for x in d)):
            raise ConfigError("family.schedule must be strictly monotone", line_of("schedule"))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 ({exc.reason})") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def field_names():
    return [f.name for f in fields(ExperimentConfig)]
