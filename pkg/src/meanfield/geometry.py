"""Surface models with boundary, refined isothermal charts and curvature data.

Every catalog surface carries one global conformal parametrization
``g = exp(psi(z)) |dz|^2`` over a planar disk or annulus, and points are
handled internally as complex numbers ``z`` in that parametrization.  Local
charts are holomorphic maps ``y = T(B(z) - w0)`` where ``B`` is a base map
(rotation, Cayley transform or logarithm), ``w0`` a translation and ``T`` a
quadratic conformal correction chosen so that the conformal factor of the
chart vanishes to first order at the center (second coordinate fixed on the
boundary).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np
import sympy as sp

INTERIOR = "interior"
BOUNDARY = "boundary"
PARAM_CHART = "param"


@dataclass(frozen=True)
class SurfacePoint:
    """A point of a surface.

    Interior points live in the global parametrization (``chart_id ==
    "param"``, coords = real and imaginary part of z).  Boundary points live in
    a boundary chart ``"boundary<k>"`` with coords ``(t, 0)`` where ``t`` is
    the arc parameter.
    """

    location_tag: str
    chart_id: str
    coords: tuple
    arc_parameter: float | None = None

    @property
    def is_boundary(self) -> bool:
        return self.location_tag == BOUNDARY


def rho_weight(p: SurfacePoint) -> float:
    """Bubble mass attached to a point: 8 pi inside, 4 pi on the boundary."""
    _check_point(p)
    return 4.0 * math.pi if p.is_boundary else 8.0 * math.pi


def kernel_count(p: SurfacePoint) -> int:
    """Number of translation kernels at the point (2 inside, 1 on the boundary)."""
    _check_point(p)
    return 1 if p.is_boundary else 2


def _check_point(p):
    if not isinstance(p, SurfacePoint):
        raise TypeError("expected a SurfacePoint")
    if p.location_tag not in (INTERIOR, BOUNDARY):
        raise ValueError(f"unknown location tag {p.location_tag!r}")
    if p.location_tag == INTERIOR and p.chart_id != PARAM_CHART:
        raise ValueError(f"unknown chart_id {p.chart_id!r} for an interior point")
    if p.location_tag == BOUNDARY and not re.fullmatch(r"boundary\d+", str(p.chart_id)):
        raise ValueError(f"unknown chart_id {p.chart_id!r} for a boundary point")


# ---------------------------------------------------------------------------
# holomorphic building blocks


class HolomorphicMap:
    def __call__(self, z):
        raise NotImplementedError

    def deriv(self, z):
        raise NotImplementedError

    def deriv2(self, z):
        raise NotImplementedError

    def inverse(self, y):
        raise NotImplementedError


@dataclass(frozen=True)
class Rotation(HolomorphicMap):
    """y = exp(-i alpha) z."""

    alpha: float = 0.0

    def __call__(self, z):
        return np.exp(-1j * self.alpha) * np.asarray(z, dtype=complex)

    def deriv(self, z):
        return np.full(np.shape(z), np.exp(-1j * self.alpha), dtype=complex)

    def deriv2(self, z):
        return np.zeros(np.shape(z), dtype=complex)

    def inverse(self, y):
        return np.exp(1j * self.alpha) * np.asarray(y, dtype=complex)


@dataclass(frozen=True)
class Cayley(HolomorphicMap):
    """Disk of radius R onto the upper half plane, R e^{i beta} -> 0, unit speed there."""

    radius: float
    beta: float

    @property
    def anchor(self):
        return self.radius * np.exp(1j * self.beta)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        a = self.anchor
        return 2j * self.radius * (a - z) / (a + z)

    def deriv(self, z):
        z = np.asarray(z, dtype=complex)
        a = self.anchor
        return -4j * self.radius * a / (a + z) ** 2

    def deriv2(self, z):
        z = np.asarray(z, dtype=complex)
        a = self.anchor
        return 8j * self.radius * a / (a + z) ** 3

    def inverse(self, y):
        y = np.asarray(y, dtype=complex)
        return self.anchor * (2j * self.radius - y) / (2j * self.radius + y)


@dataclass(frozen=True)
class LogStrip(HolomorphicMap):
    """y = k (log(z e^{-i beta}) - s0) with k = +i (inner circle) or -i (outer)."""

    beta: float
    s0: float
    k: complex

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return self.k * (np.log(z * np.exp(-1j * self.beta)) - self.s0)

    def deriv(self, z):
        return self.k / np.asarray(z, dtype=complex)

    def deriv2(self, z):
        return -self.k / np.asarray(z, dtype=complex) ** 2

    def inverse(self, y):
        y = np.asarray(y, dtype=complex)
        return np.exp(1j * self.beta) * np.exp(y / self.k + self.s0)


@dataclass(frozen=True)
class Translation(HolomorphicMap):
    w0: complex

    def __call__(self, z):
        return np.asarray(z, dtype=complex) - self.w0

    def deriv(self, z):
        return np.ones(np.shape(z), dtype=complex)

    def deriv2(self, z):
        return np.zeros(np.shape(z), dtype=complex)

    def inverse(self, y):
        return np.asarray(y, dtype=complex) + self.w0


@dataclass(frozen=True)
class QuadraticConformalMap(HolomorphicMap):
    """T(w) = b e^{i theta} w + c w^2 in complex notation.

    With real ``c`` this is b R_theta y + c (y1^2 - y2^2, 2 y1 y2); a complex
    ``c`` combines the two real corrections into one step.
    """

    theta: float = 0.0
    b: float = 1.0
    c: complex = 0.0

    @property
    def a(self):
        return self.b * np.exp(1j * self.theta)

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        return self.a * w + self.c * w * w

    def deriv(self, w):
        return self.a + 2.0 * self.c * np.asarray(w, dtype=complex)

    def deriv2(self, w):
        return np.full(np.shape(w), 2.0 * self.c, dtype=complex)

    def inverse(self, y):
        y = np.asarray(y, dtype=complex)
        if self.c == 0:
            return y / self.a
        disc = np.sqrt(self.a * self.a + 4.0 * self.c * y)
        # pick the root that is close to y / a for small y
        flip = (disc * np.conj(self.a)).real < 0
        disc = np.where(flip, -disc, disc)
        return 2.0 * y / (self.a + disc)


@dataclass(frozen=True)
class Composed(HolomorphicMap):
    """maps[0] applied first."""

    maps: tuple

    def __call__(self, z):
        for m in self.maps:
            z = m(z)
        return z

    def deriv(self, z):
        d = np.ones(np.shape(z), dtype=complex)
        for m in self.maps:
            d = d * m.deriv(z)
            z = m(z)
        return d

    def deriv2(self, z):
        d1 = np.ones(np.shape(z), dtype=complex)
        d2 = np.zeros(np.shape(z), dtype=complex)
        for m in self.maps:
            md1 = m.deriv(z)
            md2 = m.deriv2(z)
            d2 = md2 * d1 * d1 + md1 * d2
            d1 = md1 * d1
            z = m(z)
        return d2

    def inverse(self, y):
        for m in reversed(self.maps):
            y = m.inverse(y)
        return y


# ---------------------------------------------------------------------------
# charts


@dataclass(frozen=True, eq=False)
class IsothermalChart:
    """Holomorphic chart y = transform(z) with metric e^{phi(y)} |dy|^2."""

    surface: "SurfaceModel"
    center: SurfacePoint
    radius: float
    kind: str  # "interior-disk" | "boundary-half-disk"
    transform: HolomorphicMap

    @property
    def is_boundary(self):
        return self.kind == "boundary-half-disk"

    @property
    def center_param(self) -> complex:
        return self.surface.to_param(self.center)

    def forward(self, z):
        return self.transform(z)

    def inverse(self, y):
        return self.transform.inverse(y)

    def phi(self, y):
        z = self.inverse(y)
        return self.surface.psi(z) - 2.0 * np.log(np.abs(self.transform.deriv(z)))

    def grad_phi(self, y):
        """Complex gradient d1 phi + i d2 phi in chart coordinates."""
        z = self.inverse(y)
        d1 = self.transform.deriv(z)
        d2 = self.transform.deriv2(z)
        return self.surface.grad_psi(z) * np.conj(1.0 / d1) - 2.0 * np.conj(d2 / d1**2)

    def jacobian(self, z):
        """|dy/dz|^2 = e^{psi - phi}."""
        return np.abs(self.transform.deriv(z)) ** 2

    def inside(self, z, radius=None, tol=1e-9):
        """Mask of parametrization points covered by the chart disk of the given radius."""
        z = np.asarray(z, dtype=complex)
        R = self.radius if radius is None else radius
        with np.errstate(all="ignore"):
            y = self.forward(z)
            ok = np.isfinite(y) & (np.abs(y) < R)
            if self.is_boundary:
                ok &= y.imag > -tol * (1.0 + R)
            back = self.inverse(np.where(ok, y, 0.0))
            ok &= np.abs(back - z) <= 1e-8 * (1.0 + np.abs(z))
        return ok

    def local_coords(self, z, radius=None):
        """Chart coordinates where inside, NaN elsewhere."""
        z = np.asarray(z, dtype=complex)
        y = self.forward(z)
        ok = self.inside(z, radius)
        return np.where(ok, y, np.nan + 0j), ok

    def point_at(self, y):
        """SurfacePoint at chart coordinate y (boundary if y is on y2 = 0 in a boundary chart)."""
        z = complex(self.inverse(complex(y)))
        if self.is_boundary and abs(complex(y).imag) < 1e-14:
            return self.surface.boundary_point_from_param(z)
        return self.surface.interior_point(z)


# ---------------------------------------------------------------------------
# potential


_ALLOWED_TOKEN = re.compile(r"\s*(\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|exp|log|pi|x|y|z|\*\*|[-+*/()^])")


def _tokenize_potential(text: str):
    pos = 0
    out = []
    text = text.strip()
    while pos < len(text):
        m = _ALLOWED_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"potential: unexpected input at column {pos + 1}: {text[pos:pos + 10]!r}")
        out.append(m.group(1))
        pos = m.end()
    return out


def parse_potential(text: str) -> sp.Expr:
    """Parse an expression tree in the ambient coordinates x, y, z."""
    if not text or not text.strip():
        raise ValueError("potential: empty expression")
    text = "".join("**" if t == "^" else t for t in _tokenize_potential(text))
    x, y, z = sp.symbols("x y z", real=True)
    local = {"x": x, "y": y, "z": z, "exp": sp.exp, "log": sp.log, "pi": sp.pi}
    try:
        expr = sp.sympify(text, locals=local, rational=False)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ValueError(f"potential: cannot parse {text!r}: {exc}") from None
    for node in sp.preorder_traversal(expr):
        if isinstance(node, sp.Symbol) and node not in (x, y, z):
            raise ValueError(f"potential: unknown symbol {node}")
        if isinstance(node, sp.Function) and node.func not in (sp.exp, sp.log):
            raise ValueError(f"potential: function {node.func} not allowed")
        if isinstance(node, sp.Pow) and not node.exp.is_number:
            raise ValueError("potential: exponents must be numbers")
    return expr


@dataclass(frozen=True, eq=False)
class Potential:
    """V as a function on the parametrization, with derivatives of log V."""

    text: str
    value: object
    log_grad: object  # complex gradient of log V in the parametrization
    log_lap: object  # flat Laplacian of log V in the parametrization

    def __call__(self, z):
        return self.value(z)


def _compile_potential(text, ambient):
    expr = parse_potential(text)
    u, v = sp.symbols("u v", real=True)
    X, Y, Z = ambient(u, v)
    x, y, z = sp.symbols("x y z", real=True)
    e = expr.subs({x: X, y: Y, z: Z})
    le = sp.log(e)
    gu, gv = sp.diff(le, u), sp.diff(le, v)
    lap = sp.diff(gu, u) + sp.diff(gv, v)
    fe = sp.lambdify((u, v), e, "numpy")
    fgu = sp.lambdify((u, v), gu, "numpy")
    fgv = sp.lambdify((u, v), gv, "numpy")
    flap = sp.lambdify((u, v), lap, "numpy")

    def wrap(f):
        def g(zz):
            zz = np.asarray(zz, dtype=complex)
            out = f(zz.real, zz.imag)
            return np.broadcast_to(np.asarray(out, dtype=float), zz.shape).copy()

        return g

    fe_, fgu_, fgv_, flap_ = wrap(fe), wrap(fgu), wrap(fgv), wrap(flap)
    return Potential(
        text=text,
        value=fe_,
        log_grad=lambda zz: fgu_(zz) + 1j * fgv_(zz),
        log_lap=flap_,
    )


# ---------------------------------------------------------------------------
# surfaces


@dataclass(frozen=True)
class BoundaryCircle:
    """A boundary component |z| = radius, parametrized by arc length t."""

    index: int
    radius: float
    outward: int  # +1: outward normal points to larger |z|
    speed: float  # arc length per radian of the parametrization angle
    geodesic_curvature: float

    @property
    def chart_id(self):
        return f"boundary{self.index}"

    @property
    def length(self):
        return 2.0 * math.pi * self.speed

    def param(self, t):
        return self.radius * np.exp(1j * np.asarray(t, dtype=float) / self.speed)

    def arc(self, z):
        return np.mod(np.angle(z), 2.0 * math.pi) * self.speed


class SurfaceModel:
    """Base class: a surface with boundary given by one conformal parametrization."""

    name: str
    params: dict
    r_in: float
    r_out: float
    boundary_components: tuple
    euler_characteristic: int

    def __init__(self, potential_text: str = "1"):
        self.potential_text = potential_text
        self.potential = _compile_potential(potential_text, self.ambient)
        self._check_potential()

    # -- metric data, overridden
    def psi(self, z):
        raise NotImplementedError

    def grad_psi(self, z):
        raise NotImplementedError

    def gauss_curvature(self, z):
        raise NotImplementedError

    def ambient(self, u, v):
        raise NotImplementedError

    @property
    def area(self) -> float:
        raise NotImplementedError

    def base_chart_map(self, p: SurfacePoint, rotation: float = 0.0) -> HolomorphicMap:
        raise NotImplementedError

    # -- shared
    def with_potential(self, text: str) -> "SurfaceModel":
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.potential_text = text
        new.potential = _compile_potential(text, new.ambient)
        new._check_potential()
        return new

    def _check_potential(self):
        zs = self.sample_points(24, 48)
        vals = self.potential(zs)
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError(f"potential {self.potential_text!r} is not positive on {self.name}")

    def sample_points(self, nr=16, nt=32):
        r = np.linspace(self.r_in, self.r_out, nr)
        t = np.linspace(0.0, 2 * math.pi, nt, endpoint=False)
        return (r[:, None] * np.exp(1j * t[None, :])).ravel()

    def V(self, z):
        return self.potential(z)

    def laplace_log_V(self, z):
        """Laplace-Beltrami of log V."""
        return np.exp(-self.psi(z)) * self.potential.log_lap(z)

    def grad_log_V(self, z):
        """Complex gradient of log V in the parametrization."""
        return self.potential.log_grad(z)

    def component_of(self, z) -> BoundaryCircle:
        z = complex(z)
        comps = sorted(self.boundary_components, key=lambda c: abs(abs(z) - c.radius))
        return comps[0]

    def normal_derivative_log_V(self, z):
        """Outward normal derivative of log V at a boundary point (metric units)."""
        z = complex(z)
        comp = self.component_of(z)
        n = comp.outward * z / abs(z)
        g = complex(self.grad_log_V(np.array([z]))[0])
        return float((np.conj(n) * g).real * math.exp(-0.5 * float(self.psi(np.array([z]))[0])))

    def geodesic_curvature(self, p) -> float:
        z = self.to_param(p) if isinstance(p, SurfacePoint) else complex(p)
        return self.component_of(z).geodesic_curvature

    def contains(self, z, strict=False, tol=1e-12):
        r = np.abs(np.asarray(z, dtype=complex))
        if strict:
            inner = (r > self.r_in + tol) if self.r_in > 0 else np.ones(r.shape, bool)
            return inner & (r < self.r_out - tol)
        return (r >= self.r_in - tol) & (r <= self.r_out + tol)

    def clamp(self, z):
        """Radial projection of parameter values onto the closed annulus r_in <= |z| <= r_out."""
        z = np.asarray(z, dtype=complex)
        r = np.abs(z)
        rc = np.clip(r, self.r_in, self.r_out)
        return np.where(r > 0, z * (rc / np.where(r > 0, r, 1.0)), z)

    # points
    def interior_point(self, z) -> SurfacePoint:
        z = complex(z)
        if not bool(self.contains(np.array([z]), strict=True)[0]):
            raise ValueError(f"{z} is not an interior point of {self.name}")
        return SurfacePoint(INTERIOR, PARAM_CHART, (z.real, z.imag))

    def boundary_point(self, component: int, t: float) -> SurfacePoint:
        comp = self.boundary_components[component]
        t = float(np.mod(t, comp.length))
        return SurfacePoint(BOUNDARY, comp.chart_id, (t, 0.0), t)

    def boundary_point_from_param(self, z) -> SurfacePoint:
        comp = self.component_of(z)
        return self.boundary_point(comp.index, float(comp.arc(complex(z))))

    def to_param(self, p: SurfacePoint) -> complex:
        _check_point(p)
        if p.is_boundary:
            idx = int(p.chart_id[len("boundary"):])
            if idx >= len(self.boundary_components):
                raise ValueError(f"unknown chart_id {p.chart_id!r}")
            if abs(p.coords[1]) > 1e-12:
                raise ValueError("boundary point off the boundary line y2 = 0")
            return complex(self.boundary_components[idx].param(p.coords[0]))
        return complex(p.coords[0], p.coords[1])

    def point(self, *natural) -> SurfacePoint:
        """Interior point from natural coordinates (see ``natural_to_param``)."""
        return self.interior_point(self.natural_to_param(*natural))

    def natural_to_param(self, a, b) -> complex:
        return complex(a, b)

    def base_chart(self, p: SurfacePoint, rotation: float = 0.0) -> IsothermalChart:
        kind = "boundary-half-disk" if p.is_boundary else "interior-disk"
        tr = self.base_chart_map(p, rotation)
        chart = IsothermalChart(self, p, 1.0, kind, tr)
        return replace(chart, radius=admissible_radius(chart, distortion=None))

    def distance_estimate(self, z1, z2):
        """Metric distance estimate from the midpoint conformal factor."""
        zm = 0.5 * (np.asarray(z1) + np.asarray(z2))
        return np.abs(np.asarray(z1) - np.asarray(z2)) * np.exp(0.5 * self.psi(zm))


class DiskSurface(SurfaceModel):
    def __init__(self, potential_text="1"):
        self.name = "disk"
        self.params = {}
        self.r_in, self.r_out = 0.0, 1.0
        self.euler_characteristic = 1
        self.boundary_components = (BoundaryCircle(0, 1.0, +1, 1.0, 1.0),)
        super().__init__(potential_text)

    @property
    def area(self):
        return math.pi

    def psi(self, z):
        return np.zeros(np.shape(z))

    def grad_psi(self, z):
        return np.zeros(np.shape(z), dtype=complex)

    def gauss_curvature(self, z):
        return np.zeros(np.shape(z))

    def ambient(self, u, v):
        return u, v, sp.Integer(0)

    def base_chart_map(self, p, rotation=0.0):
        if p.is_boundary:
            return Cayley(1.0, float(np.angle(self.to_param(p))) + rotation)
        return Rotation(rotation)


class CapSurface(SurfaceModel):
    """Spherical cap {polar angle <= theta0} of the unit sphere, stereographic parametrization."""

    def __init__(self, theta0, potential_text="1"):
        if not (0.0 < theta0 < math.pi):
            raise ValueError("cap: theta0 must lie in (0, pi)")
        self.name = "cap"
        self.theta0 = float(theta0)
        self.params = {"theta0": float(theta0)}
        self.r_in, self.r_out = 0.0, math.tan(theta0 / 2.0)
        self.euler_characteristic = 1
        kg = math.cos(theta0) / math.sin(theta0)
        if abs(theta0 - math.pi / 2) < 1e-15:
            kg = 0.0
        self.boundary_components = (BoundaryCircle(0, self.r_out, +1, math.sin(theta0), kg),)
        super().__init__(potential_text)

    @property
    def area(self):
        return 2.0 * math.pi * (1.0 - math.cos(self.theta0))

    def psi(self, z):
        return math.log(4.0) - 2.0 * np.log1p(np.abs(z) ** 2)

    def grad_psi(self, z):
        z = np.asarray(z, dtype=complex)
        return -4.0 * z / (1.0 + np.abs(z) ** 2)

    def gauss_curvature(self, z):
        return np.ones(np.shape(z))

    def ambient(self, u, v):
        q = 1 + u**2 + v**2
        return 2 * u / q, 2 * v / q, (2 - q) / q

    def natural_to_param(self, polar, azimuth):
        return math.tan(polar / 2.0) * complex(math.cos(azimuth), math.sin(azimuth))

    def base_chart_map(self, p, rotation=0.0):
        if p.is_boundary:
            return Cayley(self.r_out, float(np.angle(self.to_param(p))) + rotation)
        return Rotation(rotation)


class CylinderSurface(SurfaceModel):
    """Flat cylinder [0, L] x S^1 parametrized by the annulus z = e^{s + i theta}."""

    def __init__(self, L, potential_text="1"):
        if not L > 0:
            raise ValueError("cylinder: L must be positive")
        self.name = "cylinder"
        self.L = float(L)
        self.params = {"L": float(L)}
        self.r_in, self.r_out = 1.0, math.exp(L)
        self.euler_characteristic = 0
        self.boundary_components = (
            BoundaryCircle(0, 1.0, -1, 1.0, 0.0),
            BoundaryCircle(1, self.r_out, +1, 1.0, 0.0),
        )
        super().__init__(potential_text)

    @property
    def area(self):
        return 2.0 * math.pi * self.L

    def psi(self, z):
        return -2.0 * np.log(np.abs(z))

    def grad_psi(self, z):
        z = np.asarray(z, dtype=complex)
        return -2.0 * z / np.abs(z) ** 2

    def gauss_curvature(self, z):
        return np.zeros(np.shape(z))

    def ambient(self, u, v):
        r = sp.sqrt(u**2 + v**2)
        return u / r, v / r, sp.log(r)

    def natural_to_param(self, theta, s):
        return complex(np.exp(s + 1j * theta))

    def base_chart_map(self, p, rotation=0.0):
        z = self.to_param(p)
        beta = float(np.angle(z)) + rotation
        if p.is_boundary:
            if self.component_of(z).index == 1:
                return LogStrip(beta, self.L, -1j)
            return LogStrip(beta, 0.0, 1j)
        return LogStrip(beta, math.log(abs(z)), 1j)


def surface_catalog(name: str, params: dict | None = None, potential: str = "1") -> SurfaceModel:
    params = dict(params or {})
    if name == "disk":
        if params:
            raise ValueError(f"disk: unexpected parameters {sorted(params)}")
        return DiskSurface(potential)
    if name == "cylinder":
        unknown = set(params) - {"L"}
        if unknown:
            raise ValueError(f"cylinder: unexpected parameters {sorted(unknown)}")
        return CylinderSurface(float(params.get("L", 2.0)), potential)
    if name == "cap":
        unknown = set(params) - {"theta0"}
        if unknown:
            raise ValueError(f"cap: unexpected parameters {sorted(unknown)}")
        return CapSurface(float(params.get("theta0", math.pi / 2)), potential)
    raise ValueError(f"unknown surface {name!r}")


# ---------------------------------------------------------------------------
# refined charts


def _ring_samples(radius, boundary, n_r=400, n_t=96):
    rr = radius * np.linspace(1.0 / n_r, 1.0, n_r)
    if boundary:
        tt = np.linspace(0.0, math.pi, n_t)
    else:
        tt = np.linspace(0.0, 2 * math.pi, n_t, endpoint=False)
    return rr, rr[:, None] * np.exp(1j * tt[None, :])


def admissible_radius(chart: IsothermalChart, r_cap: float = 1.0, distortion=(0.5, 2.0)) -> float:
    """Largest chart radius (<= r_cap) on which the chart is a valid diffeomorphism.

    The disk (half disk) of that radius must map into the surface (strictly
    inside for interior charts), the map must invert, and when ``distortion``
    is given the conformal factor e^phi must stay inside that interval.
    """
    s = chart.surface
    rr, Y = _ring_samples(r_cap, chart.is_boundary)
    with np.errstate(all="ignore"):
        Z = chart.inverse(Y)
        good = np.isfinite(Z)
        good &= np.abs(chart.forward(np.where(good, Z, 0)) - Y) <= 1e-9 * (1 + np.abs(Y))
        inner = Y.imag > 1e-12 if chart.is_boundary else np.ones(Y.shape, bool)
        strict = s.contains(np.where(good, Z, 0), strict=True)
        closed = s.contains(np.where(good, Z, 0), strict=False, tol=1e-9)
        good &= np.where(inner, strict, closed)
        if distortion is not None:
            ph = chart.phi(Y)
            good &= (np.exp(ph) >= distortion[0]) & (np.exp(ph) <= distortion[1])
        d = chart.transform.deriv(np.where(good, Z, 0))
        good &= np.abs(d) > 1e-12
    ring_ok = good.all(axis=1)
    if ring_ok.all():
        return float(r_cap)
    first_bad = int(np.argmin(ring_ok))
    if first_bad == 0:
        return 0.0
    return float(rr[first_bad - 1])


def refined_chart(s: SurfaceModel, xi: SurfacePoint, base: IsothermalChart | None = None,
                  r_cap: float = 1.0) -> IsothermalChart:
    """Normalized isothermal chart at xi: phi(0) = 0 and grad phi(0) = 0 or (0, -2 k_g)."""
    _check_point(xi)
    if base is None:
        base = s.base_chart(xi)
    if base.is_boundary != xi.is_boundary:
        raise ValueError("base chart kind does not match the point")
    z0 = s.to_param(xi)
    B = base.transform
    w0 = complex(B(np.array([z0]))[0])
    if abs(w0) >= base.radius:
        raise ValueError("point lies outside the base chart")
    if xi.is_boundary and abs(w0.imag) > 1e-9:
        raise ValueError("boundary point does not lie on the base chart's boundary line")
    if xi.is_boundary:
        w0 = complex(w0.real, 0.0)
    phi0 = float(base.phi(np.array([w0]))[0])
    g = complex(base.grad_phi(np.array([w0]))[0])
    b = math.exp(0.5 * phi0)
    a = b  # rotation angle 0: the base chart fixes the orientation
    if xi.is_boundary:
        c = a * g.real / 4.0
    else:
        c = a * np.conj(g) / 4.0
    if not np.isfinite(b) or b <= 0:
        raise ValueError("degenerate Jacobian at the chart center")
    T = QuadraticConformalMap(0.0, b, complex(c))
    tr = Composed((B, Translation(w0), T))
    kind = "boundary-half-disk" if xi.is_boundary else "interior-disk"
    chart = IsothermalChart(s, xi, r_cap, kind, tr)
    radius = admissible_radius(chart, r_cap=r_cap)
    if radius <= 1e-6:
        raise ValueError("no admissible radius: point too close to the edge of the base chart")
    return replace(chart, radius=radius)


@dataclass
class ChartReport:
    passed: bool
    gauss_residual: float
    boundary_residual: float
    n_samples: int


def chart_validate(s: SurfaceModel, c: IsothermalChart, tol: float, step: float = 1e-3,
                   fraction: float = 0.5) -> ChartReport:
    """Finite-difference check of -Lap phi = 2 K e^phi and the boundary relation."""
    R = fraction * c.radius
    if R <= 2 * step:
        raise ValueError("chart too small for the finite-difference stencil")
    rr = R * np.linspace(0.1, 1.0, 6)
    if c.is_boundary:
        tt = np.linspace(0.15, math.pi - 0.15, 9)
    else:
        tt = np.linspace(0.0, 2 * math.pi, 12, endpoint=False)
    Y = (rr[:, None] * np.exp(1j * tt[None, :])).ravel()
    Y = np.concatenate([[0j], Y])
    h = step
    ph = c.phi
    lap = (ph(Y + h) + ph(Y - h) + ph(Y + 1j * h) + ph(Y - 1j * h) - 4 * ph(Y)) / h**2
    K = s.gauss_curvature(c.inverse(Y))
    gauss = np.max(np.abs(-lap - 2 * K * np.exp(ph(Y))))
    bres = 0.0
    nb = 0
    if c.is_boundary:
        yb = np.linspace(-R, R, 21).astype(complex)
        d2 = (ph(yb + 1j * h) - ph(yb - 1j * h)) / (2 * h)
        kg = c.surface.geodesic_curvature(c.center)
        bres = float(np.max(np.abs(d2 + 2 * kg * np.exp(0.5 * ph(yb)))))
        nb = len(yb)
    passed = bool(gauss < tol and bres < tol)
    return ChartReport(passed, float(gauss), float(bres), len(Y) + nb)


def gauss_bonnet(s: SurfaceModel, n_r: int = 64, n_t: int = 64) -> float:
    """Integral of K plus boundary integral of k_g."""
    x, w = np.polynomial.legendre.leggauss(n_r)
    r = s.r_in + (s.r_out - s.r_in) * (x + 1) / 2
    wr = w * (s.r_out - s.r_in) / 2
    t = np.linspace(0, 2 * math.pi, n_t, endpoint=False)
    Z = r[:, None] * np.exp(1j * t[None, :])
    f = s.gauss_curvature(Z) * np.exp(s.psi(Z)) * r[:, None]
    total = float(np.sum(f * wr[:, None]) * (2 * math.pi / n_t))
    for comp in s.boundary_components:
        total += comp.geodesic_curvature * comp.length
    return total
