"""The unit disk bundle E -> S^2 of the degree-one circle bundle, in charts.

Base charts are stereographic.  The north chart sends (u, v) to
(2u, 2v, 1 - rho^2) / (1 + rho^2); the south chart flips y and z so both are
orientation preserving.  On either chart

    sigma = du^dv / (pi (1 + rho^2)^2),     A = -(u dv - v du) / (2 pi (1 + rho^2)),

so dA = -sigma, and with alpha = dphi / 2pi + A the symplectic form is

    omega = sigma + d(r^2 alpha) = (1 - r^2) sigma + 2 r dr ^ alpha.

Fibers have area one and the total volume of omega^2 is one.  Points of E
are stored in Cartesian fiber coordinates p + iq = r e^{i phi}, which are
smooth across the zero section.  Across the overlap w_S = 1 / w_N and
phi_S = phi_N - arg(w_N).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import sympy as sp
from scipy import integrate as sci

from .expr import Expression
from .sphere_field import (HamiltonianPath, SampledPath, ScalarField, SphereMesh,
                           hamiltonian_flow, sgrad_from_gradient)

NORTH, SOUTH = 0, 1
CHART_SWITCH_RADIUS = 1.5
DEGENERACY_MARGIN = 1e-6


class BundleError(ValueError):
    pass


# -- charts ---------------------------------------------------------------------------

def chart_to_sphere(chart: np.ndarray | int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    sy, sz = _chart_signs(chart, u.shape)
    rho2 = u * u + v * v
    d = 1.0 + rho2
    return np.stack([2 * u / d, sy * 2 * v / d, sz * (1 - rho2) / d], axis=-1)


def chart_jacobian(chart: np.ndarray | int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d(point)/d(u, v), shape (..., 3, 2)."""
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    sy, sz = _chart_signs(chart, u.shape)
    d = 1.0 + u * u + v * v
    d2 = d * d
    du = np.stack([2 * (d - 2 * u * u) / d2, sy * (-4 * u * v) / d2, sz * (-4 * u) / d2], axis=-1)
    dv = np.stack([-4 * u * v / d2, sy * 2 * (d - 2 * v * v) / d2, sz * (-4 * v) / d2], axis=-1)
    return np.stack([du, dv], axis=-1)


def sphere_to_chart(chart: np.ndarray | int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.atleast_2d(points)
    sy, sz = _chart_signs(chart, p.shape[:-1])
    den = 1.0 + sz * p[:, 2]
    return p[:, 0] / den, sy * p[:, 1] / den


def preferred_chart(points: np.ndarray) -> np.ndarray:
    return np.where(np.atleast_2d(points)[:, 2] >= 0, NORTH, SOUTH)


def _chart_signs(chart, shape) -> tuple[np.ndarray, np.ndarray]:
    c = np.broadcast_to(np.asarray(chart), shape)
    sy = np.where(c == NORTH, 1.0, -1.0)
    return sy, sy


def sigma_density(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return 1.0 / (math.pi * (1.0 + u * u + v * v) ** 2)


def connection(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Components (a_u, a_v) of A, identical in both charts."""
    d = 2.0 * math.pi * (1.0 + u * u + v * v)
    return v / d, -u / d


@dataclass(frozen=True)
class BundlePoints:
    """Points of E: chart id per point and (u, v, p, q) chart coordinates."""

    chart: np.ndarray
    coords: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.coords, dtype=float).reshape(-1, 4)
        ch = np.broadcast_to(np.asarray(self.chart, dtype=np.int64), (len(c),)).copy()
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "chart", ch)

    def __len__(self) -> int:
        return len(self.coords)

    @classmethod
    def from_polar(cls, chart, u, v, r, phi) -> BundlePoints:
        r, phi = np.asarray(r, dtype=float), np.asarray(phi, dtype=float)
        return cls(chart, np.stack(np.broadcast_arrays(u, v, r * np.cos(phi), r * np.sin(phi)), axis=-1))

    @classmethod
    def from_base(cls, points: np.ndarray, r, phi, chart=None) -> BundlePoints:
        pts = np.atleast_2d(points)
        ch = preferred_chart(pts) if chart is None else np.broadcast_to(chart, (len(pts),))
        u, v = sphere_to_chart(ch, pts)
        return cls.from_polar(ch, u, v, r, phi)

    @property
    def u(self) -> np.ndarray:
        return self.coords[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.coords[:, 1]

    @property
    def r(self) -> np.ndarray:
        return np.hypot(self.coords[:, 2], self.coords[:, 3])

    @property
    def phi(self) -> np.ndarray:
        return np.arctan2(self.coords[:, 3], self.coords[:, 2]) % (2 * math.pi)

    def base_points(self) -> np.ndarray:
        return chart_to_sphere(self.chart, self.u, self.v)

    def to_chart(self, target: np.ndarray | int) -> BundlePoints:
        """Re-express in the target chart(s): w -> 1/w and zeta -> zeta * conj(w)/|w|."""
        tgt = np.broadcast_to(np.asarray(target, dtype=np.int64), (len(self),))
        out = self.coords.copy()
        sw = tgt != self.chart
        if sw.any():
            w = self.coords[sw, 0] + 1j * self.coords[sw, 1]
            if np.any(np.abs(w) < 1e-12):
                raise BundleError("point at a chart pole cannot change chart")
            zeta = self.coords[sw, 2] + 1j * self.coords[sw, 3]
            w2 = 1.0 / w
            z2 = zeta * np.conj(w) / np.abs(w)
            out[sw] = np.stack([w2.real, w2.imag, z2.real, z2.imag], axis=1)
        return BundlePoints(tgt, out)

    def rechart(self, radius: float = CHART_SWITCH_RADIUS) -> BundlePoints:
        far = np.hypot(self.u, self.v) > radius
        if not far.any():
            return self
        return self.to_chart(np.where(far, 1 - self.chart, self.chart))

    def take(self, idx) -> BundlePoints:
        return BundlePoints(self.chart[idx], self.coords[idx])


# -- symplectic form ------------------------------------------------------------------

_U, _V, _R, _PHI = sp.symbols("u v r phi", real=True)
_P, _Q = sp.symbols("p q", real=True)


def _exterior_d(one_form: Sequence[sp.Expr], coords: Sequence[sp.Symbol]) -> sp.Matrix:
    """Matrix of d(beta) for a 1-form beta = sum beta_i dx_i: entries d_i beta_j - d_j beta_i."""
    n = len(coords)
    return sp.Matrix(n, n, lambda i, j: sp.diff(one_form[j], coords[i]) - sp.diff(one_form[i], coords[j]))


def _symbolic_forms(coords: str) -> tuple[sp.Matrix, sp.Matrix, sp.Matrix]:
    """(sigma pulled back, route pi*sigma + d(r^2 alpha), route -d((1-r^2) alpha))."""
    rho2 = _U**2 + _V**2
    s = 1 / (sp.pi * (1 + rho2) ** 2)
    a_u = _V / (2 * sp.pi * (1 + rho2))
    a_v = -_U / (2 * sp.pi * (1 + rho2))
    if coords == "polar":
        xs = (_U, _V, _R, _PHI)
        r2 = _R**2
        alpha = [a_u, a_v, sp.Integer(0), 1 / (2 * sp.pi)]
    else:
        xs = (_U, _V, _P, _Q)
        r2 = _P**2 + _Q**2
        # dphi = (p dq - q dp) / r^2
        alpha = [a_u, a_v, -_Q / (2 * sp.pi * r2), _P / (2 * sp.pi * r2)]
    sig = sp.zeros(4, 4)
    sig[0, 1], sig[1, 0] = s, -s
    route1 = sig + _exterior_d([sp.simplify(r2 * a) for a in alpha], xs)
    route2 = -_exterior_d([sp.simplify((1 - r2) * a) for a in alpha], xs)
    return sig, route1.applyfunc(sp.simplify), route2.applyfunc(sp.simplify)


@lru_cache(maxsize=None)
def _omega_functions(coords: str) -> tuple[list, list]:
    _, r1, r2 = _symbolic_forms(coords)
    xs = (_U, _V, _R, _PHI) if coords == "polar" else (_U, _V, _P, _Q)
    entries = lambda m: [[sp.lambdify(xs, m[i, j], "numpy") for j in range(4)] for i in range(4)]  # noqa: E731
    return entries(r1), entries(r2)


def _eval_matrix(fs: list, args: Sequence[np.ndarray]) -> np.ndarray:
    args = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
    shape = args[0].shape
    out = np.empty(shape + (4, 4))
    for i in range(4):
        for j in range(4):
            out[..., i, j] = np.broadcast_to(fs[i][j](*args), shape)
    return out


def omega_matrix(u, v, p, q, route: int = 1) -> np.ndarray:
    """Omega4 in Cartesian fiber coordinates (u, v, p, q), shape (..., 4, 4)."""
    f1, f2 = _omega_functions("cartesian")
    return _eval_matrix(f1 if route == 1 else f2, (u, v, p, q))


def omega_matrix_polar(u, v, r, phi, route: int = 1) -> np.ndarray:
    """Omega4 in (u, v, r, phi)."""
    f1, f2 = _omega_functions("polar")
    return _eval_matrix(f1 if route == 1 else f2, (u, v, r, phi))


def omega_closed_form(u, v, p, q) -> np.ndarray:
    """Hand-assembled Omega4 in (u, v, p, q); used as a cross-check on the symbolic routes."""
    u, v, p, q = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in (u, v, p, q)])
    s = sigma_density(u, v)
    au, av = connection(u, v)
    r2 = p * p + q * q
    out = np.zeros(u.shape + (4, 4))
    out[..., 0, 1] = (1 - r2) * s
    out[..., 2, 3] = 1.0 / math.pi
    out[..., 0, 2] = -2 * p * au
    out[..., 1, 2] = -2 * p * av
    out[..., 0, 3] = -2 * q * au
    out[..., 1, 3] = -2 * q * av
    return out - np.swapaxes(out, -1, -2)


def pfaffian(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 1] * m[..., 2, 3] - m[..., 0, 2] * m[..., 1, 3] + m[..., 0, 3] * m[..., 1, 2]


def curvature_residual(u: np.ndarray, v: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """dA + sigma by central differences of the connection coefficients."""
    dav_du = (connection(u + h, v)[1] - connection(u - h, v)[1]) / (2 * h)
    dau_dv = (connection(u, v + h)[0] - connection(u, v - h)[0]) / (2 * h)
    return dav_du - dau_dv + sigma_density(u, v)


def fiber_area(u: float = 0.3, v: float = -0.2, n_r: int = 16, n_phi: int = 64) -> float:
    """Integral of d(r^2 alpha) over one fiber disk, read off the polar Omega4."""
    x, w = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (x + 1)
    phi = np.linspace(0, 2 * math.pi, n_phi, endpoint=False)
    R, PH = np.meshgrid(r, phi, indexing="ij")
    # the (r, phi) entry of sigma + d(r^2 alpha) is the fiber area density
    dens = omega_matrix_polar(u, v, R, PH)[..., 2, 3]
    return float(np.sum(dens * (0.5 * w)[:, None]) * (2 * math.pi / n_phi))


# -- radial profiles ------------------------------------------------------------------

@dataclass(frozen=True)
class RadialProfile:
    """A function of r on [0, 1] with its derivative; knots mark where it is not smooth."""

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    knots: tuple[float, ...] = ()
    name: str = "profile"

    def __call__(self, r) -> np.ndarray:
        return self.value(np.asarray(r, dtype=float))

    def d(self, r) -> np.ndarray:
        return self.derivative(np.asarray(r, dtype=float))

    def d_over_r(self, r) -> np.ndarray:
        """theta'(r) / r, continued to r = 0."""
        r = np.asarray(r, dtype=float)
        rs = np.maximum(r, 1e-7)
        return self.derivative(rs) / rs

    def __mul__(self, other: RadialProfile) -> RadialProfile:
        return RadialProfile(lambda r: self.value(r) * other.value(r),
                             lambda r: self.derivative(r) * other.value(r) + self.value(r) * other.derivative(r),
                             tuple(sorted(set(self.knots) | set(other.knots))), f"{self.name}*{other.name}")

    @classmethod
    def from_expression(cls, text: str, knots: tuple[float, ...] = (), name: str | None = None) -> RadialProfile:
        rr = sp.Symbol("r", real=True)
        e = sp.sympify(text, locals={"r": rr})
        f = sp.lambdify(rr, e, "numpy")
        df = sp.lambdify(rr, sp.diff(e, rr), "numpy")
        bc = lambda g: (lambda r: np.broadcast_to(np.asarray(g(r), dtype=float), np.shape(r)).copy())  # noqa: E731
        return cls(bc(f), bc(df), knots, name or text)


def one_minus_r2() -> RadialProfile:
    """The untruncated profile 1 - r^2 (vanishes only at r = 1)."""
    return RadialProfile(lambda r: 1.0 - r * r, lambda r: -2.0 * r, (), "1-r^2")


def _smoothstep(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10 - 15 * x + 6 * x * x), 30 * x * x * (1 - x) ** 2


@dataclass(frozen=True)
class ThetaProfile(RadialProfile):
    eps: float = 0.1

    @property
    def inner(self) -> float:
        return 1.0 - self.eps

    @property
    def outer(self) -> float:
        return 1.0 - self.eps / 2.0


def theta_profile(eps: float) -> ThetaProfile:
    """1 - r^2 up to 1 - eps, zero from 1 - eps/2, C^2 quintic blend in between."""
    if not 0.0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    a, b = 1.0 - eps, 1.0 - eps / 2.0
    w = b - a

    def value(r):
        s, _ = _smoothstep((b - r) / w)
        return np.where(r <= a, 1.0 - r * r, np.where(r >= b, 0.0, (1.0 - r * r) * s))

    def derivative(r):
        s, ds = _smoothstep((b - r) / w)
        blend = -2.0 * r * s - (1.0 - r * r) * ds / w
        return np.where(r <= a, -2.0 * r, np.where(r >= b, 0.0, blend))

    return ThetaProfile(value, derivative, (a, b), f"theta_{eps:g}", eps)


# -- fields on E ----------------------------------------------------------------------------------

class BaseFunction:
    """Adapter giving value and tangent gradient of a base function at sphere points and time t."""

    def __init__(self, source):
        self.source = source
        if isinstance(source, str):
            source = Expression(source)
            self.source = source
        if isinstance(source, ScalarField) and source.source is None:
            self._path = SampledPath.constant(source, m=1)
        elif isinstance(source, ScalarField):
            self._path = None
            self._expr = source.source
        elif isinstance(source, Expression):
            self._path = None
            self._expr = source
        elif isinstance(source, HamiltonianPath):
            if not hasattr(source, "gradient"):
                raise BundleError("base path must expose gradients (a sampled path)")
            self._path = source
        else:
            raise TypeError(f"unsupported base function {type(source).__name__}")

    def value(self, points: np.ndarray, t=0.0) -> np.ndarray:
        if self._path is not None:
            return self._path.evaluate(points, t)
        return self._expr(points, t)

    def gradient(self, points: np.ndarray, t=0.0) -> np.ndarray:
        if self._path is not None:
            return self._path.gradient(points, t)
        return self._expr.sphere_grad(points, t)


@dataclass
class BundleField:
    """theta(r) * H(pi(e)), optionally time dependent through a base path."""

    profile: RadialProfile
    base: BaseFunction

    def __call__(self, pts: BundlePoints, t=0.0) -> np.ndarray:
        return self.profile(pts.r) * self.base.value(pts.base_points(), t)

    def gradient(self, pts: BundlePoints, t=0.0) -> np.ndarray:
        """Exact gradient in chart coordinates (u, v, p, q) by the chain rule."""
        n = pts.base_points()
        g = self.base.gradient(n, t)
        J = chart_jacobian(pts.chart, pts.u, pts.v)
        th = self.profile(pts.r)
        out = np.empty((len(pts), 4))
        out[:, :2] = th[:, None] * np.einsum("nk,nkj->nj", g, J)
        radial = self.profile.d_over_r(pts.r) * self.base.value(n, t)
        out[:, 2] = radial * pts.coords[:, 2]
        out[:, 3] = radial * pts.coords[:, 3]
        return out

    def times(self, rho: RadialProfile) -> BundleField:
        return BundleField(self.profile * rho, self.base)


@dataclass
class SampledBundleField:
    """Free-form values on a polar grid (u, v, r, phi) in one chart, cubic interpolation."""

    chart: int
    axes: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    values: np.ndarray

    def __post_init__(self) -> None:
        from scipy.interpolate import RegularGridInterpolator
        u, v, r, phi = self.axes
        # pad phi periodically so interpolation wraps
        k = 3
        ph = np.concatenate([phi[-k:] - 2 * math.pi, phi, phi[:k] + 2 * math.pi])
        vals = np.concatenate([self.values[..., -k:], self.values, self.values[..., :k]], axis=-1)
        self._interp = RegularGridInterpolator((u, v, r, ph), vals, method="cubic")

    @classmethod
    def from_function(cls, f: Callable[[BundlePoints], np.ndarray], chart: int, axes) -> SampledBundleField:
        U, V, R, PH = np.meshgrid(*axes, indexing="ij")
        pts = BundlePoints.from_polar(chart, U.ravel(), V.ravel(), R.ravel(), PH.ravel())
        return cls(chart, tuple(np.asarray(a) for a in axes), f(pts).reshape(U.shape))

    def __call__(self, pts: BundlePoints, t=0.0) -> np.ndarray:
        p = pts.to_chart(self.chart)
        return self._interp(np.stack([p.u, p.v, p.r, p.phi], axis=1))


def lift(H, theta: RadialProfile) -> BundleField:
    """Theta(H) = theta(r) * pi^* H."""
    return BundleField(theta, H if isinstance(H, BaseFunction) else BaseFunction(H))


# -- derivatives and brackets -----------------------------------------------------------------

@dataclass(frozen=True)
class BundleGrid:
    """Resolution of chart grids; finite-difference steps are the grid spacings."""

    n_u: int = 64
    n_v: int = 64
    n_r: int = 32
    n_phi: int = 32
    chart_half_width: float = 1.0
    quad_half_width: float = 1.8

    def __post_init__(self) -> None:
        if min(self.n_u, self.n_v, self.n_r, self.n_phi) < 8:
            raise ValueError("grid counts must be >= 8")

    @property
    def steps(self) -> np.ndarray:
        hu = 2 * self.chart_half_width / self.n_u
        hv = 2 * self.chart_half_width / self.n_v
        hr = 1.0 / self.n_r
        return np.array([hu, hv, hr, hr])

    def refined(self, factor: int = 2) -> BundleGrid:
        return BundleGrid(self.n_u * factor, self.n_v * factor, self.n_r * factor, self.n_phi * factor,
                          self.chart_half_width, self.quad_half_width)


@dataclass
class DiskBundle:
    grid: BundleGrid
    base: SphereMesh | None = None

    def omega(self, pts: BundlePoints) -> np.ndarray:
        return omega_matrix(pts.u, pts.v, pts.coords[:, 2], pts.coords[:, 3])

    def sample_points(self, rng: np.random.Generator, n: int, r_max: float = 0.9) -> BundlePoints:
        return random_bundle_points(rng, n, r_max)


def make_bundle(base: SphereMesh | None = None, r_rings: int = 32, phi_rings: int = 32,
                n_u: int = 64, n_v: int = 64) -> DiskBundle:
    return DiskBundle(BundleGrid(n_u, n_v, r_rings, phi_rings), base)


def random_bundle_points(rng: np.random.Generator, n: int, r_max: float = 0.9, r_min: float = 0.0) -> BundlePoints:
    """Uniform base points, r uniform in [r_min, r_max], phi uniform; preferred chart."""
    x = rng.normal(size=(n, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    r = rng.uniform(r_min, r_max, size=n)
    phi = rng.uniform(0, 2 * math.pi, size=n)
    return BundlePoints.from_base(x, r, phi)


_FD4 = (np.array([1.0, -8.0, 8.0, -1.0]) / 12.0, np.array([-2, -1, 1, 2]))


def fd_gradient(f: Callable[[BundlePoints], np.ndarray], pts: BundlePoints, steps: Sequence[float]) -> np.ndarray:
    """Fourth-order central differences in (u, v, p, q), staying in each point's chart."""
    out = np.zeros((len(pts), 4))
    coef, offs = _FD4
    for k in range(4):
        h = steps[k]
        for c, o in zip(coef, offs):
            shifted = pts.coords.copy()
            shifted[:, k] += o * h
            out[:, k] += c * f(BundlePoints(pts.chart, shifted))
        out[:, k] /= h
    return out


def _check_interior(pts: BundlePoints, margin: float = DEGENERACY_MARGIN) -> None:
    if np.any(pts.r >= 1.0 - margin):
        raise BundleError("omega is degenerate at r -> 1; evaluate at r < 1 - 1e-6")


def hamiltonian_vector(pts: BundlePoints, grad: np.ndarray) -> np.ndarray:
    """X with omega(X, .) = -df, i.e. X = Omega^{-1} grad f."""
    om = omega_matrix(pts.u, pts.v, pts.coords[:, 2], pts.coords[:, 3])
    return np.linalg.solve(om, grad[..., None])[..., 0]


def bracket_bundle(f, g, pts: BundlePoints, steps: Sequence[float] | None = None) -> np.ndarray:
    """{f, g} = df(X_g) from Omega4 and fourth-order differences in chart coordinates."""
    _check_interior(pts)
    steps = BundleGrid().steps if steps is None else steps
    # stencils must not reach the degenerate boundary
    if np.any(pts.r + 2 * max(steps[2], steps[3]) >= 1.0):
        raise BundleError("finite-difference stencil reaches r = 1")
    gf = fd_gradient(f, pts, steps)
    gg = fd_gradient(g, pts, steps)
    return np.einsum("ni,ni->n", gf, hamiltonian_vector(pts, gg))


def base_bracket_sphere(H: BaseFunction, K: BaseFunction, points: np.ndarray, t=0.0) -> np.ndarray:
    """{H, K}_sigma = dH(sgrad K) from tangent gradients, with no chart differences."""
    return np.einsum("nk,nk->n", H.gradient(points, t), sgrad_from_gradient(points, K.gradient(points, t)))


@dataclass
class ResidualReport:
    max_abs: float
    max_rel: float
    scale: float
    n_points: int
    extra: dict = field(default_factory=dict)


def bracket_identity_residual(H, K, theta: RadialProfile, pts: BundlePoints,
                              grid: BundleGrid | None = None) -> ResidualReport:
    """{Theta H, Theta K}_omega against theta^2/(1-r^2) * {H, K}_sigma at the sample points."""
    grid = grid or BundleGrid()
    if np.any(pts.r > 0.95):
        raise BundleError("bracket identity samples need r <= 0.95")
    Hb, Kb = BaseFunction(H), BaseFunction(K)
    fa, fb = lift(Hb, theta), lift(Kb, theta)
    lhs = bracket_bundle(fa, fb, pts, grid.steps)
    r = pts.r
    rhs = theta(r) ** 2 / (1 - r * r) * base_bracket_sphere(Hb, Kb, pts.base_points())
    diff = np.abs(lhs - rhs)
    scale = float(np.max(np.abs(rhs)))
    rel = float(diff.max() / scale) if scale > 0 else float(diff.max())
    return ResidualReport(float(diff.max()), rel, scale, len(pts), {"lhs": lhs, "rhs": rhs})


def sgrad_pushforward_residual(H, theta: RadialProfile, pts: BundlePoints,
                               grid: BundleGrid | None = None) -> ResidualReport:
    """pi_*(sgrad Theta(H)) against theta/(1-r^2) * sgrad H taken from the sphere formula."""
    grid = grid or BundleGrid()
    if np.any(pts.r > 0.95):
        raise BundleError("pushforward samples need r <= 0.95")
    Hb = BaseFunction(H)
    f = lift(Hb, theta)
    X = hamiltonian_vector(pts, fd_gradient(f, pts, grid.steps))
    J = chart_jacobian(pts.chart, pts.u, pts.v)
    pushed = np.einsum("nkj,nj->nk", J, X[:, :2])
    n = pts.base_points()
    r = pts.r
    expected = (theta(r) / (1 - r * r))[:, None] * sgrad_from_gradient(n, Hb.gradient(n))
    diff = np.linalg.norm(pushed - expected, axis=1)
    scale = float(np.max(np.linalg.norm(expected, axis=1)))
    rel = float(diff.max() / scale) if scale > 0 else float(diff.max())
    ratio = np.linalg.norm(pushed, axis=1) / np.maximum(np.linalg.norm(sgrad_from_gradient(n, Hb.gradient(n)), axis=1),
                                                         1e-300)
    return ResidualReport(float(diff.max()), rel, scale, len(pts), {"magnitude_ratio": ratio})


# -- fiber integral -------------------------------------------------------------------------------

def _smooth_step(x: np.ndarray) -> np.ndarray:
    """C-infinity step from 0 (x <= 0) to 1 (x >= 1)."""
    x = np.asarray(x, dtype=float)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def chart_partition(chart: int, points: np.ndarray) -> np.ndarray:
    """Partition of unity in the height: north weight rises from z = -1/2 to z = 1/2."""
    chi_n = _smooth_step(np.atleast_2d(points)[:, 2] + 0.5)
    return chi_n if chart == NORTH else 1.0 - chi_n


def radial_nodes(profile: RadialProfile, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre on [0, 1] split at the profile's knots."""
    edges = np.array(sorted({0.0, 1.0, *[k for k in profile.knots if 0 < k < 1]}))
    per = max(4, n // (len(edges) - 1))
    x, w = np.polynomial.legendre.leggauss(per)
    rs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        rs.append(lo + (hi - lo) * (x + 1) / 2)
        ws.append(w * (hi - lo) / 2)
    return np.concatenate(rs), np.concatenate(ws)


def bundle_integral(f: BundleField, grid: BundleGrid | None = None, t: float = 0.0) -> float:
    """Integral of f * omega^2 over E: both charts, partition of unity, 2 Pf(Omega) density."""
    grid = grid or BundleGrid()
    L = grid.quad_half_width
    hu, hv = 2 * L / grid.n_u, 2 * L / grid.n_v
    uu = -L + hu * (np.arange(grid.n_u) + 0.5)
    vv = -L + hv * (np.arange(grid.n_v) + 0.5)
    U, V = np.meshgrid(uu, vv, indexing="ij")
    U, V = U.ravel(), V.ravel()
    r, wr = radial_nodes(f.profile, grid.n_r)
    phis = np.linspace(0.0, 2 * math.pi, grid.n_phi, endpoint=False)
    wphi = np.full(grid.n_phi, 2 * math.pi / grid.n_phi)
    total = 0.0
    for chart in (NORTH, SOUTH):
        n = chart_to_sphere(chart, U, V)
        chi = chart_partition(chart, n)
        keep = chi > 0
        Uk, Vk, chik = U[keep], V[keep], chi[keep]
        for ph, wp in zip(phis, wphi):
            Ug, Rg = np.meshgrid(np.arange(len(Uk)), r, indexing="ij")
            pts = BundlePoints.from_polar(chart, Uk[Ug.ravel()], Vk[Ug.ravel()], Rg.ravel(), ph)
            om = omega_matrix_polar(pts.u, pts.v, Rg.ravel(), ph)
            dens = 2.0 * pfaffian(om)
            vals = f(pts, t) * dens * np.tile(wr, len(Uk)) * np.repeat(chik, len(r))
            total += float(vals.sum()) * wp * hu * hv
    return total


def base_integral(H, n: int = 64, t: float = 0.0) -> float:
    """Integral of H against sigma by Gauss-Legendre in z and the trapezoid rule in longitude."""
    Hb = H if isinstance(H, BaseFunction) else BaseFunction(H)
    x, w = np.polynomial.legendre.leggauss(n)
    lon = np.linspace(0, 2 * math.pi, 2 * n, endpoint=False)
    Z, LON = np.meshgrid(x, lon, indexing="ij")
    rr = np.sqrt(1 - Z**2)
    pts = np.stack([rr * np.cos(LON), rr * np.sin(LON), Z], axis=-1).reshape(-1, 3)
    vals = Hb.value(pts, t).reshape(Z.shape)
    # sigma = area / 4 pi = dz dlon / 4 pi
    return float(np.sum(vals * w[:, None]) * (2 * math.pi / (2 * n)) / (4 * math.pi))


def radial_factor_literal(theta: RadialProfile, n: int = 2) -> float:
    """-int_0^1 theta'(r) (1 - r^2)^n dr."""
    pts = [k for k in theta.knots if 0 < k < 1]
    val, _ = sci.quad(lambda r: -float(theta.d(r)) * (1 - r * r) ** n, 0.0, 1.0, points=pts or None,
                      epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def radial_factor(theta: RadialProfile, n: int = 2) -> float:
    """Fiber integral of theta * omega^n per unit base volume: -int theta'(r) (1 - (1 - r^2)^n) dr."""
    pts = [k for k in theta.knots if 0 < k < 1]
    val, _ = sci.quad(lambda r: -float(theta.d(r)) * (1 - (1 - r * r) ** n), 0.0, 1.0, points=pts or None,
                      epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def fiber_density_factor(rho: RadialProfile, n_per_piece: int = 32) -> float:
    """int_0^1 rho(r) 4 r (1 - r^2) dr, the omega^2 mass of rho on a fiber per unit base area.

    Needs no derivative, so it also applies to indicator profiles.
    """
    r, w = radial_nodes(rho, n_per_piece * (len(rho.knots) + 1))
    return float(np.sum(rho(r) * 4.0 * r * (1.0 - r * r) * w))


@dataclass
class FiberIntegralReport:
    lhs_literal: float
    lhs: float
    rhs: float
    residual_literal: float
    residual: float
    base_integral: float


def fiber_integral_residual(H, theta: RadialProfile, grid: BundleGrid | None = None) -> FiberIntegralReport:
    """Compare the fiber-integrated radial factor times int H sigma with int_E Theta(H) omega^2.

    Two radial factors are reported: -int theta' (1-r^2)^2 dr taken literally,
    and the value obtained by integrating theta * omega^2 over a fiber, which
    picks up the boundary term theta(0) from integration by parts.
    """
    hint = base_integral(H)
    lit = radial_factor_literal(theta) * hint
    cor = radial_factor(theta) * hint
    rhs = bundle_integral(lift(H, theta), grid)
    return FiberIntegralReport(lit, cor, rhs, abs(lit - rhs) / max(abs(lit), 1.0),
                               abs(cor - rhs) / max(abs(cor), 1.0), hint)


# -- flows on E -----------------------------------------------------------------------------------

def bundle_velocity(F: BundleField, pts: BundlePoints, t) -> np.ndarray:
    return hamiltonian_vector(pts, F.gradient(pts, t))


def bundle_flow_to(F: BundleField, pts: BundlePoints, t0: float, t1: float, dt: float) -> BundlePoints:
    """RK4 in chart coordinates from t0 to t1, changing chart between steps when rho > 1.5."""
    n = max(1, int(math.ceil(abs(t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / n
    x = pts.rechart()
    t = t0
    for _ in range(n):
        c = x.coords
        mk = lambda y: BundlePoints(x.chart, y)  # noqa: E731
        k1 = bundle_velocity(F, x, t)
        k2 = bundle_velocity(F, mk(c + 0.5 * h * k1), t + 0.5 * h)
        k3 = bundle_velocity(F, mk(c + 0.5 * h * k2), t + 0.5 * h)
        k4 = bundle_velocity(F, mk(c + h * k3), t + h)
        x = mk(c + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)).rechart()
        t += h
    return x


@dataclass
class BundleFlow:
    times: np.ndarray
    states: list[BundlePoints]


def bundle_flow(F: BundleField, pts: BundlePoints, times: np.ndarray, dt: float) -> BundleFlow:
    states = [pts.rechart()]
    for t0, t1 in zip(times[:-1], times[1:]):
        states.append(bundle_flow_to(F, states[-1], t0, t1, dt))
    return BundleFlow(np.asarray(times), states)


def angular_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.arctan2(np.linalg.norm(np.cross(a, b), axis=-1), np.einsum("...i,...i->...", a, b))


@dataclass
class CommutationReport:
    max_distance: float
    max_r_drift: float
    per_time: np.ndarray


def flow_commutation_residual(F: SampledPath, theta: ThetaProfile, seeds: BundlePoints, dt: float) -> CommutationReport:
    """Max over seeds and grid times of d(pi(lifted flow), base flow(pi)); also the drift of r."""
    eps = theta.eps if isinstance(theta, ThetaProfile) else 0.0
    if np.any(seeds.r > 1.0 - eps + 1e-12):
        raise BundleError("seeds must satisfy r <= 1 - eps")
    lifted = bundle_flow(lift(F, theta), seeds, F.times, dt)
    base = hamiltonian_flow(F, seeds.base_points(), dt)
    per_t = np.array([float(np.max(angular_distance(s.base_points(), base.positions[k]), initial=0.0))
                      for k, s in enumerate(lifted.states)])
    drift = max(float(np.max(np.abs(s.r - seeds.r), initial=0.0)) for s in lifted.states)
    return CommutationReport(float(per_t.max()), drift, per_t)


def failure_term(F: SampledPath, G: SampledPath, theta: ThetaProfile, seeds: BundlePoints, dt: float,
                 times: Sequence[float] | None = None) -> float:
    """Max of |Theta(F)#Theta(G) - Theta(F#G)| at the seeds, both sides assembled from flows.

    (Theta F # Theta G)(e, t) = Theta F(e, t) + Theta G(ft^-1(e), t) uses the
    backward lifted flow; Theta(F#G)(e, t) = theta(r) (F(x, t) + G(f_t^-1 x, t))
    with x = pi(e) uses the backward base flow.
    """
    times = F.times[1:] if times is None else np.asarray(times)
    TF, TG = lift(F, theta), lift(G, theta)
    worst = 0.0
    x = seeds.base_points()
    for t in times:
        back_e = bundle_flow_to(TF, seeds, t, 0.0, dt)
        upstairs = TF(seeds, t) + TG(back_e, t)
        back_x = F.inverse_flow_to(x, np.full(len(x), t), dt)
        downstairs = theta(seeds.r) * (F.evaluate(x, t) + G.evaluate(back_x, t))
        worst = max(worst, float(np.max(np.abs(upstairs - downstairs))))
    return worst
