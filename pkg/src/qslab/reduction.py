"""Quasi-states and quasi-morphisms on the disk bundle E and their reductions to the base sphere.

A quasi-state zeta on E and an admissible profile theta give the functional
F -> zeta(Theta(F)) / zeta(theta) on the base.  A quasi-morphism mu on paths
of E gives F -> mu(path of Theta_eps(F)), divided by a caller supplied
normalizer.  Oracles are plain callables with declared properties so the
property suites can be pointed at them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate as sci

from .disk_bundle import (BaseFunction, BundleField, BundleGrid, BundlePoints, RadialProfile,
                          angular_distance, base_integral, bundle_flow_to, bundle_integral, fiber_density_factor,
                          lift, theta_profile)
from .expr import Expression
from .reeb_median import zeta_med
from .sphere_field import (Cap, HamiltonianPath, SampledPath, ScalarField, SphereMesh, calabi,
                           displacement_margin, integrate)

CLAIMS = ("monotone", "normalized", "quasi-linear", "vanishing-on-displaceable", "ham-invariant")
NORMALIZATION_TOL = 1e-10


class HypothesisError(ValueError):
    """An input violates a hypothesis of the reduction (zeta(theta) <= 0, missing B, ...)."""


class CertificationError(ValueError):
    """A displacement certificate could not be established; carries the closest pair."""

    def __init__(self, message: str, closest: tuple[np.ndarray, np.ndarray] | None = None):
        super().__init__(message)
        self.closest = closest


# -- oracles ------------------------------------------------------------------------------------

@dataclass(frozen=True)
class QuasiStateOracle:
    name: str
    evaluate: Callable[[object], float]
    claims: frozenset[str] = frozenset()

    def __call__(self, f) -> float:
        return float(self.evaluate(f))


@dataclass(frozen=True)
class PathQuasiMorphismOracle:
    name: str
    evaluate: Callable[[object], float]
    stability: float | None = None
    defect: float | None = None
    homogeneous: bool = True

    def __call__(self, path) -> float:
        return float(self.evaluate(path))


def _single(point: BundlePoints) -> BundlePoints:
    if len(point) != 1:
        raise ValueError("point oracle needs exactly one point")
    return point


def point_oracle(point: BundlePoints) -> QuasiStateOracle:
    """zeta(f) = f(point): linear, monotone and normalized, but not vanishing on displaceable sets."""
    p = _single(point)

    def ev(f) -> float:
        if isinstance(f, ScalarField):
            return float(f.evaluate(p.base_points())[0])
        return float(np.asarray(f(p))[0])

    return QuasiStateOracle(f"point:{p.chart[0]}:{','.join(f'{c:.6g}' for c in p.coords[0])}", ev,
                            frozenset({"monotone", "normalized", "quasi-linear"}))


def _slice_values(f, mesh: SphereMesh, r0: float) -> np.ndarray:
    """Values of a field on E over the mesh vertices at fiber radius r0 (angle 0)."""
    if isinstance(f, BundleField) and isinstance(f.base.source, ScalarField) and f.base.source.mesh is mesh:
        return f.profile(np.array([r0]))[0] * f.base.source.values
    return np.asarray(f(BundlePoints.from_base(mesh.vertices, r0, 0.0)), dtype=float)


def median_slice_oracle(mesh: SphereMesh, r0: float = 0.0) -> QuasiStateOracle:
    """zeta(f) = median quasi-state of f restricted to the section {r = r0, phi = 0}."""

    def ev(f) -> float:
        if isinstance(f, ScalarField):
            return zeta_med(f)
        return zeta_med(ScalarField(mesh, _slice_values(f, mesh, r0)))

    return QuasiStateOracle(f"median:r={r0:g}", ev, frozenset(CLAIMS))


def mean_oracle(grid: BundleGrid | None = None) -> QuasiStateOracle:
    """zeta(f) = integral of f against omega^2 (total volume 1); linear, not vanishing on displaceables."""
    g = grid or BundleGrid()

    def ev(f) -> float:
        if isinstance(f, ScalarField):
            return integrate(f)
        return bundle_integral(f, g)

    return QuasiStateOracle("mean", ev, frozenset({"monotone", "normalized", "quasi-linear", "ham-invariant"}))


# -- quasi-state reduction -------------------------------------------------------------------------

def theta_normalizer(zeta: QuasiStateOracle, theta: RadialProfile) -> float:
    """zeta(theta), the value on the lift of the constant 1."""
    return zeta(lift(Expression(1.0), theta))


def reduce_quasi_state(zeta: QuasiStateOracle, theta: RadialProfile, F, normalizer: float | None = None) -> float:
    """zeta(Theta(F)) / zeta(theta)."""
    norm = theta_normalizer(zeta, theta) if normalizer is None else normalizer
    if not norm > 0:
        raise HypothesisError(f"zeta(theta) = {norm!r} must be positive")
    return zeta(lift(F, theta)) / norm


def reduced_quasi_state(zeta: QuasiStateOracle, theta: RadialProfile) -> Callable[[ScalarField], float]:
    """The reduced functional with zeta(theta) computed once."""
    norm = theta_normalizer(zeta, theta)
    if not norm > 0:
        raise HypothesisError(f"zeta(theta) = {norm!r} must be positive")
    return lambda F: reduce_quasi_state(zeta, theta, F, norm)


# -- path quasi-morphisms on the base -------------------------------------------------------------

def zero_qm() -> PathQuasiMorphismOracle:
    return PathQuasiMorphismOracle("zero", lambda F: 0.0, stability=1.0, defect=0.0)


def calabi_qm(mask: np.ndarray, reference: int | None = None) -> PathQuasiMorphismOracle:
    """Calabi over a vertex mask.

    Without a reference the path must be supported in the mask.  With a
    reference vertex outside the mask each slice is first shifted to vanish
    there, which turns a normalized Hamiltonian supported off the mask back
    into one that is zero on it.
    """
    m = np.asarray(mask, dtype=bool)
    if reference is not None and m[reference]:
        raise ValueError("reference vertex must lie outside the mask")

    def ev(F: HamiltonianPath) -> float:
        if reference is None:
            return calabi(F, m)
        vals = F.values - F.values[:, [reference]]
        w = F.mesh.vertex_weights
        return float(np.trapezoid(vals[:, m] @ w[m], F.times))

    name = "calabi" if reference is None else f"calabi:ref={reference}"
    return PathQuasiMorphismOracle(name, ev, stability=2.0, defect=0.0)


def median_qm() -> PathQuasiMorphismOracle:
    """mu(F) = int_0^1 (int F_t - zeta_med(F_t)) dt, trapezoid over the path's slices."""

    def ev(F: HamiltonianPath) -> float:
        vals = F.values
        w = F.mesh.vertex_weights
        per = [float(v @ w) - zeta_med(ScalarField(F.mesh, v)) for v in vals]
        return float(np.trapezoid(per, F.times))

    return PathQuasiMorphismOracle("median", ev, stability=1.0)


def qs_from_qm(mu: PathQuasiMorphismOracle, H: ScalarField, vol: float = 1.0) -> float:
    """(int H - mu(constant path of H - mean H)) / vol."""
    if mu.stability is None:
        raise HypothesisError(f"quasi-morphism {mu.name!r} has no stability constant")
    total = integrate(H)
    Hn = ScalarField(H.mesh, H.values - total / vol)
    return (total - mu(SampledPath.constant(Hn, m=1))) / vol


# -- path quasi-morphisms on E and their reduction ------------------------------------------------

def _base_slice_integral(base: BaseFunction, t: float) -> float:
    """Lumped mesh integral for sampled paths, Gauss quadrature for expressions."""
    path = getattr(base, "_path", None)
    if path is not None:
        mesh = path.mesh
        return float(path.evaluate(mesh.vertices, t) @ mesh.vertex_weights)
    return base_integral(base, t=t)


def _indicator(a: float, b: float) -> RadialProfile:
    return RadialProfile(lambda r: ((r >= a) & (r <= b)).astype(float), lambda r: np.zeros_like(r),
                         (a, b), f"1[{a:g},{b:g}]")


def annulus_calabi_qm(r_range: tuple[float, float], times: np.ndarray, method: str = "fubini",
                      grid: BundleGrid | None = None) -> PathQuasiMorphismOracle:
    """Calabi on E over the flow-invariant region {a <= r <= b}, trapezoid in time.

    "fubini" integrates a structured field rho(r) F over the fiber first;
    "quadrature" uses the full chart quadrature on E.
    """
    a, b = r_range
    mask = _indicator(a, b)
    if method not in ("fubini", "quadrature"):
        raise ValueError(f"unknown method {method!r}")

    def ev(Phi: BundleField) -> float:
        if method == "fubini":
            fac = fiber_density_factor(Phi.profile * mask)
            per = [fac * _base_slice_integral(Phi.base, float(t)) for t in times]
        else:
            masked = Phi.times(mask)
            per = [bundle_integral(masked, grid, float(t)) for t in times]
        return float(np.trapezoid(per, times))

    return PathQuasiMorphismOracle(f"calabi:annulus[{a:g},{b:g}]:{method}", ev, stability=2.0, defect=0.0)


def slice_median_qm(times: np.ndarray, r0: float = 0.0) -> PathQuasiMorphismOracle:
    """mu(Phi) = int_0^1 (int_E Phi_t - zeta_med(Phi_t on the section r = r0)) dt for structured Phi."""

    def ev(Phi: BundleField) -> float:
        path = Phi.base._path
        if path is None:
            raise TypeError("slice median needs a base path")
        mesh = path.mesh
        fac = fiber_density_factor(Phi.profile)
        rad = float(Phi.profile(np.array([r0]))[0])
        per = []
        for t in times:
            v = path.evaluate(mesh.vertices, float(t))
            per.append(fac * float(v @ mesh.vertex_weights) - zeta_med(ScalarField(mesh, rad * v)))
        return float(np.trapezoid(per, times))

    return PathQuasiMorphismOracle(f"median-slice:r={r0:g}", ev, stability=1.0)


def normalize_path(F: SampledPath) -> SampledPath:
    """Subtract the lumped mean from every slice."""
    vals = F.values
    means = vals @ F.mesh.vertex_weights
    return SampledPath(F.mesh, vals - means[:, None])


def path_mean_error(F: HamiltonianPath) -> float:
    return float(np.max(np.abs(F.values @ F.mesh.vertex_weights)))


@dataclass
class ReductionResult:
    mu_hat: float
    mu_bar: float
    eps: float
    defect_check: dict = field(default_factory=dict)


def reduce_quasi_morphism(mu: PathQuasiMorphismOracle, eps: float, F: HamiltonianPath,
                          normalizer: float) -> ReductionResult:
    """mu_hat(F) = mu(Theta_eps(F)) and mu_bar = mu_hat / normalizer."""
    if not normalizer > 0:
        raise HypothesisError(f"normalizer {normalizer!r} must be positive")
    err = path_mean_error(F)
    if err > NORMALIZATION_TOL:
        raise HypothesisError(f"path is not normalized (max |mean| = {err:.3e})")
    mu_hat = mu(lift(F, theta_profile(eps)))
    return ReductionResult(mu_hat, mu_hat / normalizer, eps)


def reduced_defect(mu: PathQuasiMorphismOracle, eps: float, pairs, normalizer: float = 1.0,
                   dt: float = 1e-2) -> dict:
    """Sampled |mu_hat(F#G) - mu_hat(F) - mu_hat(G)| against the claim D(mu_hat) <= 2 D(mu)."""
    from .sphere_field import compose_paths
    worst = 0.0
    for F, G in pairs:
        FG = SampledPath(F.mesh, compose_paths(F, G, dt).values)
        FG = normalize_path(FG) if path_mean_error(FG) > NORMALIZATION_TOL else FG
        vals = [reduce_quasi_morphism(mu, eps, P, normalizer).mu_hat for P in (FG, F, G)]
        worst = max(worst, abs(vals[0] - vals[1] - vals[2]))
    bound = None if mu.defect is None else 2.0 * mu.defect
    return {"sampled_defect": worst, "bound": bound,
            "holds": None if bound is None else worst <= bound + 1e-9, "n_pairs": len(pairs)}


# -- scale lemma ----------------------------------------------------------------------------------

@dataclass
class ScaleReport:
    lhs: float
    rhs: float
    integral: float
    residual: float


def _lambda_function(lam) -> Callable[[float], float]:
    if callable(lam):
        return lambda t: float(np.asarray(lam(np.array([t])), dtype=float).reshape(-1)[0])
    e = Expression(lam)
    return lambda t: float(e(np.zeros((1, 3)), t)[0])


def scale_identity_check(mu: PathQuasiMorphismOracle, lam, H: ScalarField, m: int = 10) -> ScaleReport:
    """mu(path lambda(t) H) against (int_0^1 lambda) mu(constant path H)."""
    f = _lambda_function(lam)
    integral, _ = sci.quad(f, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
    lhs = mu(SampledPath.scaled(ScalarField(H.mesh, H.values), lambda tt: np.array([f(t) for t in tt]), m))
    base = mu(SampledPath.constant(ScalarField(H.mesh, H.values), m))
    rhs = integral * base
    scale = abs(base) if base != 0 else 1.0
    return ScaleReport(lhs, rhs, integral, abs(lhs - rhs) / scale)


# -- displacement -----------------------------------------------------------------------------------

@dataclass
class DisplacementCertificate:
    min_separation: float
    n_samples: int
    base_margin: float
    closest: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def certified(self) -> bool:
        return self.min_separation > 0


def lift_displacer(G: SampledPath, cap: Cap | None, eps: float, a: float, dt: float = 1e-2,
                   n_r: int = 4, n_phi: int = 8, n_per_ring: int = 32) -> tuple[BundleField, DisplacementCertificate]:
    """Lift a displacing path for a cap and certify that it displaces pi^{-1}(cap) within {r <= a}.

    The certificate is sample based: the smallest angular distance from the
    base projection of the time-one image of the samples to the cap.
    """
    if not a < 1.0 - eps:
        raise HypothesisError(f"need a < 1 - eps (a={a}, eps={eps})")
    theta = theta_profile(eps)
    lifted = lift(G, theta)
    if cap is None or cap.area == 0.0:
        return lifted, DisplacementCertificate(math.inf, 0, math.inf)
    base_margin = displacement_margin(G, cap, dt, n_per_ring)
    if base_margin <= 0:
        raise CertificationError(f"base path does not displace the cap (margin {base_margin:.3e})")
    base = cap.samples(n_rings=6, n_per_ring=n_per_ring)
    rs = np.linspace(0.0, a, n_r)
    phis = np.linspace(0.0, 2 * math.pi, n_phi, endpoint=False)
    B, R, P = np.meshgrid(np.arange(len(base)), rs, phis, indexing="ij")
    pts = BundlePoints.from_base(base[B.ravel()], R.ravel(), P.ravel())
    img = bundle_flow_to(lifted, pts, 0.0, 1.0, dt)
    proj = img.base_points()
    gap = cap.angle(proj) - cap.radius
    k = int(np.argmin(gap))
    cert = DisplacementCertificate(float(gap[k]), len(pts), base_margin, (pts.base_points()[k], proj[k]))
    if not cert.certified:
        raise CertificationError(f"lifted flow fails to displace the cap (gap {gap[k]:.3e})", cert.closest)
    return lifted, cert


def projection_error(G: SampledPath, lifted: BundleField, pts: BundlePoints, dt: float = 1e-2) -> float:
    """Angular distance between pi of the lifted time-one image and the base time-one image."""
    img = bundle_flow_to(lifted, pts, 0.0, 1.0, dt)
    base = G.flow_to(pts.base_points(), np.ones(len(pts)), dt)
    return float(np.max(angular_distance(img.base_points(), base)))
