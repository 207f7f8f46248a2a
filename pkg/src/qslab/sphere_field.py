"""Scalar fields, Poisson brackets, Hamiltonian flows and Calabi on the round S^2.

The symplectic form is the round area form divided by 4*pi, so the sphere has
total area 1.  With omega(sgrad H, .) = -dH this gives

    sgrad H = 4*pi * n x grad H,        {H, K} = dH(sgrad K) = -4*pi * n . (grad H x grad K)

where n is the outward unit normal and grad the spherical gradient.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .expr import Expression

FOUR_PI = 4.0 * math.pi

# generic height used to order vertices; vertex index is the tie-break key for
# level-set sweeps, so index order must itself be a Morse-like height
_TIE_DIRECTION = np.array([1.0e-3 * math.sqrt(2.0), 1.0e-3 * math.sqrt(3.0), 1.0])
_TIE_DIRECTION /= np.linalg.norm(_TIE_DIRECTION)


class MeshError(ValueError):
    pass


class FlowError(RuntimeError):
    pass


class SupportError(ValueError):
    pass


class DisplacementError(ValueError):
    pass


def spherical_triangle_areas(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Solid angles of spherical triangles with unit vertices (Van Oosterom-Strackee)."""
    num = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    return 2.0 * np.arctan2(num, den)


@dataclass(frozen=True, eq=False)
class SphereMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_weights: np.ndarray
    level: int | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must have shape (V, 3)")
        if np.max(np.abs(np.linalg.norm(v, axis=1) - 1.0)) > 1e-12:
            raise MeshError("vertices must lie on the unit sphere")
        t = np.asarray(self.triangles, dtype=np.int64)
        if t.ndim != 2 or t.shape[1] != 3 or t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangles must be (F, 3) vertex index triples")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "vertex_weights", np.asarray(self.vertex_weights, dtype=float))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + len(self.triangles)

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e))
        a = sparse.coo_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
        return a.tocsr()

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        a = self.adjacency
        return [a.indices[a.indptr[i]:a.indptr[i + 1]] for i in range(self.n_vertices)]

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        v, t = self.vertices, self.triangles
        return spherical_triangle_areas(v[t[:, 0]], v[t[:, 1]], v[t[:, 2]])

    @cached_property
    def mesh_size(self) -> float:
        """Longest edge, as an angle."""
        v, e = self.vertices, self.edges
        return float(np.max(np.arccos(np.clip(np.einsum("ij,ij->i", v[e[:, 0]], v[e[:, 1]]), -1, 1))))

    @cached_property
    def _vertex_triangles(self) -> np.ndarray:
        """Padded (V, k) table of incident triangles, -1 padded."""
        buckets: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for f, tri in enumerate(self.triangles):
            for i in tri:
                buckets[i].append(f)
        width = max(len(b) for b in buckets)
        out = -np.ones((self.n_vertices, width), dtype=np.int64)
        for i, b in enumerate(buckets):
            out[i, :len(b)] = b
        return out

    @cached_property
    def _tri_inverse(self) -> np.ndarray:
        m = np.stack([self.vertices[self.triangles[:, k]] for k in range(3)], axis=2)
        return np.linalg.inv(m)

    @cached_property
    def _kdtree(self) -> cKDTree:
        return cKDTree(self.vertices)

    @cached_property
    def gradient_operator(self) -> tuple[sparse.csr_matrix, sparse.csr_matrix, sparse.csr_matrix]:
        """Sparse (V x V) operators giving the least-squares tangent gradient components."""
        v = self.vertices
        rows, cols, vals = [], [], [[], [], []]
        for i, nb in enumerate(self.neighbors):
            if len(nb) < 3:
                raise MeshError(f"degenerate vertex star at {i}: {len(nb)} neighbours")
            p = v[i]
            q = v[nb]
            cosang = np.clip(q @ p, -1.0, 1.0)
            tang = q - np.outer(cosang, p)
            norm = np.linalg.norm(tang, axis=1)
            d = tang * (np.arccos(cosang) / norm)[:, None]
            # 2d frame of the tangent plane
            e1 = d[0] / np.linalg.norm(d[0])
            e2 = np.cross(p, e1)
            a, b = d @ e1, d @ e2
            # fit H_nb - H_i ~ g.d + d^T Q d / 2; the Hessian columns absorb the
            # curvature term that limits a purely linear fit to first order
            if len(nb) >= 5:
                A = np.stack([a, b, a * a / 2, a * b, b * b / 2], axis=1)
            else:
                A = np.stack([a, b], axis=1)
            pinv = np.linalg.pinv(A)
            coef3 = np.outer(e1, pinv[0]) + np.outer(e2, pinv[1])
            for k in range(3):
                vals[k].extend(coef3[k])
                vals[k].append(-coef3[k].sum())
            rows.extend([i] * (len(nb) + 1))
            cols.extend(list(nb) + [i])
        n = self.n_vertices
        return tuple(sparse.csr_matrix((np.asarray(vk), (rows, cols)), shape=(n, n)) for vk in vals)

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Triangle index and barycentric weights for points on the sphere (radial projection)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(p)
        tri = -np.ones(n, dtype=np.int64)
        bary = np.zeros((n, 3))
        k = min(4, self.n_vertices)
        _, near = self._kdtree.query(p, k=k)
        near = np.atleast_2d(near).reshape(n, k)
        todo = np.arange(n)
        for col in range(k):
            if len(todo) == 0:
                break
            cand = self._vertex_triangles[near[todo, col]]
            safe = np.where(cand < 0, 0, cand)
            lam = np.einsum("nkij,nj->nki", self._tri_inverse[safe], p[todo])
            ok = (lam >= -1e-12).all(axis=2) & (cand >= 0)
            hit = ok.any(axis=1)
            first = np.argmax(ok, axis=1)
            idx = todo[hit]
            tri[idx] = cand[hit, first[hit]]
            l = lam[hit, first[hit]]
            bary[idx] = l / l.sum(axis=1, keepdims=True)
            todo = todo[~hit]
        for i in todo:
            lam = self._tri_inverse @ p[i]
            ok = np.nonzero((lam >= -1e-12).all(axis=1))[0]
            if len(ok) == 0:
                raise FlowError(f"point {p[i]} left the interpolation support")
            tri[i] = ok[0]
            bary[i] = lam[ok[0]] / lam[ok[0]].sum()
        return tri, bary

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Piecewise-linear interpolation of vertex data (scalar or vector) at points."""
        tri, bary = self.locate(points)
        vals = np.asarray(values)[self.triangles[tri]]
        if vals.ndim == 2:
            return np.einsum("nk,nk->n", vals, bary)
        return np.einsum("nkd,nk->nd", vals, bary)

    # -- serialization -------------------------------------------------------
    def to_off(self) -> str:
        out = io.StringIO()
        out.write("OFF\n")
        out.write(f"{self.n_vertices} {len(self.triangles)} {len(self.edges)}\n")
        for x, y, z in self.vertices:
            out.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in self.triangles:
            out.write(f"3 {a} {b} {c}\n")
        return out.getvalue()

    def write_off(self, path: str | Path) -> None:
        Path(path).write_text(self.to_off())

    @classmethod
    def from_off(cls, text: str) -> SphereMesh:
        lines = [ln.split("#")[0].strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines or lines[0] != "OFF":
            raise MeshError("not an OFF file")
        nv, nf, _ = (int(s) for s in lines[1].split())
        verts = np.array([[float(s) for s in ln.split()] for ln in lines[2:2 + nv]])
        faces = []
        for ln in lines[2 + nv:2 + nv + nf]:
            parts = [int(s) for s in ln.split()]
            if parts[0] != 3:
                raise MeshError("only triangular faces are supported")
            faces.append(parts[1:4])
        verts /= np.linalg.norm(verts, axis=1, keepdims=True)
        tris = np.asarray(faces, dtype=np.int64)
        return cls(verts, tris, lumped_weights(verts, tris))

    @classmethod
    def read_off(cls, path: str | Path) -> SphereMesh:
        return cls.from_off(Path(path).read_text())


def lumped_weights(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """One third of each spherical triangle's area to its corners, normalized to total 1."""
    areas = spherical_triangle_areas(vertices[triangles[:, 0]], vertices[triangles[:, 1]], vertices[triangles[:, 2]])
    w = np.zeros(len(vertices))
    for k in range(3):
        np.add.at(w, triangles[:, k], areas / 3.0)
    return w / w.sum()


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    zr = 1.0 / math.sqrt(5.0)
    rr = 2.0 / math.sqrt(5.0)
    verts = [(0.0, 0.0, 1.0)]
    verts += [(rr * math.cos(2 * math.pi * k / 5), rr * math.sin(2 * math.pi * k / 5), zr) for k in range(5)]
    verts += [(rr * math.cos(2 * math.pi * k / 5 + math.pi / 5), rr * math.sin(2 * math.pi * k / 5 + math.pi / 5), -zr)
              for k in range(5)]
    verts.append((0.0, 0.0, -1.0))
    U = lambda k: 1 + k % 5  # noqa: E731
    L = lambda k: 6 + k % 5  # noqa: E731
    tris = []
    for k in range(5):
        tris.append((0, U(k), U(k + 1)))
        tris.append((U(k), L(k), U(k + 1)))
        tris.append((U(k + 1), L(k), L(k + 1)))
        tris.append((11, L(k + 1), L(k)))
    return np.asarray(verts), np.asarray(tris, dtype=np.int64)


def _orient_outward(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    t = t.copy()
    t[flip] = t[flip][:, [0, 2, 1]]
    return t


def make_mesh(level: int) -> SphereMesh:
    """Icosphere with ``level`` midpoint subdivisions; vertices ordered by a generic height."""
    if level < 0:
        raise ValueError("subdivision level must be >= 0")
    v, t = _icosahedron()
    verts = [tuple(p) for p in v]
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def mid(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = np.add(verts[i], verts[j])
                verts.append(tuple(m / np.linalg.norm(m)))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in t:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        t = np.asarray(new, dtype=np.int64)
    v = np.asarray(verts)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    order = np.argsort(v @ _TIE_DIRECTION, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    v = v[order]
    t = _orient_outward(v, rank[t])
    return SphereMesh(v, t, lumped_weights(v, t), level=level)


# -- fields -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalarField:
    """Vertex samples of a function on the sphere, optionally with its smooth source."""

    mesh: SphereMesh
    values: np.ndarray
    source: Expression | None = None

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.n_vertices,):
            raise ValueError(f"expected {self.mesh.n_vertices} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_expression(cls, mesh: SphereMesh, expr: Expression | str, t: float = 0.0) -> ScalarField:
        e = Expression(expr) if isinstance(expr, str) else expr
        if e.time_dependent:
            e = e.at_time(t)
        return cls(mesh, e(mesh.vertices), e)

    @classmethod
    def constant(cls, mesh: SphereMesh, c: float) -> ScalarField:
        return cls(mesh, np.full(mesh.n_vertices, float(c)), Expression(float(c)))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        if self.source is not None:
            return self.source(points)
        return self.mesh.interpolate(self.values, points)

    def sphere_grad(self, points: np.ndarray | None = None) -> np.ndarray:
        """Tangent gradient; exact when a source is known, least squares otherwise."""
        if points is None:
            points = self.mesh.vertices
            if self.source is not None:
                return self.source.sphere_grad(points)
            return vertex_gradients(self)
        if self.source is not None:
            return self.source.sphere_grad(points)
        g = self.mesh.interpolate(vertex_gradients(self), points)
        p = np.atleast_2d(points)
        return g - np.sum(g * p, axis=1, keepdims=True) * p

    def _combine(self, other, op) -> ScalarField:
        if isinstance(other, ScalarField):
            if other.mesh is not self.mesh:
                raise ValueError("fields live on different meshes")
            src = op(self.source, other.source) if self.source is not None and other.source is not None else None
            return ScalarField(self.mesh, op(self.values, other.values), src)
        src = op(self.source, other) if self.source is not None else None
        return ScalarField(self.mesh, op(self.values, float(other)), src)

    def __add__(self, other) -> ScalarField:
        return self._combine(other, lambda a, b: a + b)

    __radd__ = __add__

    def __sub__(self, other) -> ScalarField:
        return self._combine(other, lambda a, b: a - b)

    def __mul__(self, other) -> ScalarField:
        return self._combine(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __neg__(self) -> ScalarField:
        return ScalarField(self.mesh, -self.values, -self.source if self.source is not None else None)

    def compose(self, outer: str, func: Callable[[np.ndarray], np.ndarray] | None = None) -> ScalarField:
        """g∘H for g given as an expression in ``s``."""
        import sympy as sp
        from .expr import S
        g = sp.sympify(outer, locals={"s": S})
        f = func or sp.lambdify(S, g, "numpy")
        vals = np.broadcast_to(np.asarray(f(self.values), dtype=float), self.values.shape)
        src = self.source.compose(g) if self.source is not None else None
        return ScalarField(self.mesh, vals, src)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["vertex_index", "value"])
        for i, val in enumerate(self.values):
            w.writerow([i, repr(float(val))])
        return out.getvalue()

    @classmethod
    def from_csv(cls, mesh: SphereMesh, text: str) -> ScalarField:
        vals = np.full(mesh.n_vertices, np.nan)
        for row in csv.DictReader(io.StringIO(text)):
            vals[int(row["vertex_index"])] = float(row["value"])
        if np.isnan(vals).any():
            raise ValueError("CSV does not cover every vertex")
        return cls(mesh, vals)


def integrate(H: ScalarField) -> float:
    """Lumped integral; the mean, since the total area is 1."""
    return float(np.dot(H.values, H.mesh.vertex_weights))


def vertex_gradients(H: ScalarField) -> np.ndarray:
    gx, gy, gz = H.mesh.gradient_operator
    return np.stack([gx @ H.values, gy @ H.values, gz @ H.values], axis=1)


def sgrad_from_gradient(points: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return FOUR_PI * np.cross(points, grad)


def poisson_bracket(H: ScalarField, K: ScalarField) -> ScalarField:
    """Discrete {H, K} = -4 pi n.(grad H x grad K) from least-squares vertex gradients."""
    if H.mesh is not K.mesh:
        raise ValueError("fields live on different meshes")
    n = H.mesh.vertices
    gh, gk = vertex_gradients(H), vertex_gradients(K)
    return ScalarField(H.mesh, -FOUR_PI * np.einsum("ij,ij->i", n, np.cross(gh, gk)))


def exact_bracket(H: Expression, K: Expression, points: np.ndarray) -> np.ndarray:
    """{H, K} from exact gradients of smooth sources."""
    gh, gk = H.sphere_grad(points), K.sphere_grad(points)
    return -FOUR_PI * np.einsum("ij,ij->i", points, np.cross(gh, gk))


# -- Hamiltonian paths and flows ---------------------------------------------

def uniform_times(m: int) -> np.ndarray:
    if m < 1:
        raise ValueError("need at least one time step")
    return np.linspace(0.0, 1.0, m + 1)


def _as_time_array(t, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(t, dtype=float), (n,))


def _rk4_batch(velocity: Callable[[np.ndarray, np.ndarray], np.ndarray], points: np.ndarray,
               t0: np.ndarray, t1: np.ndarray, n_steps: int) -> np.ndarray:
    """Integrate every row from t0[i] to t1[i] in n_steps equal RK4 steps, re-projecting."""
    x = np.array(points, dtype=float)
    h = (t1 - t0) / n_steps
    t = t0.astype(float).copy()
    for _ in range(n_steps):
        k1 = velocity(x, t)
        k2 = velocity(_proj(x + 0.5 * h[:, None] * k1), t + 0.5 * h)
        k3 = velocity(_proj(x + 0.5 * h[:, None] * k2), t + 0.5 * h)
        k4 = velocity(_proj(x + h[:, None] * k3), t + h)
        x = _proj(x + (h[:, None] / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
        t = t + h
    return x


def _proj(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _steps_for(span: float, dt: float) -> int:
    if dt <= 1e-12:
        raise FlowError(f"integrator step underflow: dt={dt}")
    return max(1, int(math.ceil(abs(span) / dt - 1e-9)))


@dataclass
class FlowMap:
    """Positions of tracked points at each sample of the path's time grid."""

    times: np.ndarray
    positions: np.ndarray  # (len(times), N, 3)
    dt: float

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]


class HamiltonianPath:
    """Time-dependent Hamiltonian F_t on the sphere, t in [0, 1], uniform grid."""

    mesh: SphereMesh
    times: np.ndarray

    def evaluate(self, points: np.ndarray, t) -> np.ndarray:
        raise NotImplementedError

    def flow_to(self, points: np.ndarray, t, dt: float) -> np.ndarray:
        """f_t(points), row-wise times."""
        raise NotImplementedError

    def inverse_flow_to(self, points: np.ndarray, t, dt: float) -> np.ndarray:
        """f_t^{-1}(points), row-wise times."""
        raise NotImplementedError

    def slice_values(self, k: int) -> np.ndarray:
        t = self.times[k]
        return self.evaluate(self.mesh.vertices, np.full(self.mesh.n_vertices, t))

    def slice(self, k: int) -> ScalarField:
        return ScalarField(self.mesh, self.slice_values(k))

    @cached_property
    def values(self) -> np.ndarray:
        return np.stack([self.slice_values(k) for k in range(len(self.times))])

    def check_grid(self, dt: float) -> int:
        step = self.times[1] - self.times[0]
        ratio = step / dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise FlowError(f"dt={dt} does not divide the time grid step {step}")
        return int(round(ratio))


class SampledPath(HamiltonianPath):
    """Slices sampled at vertices (linear in time); exact when built from an expression."""

    def __init__(self, mesh: SphereMesh, values: np.ndarray | None = None,
                 source: Expression | None = None, m: int = 10):
        self.mesh = mesh
        self.source = source
        if values is None:
            if source is None:
                raise ValueError("need sampled values or a source expression")
            self.times = uniform_times(m)
            values = np.stack([source(mesh.vertices, t) for t in self.times])
        else:
            values = np.asarray(values, dtype=float)
            if values.ndim != 2 or values.shape[1] != mesh.n_vertices:
                raise ValueError("values must be (m+1, V)")
            self.times = uniform_times(values.shape[0] - 1)
        if not np.all(np.isfinite(values)):
            raise ValueError("path slices must be finite")
        self.__dict__["values"] = values

    @classmethod
    def from_expression(cls, mesh: SphereMesh, expr: Expression | str, m: int = 10) -> SampledPath:
        return cls(mesh, source=Expression(expr) if isinstance(expr, str) else expr, m=m)

    @classmethod
    def constant(cls, H: ScalarField, m: int = 10) -> SampledPath:
        if H.source is not None:
            return cls(H.mesh, source=H.source, m=m)
        return cls(H.mesh, np.tile(H.values, (m + 1, 1)))

    @classmethod
    def scaled(cls, H: ScalarField, lam: Callable[[np.ndarray], np.ndarray] | str, m: int = 10) -> SampledPath:
        """The path lambda(t) * H."""
        if isinstance(lam, str):
            lam_expr = Expression(lam)
            if H.source is not None:
                return cls(H.mesh, source=lam_expr * H.source, m=m)
            lam = lambda tt: lam_expr(np.zeros((len(np.atleast_1d(tt)), 3)), np.atleast_1d(tt))  # noqa: E731
        times = uniform_times(m)
        lv = np.asarray(lam(times), dtype=float).reshape(-1)
        return cls(H.mesh, lv[:, None] * H.values[None, :])

    def slice_values(self, k: int) -> np.ndarray:
        return self.values[k]

    def _time_weights(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if np.any(t < -1e-12) or np.any(t > 1 + 1e-12):
            raise FlowError("time outside [0, 1]")
        m = len(self.times) - 1
        s = np.clip(t, 0.0, 1.0) * m
        k = np.minimum(np.floor(s).astype(int), m - 1)
        return k, s - k

    def evaluate(self, points: np.ndarray, t) -> np.ndarray:
        p = np.atleast_2d(points)
        t = _as_time_array(t, len(p))
        if self.source is not None:
            return self.source(p, t)
        k, a = self._time_weights(t)
        tri, bary = self.mesh.locate(p)
        idx = self.mesh.triangles[tri]
        v0 = np.einsum("nk,nk->n", self.values[k[:, None], idx], bary)
        v1 = np.einsum("nk,nk->n", self.values[k[:, None] + 1, idx], bary)
        return (1 - a) * v0 + a * v1

    @cached_property
    def _slice_gradients(self) -> np.ndarray:
        return np.stack([vertex_gradients(ScalarField(self.mesh, v)) for v in self.values])

    def gradient(self, points: np.ndarray, t) -> np.ndarray:
        """Tangent gradient of F_t at points."""
        p = np.atleast_2d(points)
        t = _as_time_array(t, len(p))
        if self.source is not None:
            return self.source.sphere_grad(p, t)
        k, a = self._time_weights(t)
        tri, bary = self.mesh.locate(p)
        idx = self.mesh.triangles[tri]
        gr = self._slice_gradients
        g = (1 - a)[:, None] * np.einsum("nkd,nk->nd", gr[k[:, None], idx], bary) \
            + a[:, None] * np.einsum("nkd,nk->nd", gr[k[:, None] + 1, idx], bary)
        return g - np.sum(g * p, axis=1, keepdims=True) * p

    def velocity(self, points: np.ndarray, t) -> np.ndarray:
        p = np.atleast_2d(points)
        return sgrad_from_gradient(p, self.gradient(p, t))

    def flow_to(self, points: np.ndarray, t, dt: float) -> np.ndarray:
        p = np.atleast_2d(points)
        t = _as_time_array(t, len(p))
        n = _steps_for(float(np.max(np.abs(t), initial=0.0)), dt)
        return _rk4_batch(self.velocity, p, np.zeros(len(p)), t, n)

    def inverse_flow_to(self, points: np.ndarray, t, dt: float) -> np.ndarray:
        p = np.atleast_2d(points)
        t = _as_time_array(t, len(p))
        n = _steps_for(float(np.max(np.abs(t), initial=0.0)), dt)
        return _rk4_batch(self.velocity, p, t.astype(float), np.zeros(len(p)), n)


class InversePath(HamiltonianPath):
    """F-bar(x, t) = -F(f_t(x), t), generating the inverse isotopy f_t^{-1}."""

    def __init__(self, F: HamiltonianPath, dt: float = 1e-3):
        self.F, self.mesh, self.times, self.dt = F, F.mesh, F.times, dt

    def evaluate(self, points: np.ndarray, t) -> np.ndarray:
        p = np.atleast_2d(points)
        return -self.F.evaluate(self.F.flow_to(p, t, self.dt), t)

    def flow_to(self, points, t, dt):
        return self.F.inverse_flow_to(points, t, dt)

    def inverse_flow_to(self, points, t, dt):
        return self.F.flow_to(points, t, dt)


class ComposedPath(HamiltonianPath):
    """(F # G)(x, t) = F(x, t) + G(f_t^{-1}(x), t), generating f_t g_t."""

    def __init__(self, F: HamiltonianPath, G: HamiltonianPath, dt: float = 1e-3):
        if F.mesh is not G.mesh or len(F.times) != len(G.times):
            raise ValueError("paths must share mesh and time grid")
        self.F, self.G, self.mesh, self.times, self.dt = F, G, F.mesh, F.times, dt

    def evaluate(self, points: np.ndarray, t) -> np.ndarray:
        p = np.atleast_2d(points)
        return self.F.evaluate(p, t) + self.G.evaluate(self.F.inverse_flow_to(p, t, self.dt), t)

    def flow_to(self, points, t, dt):
        return self.F.flow_to(self.G.flow_to(points, t, dt), t, dt)

    def inverse_flow_to(self, points, t, dt):
        return self.G.inverse_flow_to(self.F.inverse_flow_to(points, t, dt), t, dt)


def inverse_path(F: HamiltonianPath, dt: float = 1e-3) -> InversePath:
    return InversePath(F, dt)


def compose_paths(F: HamiltonianPath, G: HamiltonianPath, dt: float = 1e-3) -> ComposedPath:
    return ComposedPath(F, G, dt)


def hamiltonian_flow(F: HamiltonianPath, points: np.ndarray, dt: float) -> FlowMap:
    """Track points under the isotopy of F with RK4 steps of size dt (re-projected)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if dt <= 1e-12:
        raise FlowError(f"integrator step underflow: dt={dt}")
    per = F.check_grid(dt)
    out = np.empty((len(F.times), len(p), 3))
    out[0] = _proj(p)
    if isinstance(F, SampledPath):
        x = out[0]
        for k in range(1, len(F.times)):
            t0 = np.full(len(p), F.times[k - 1])
            x = _rk4_batch(F.velocity, x, t0, np.full(len(p), F.times[k]), per)
            out[k] = x
    else:
        nt = len(F.times) - 1
        rows = np.repeat(F.times[1:], len(p))
        x = F.flow_to(np.tile(out[0], (nt, 1)), rows, dt)
        out[1:] = x.reshape(nt, len(p), 3)
    return FlowMap(F.times.copy(), out, dt)


def calabi(F: HamiltonianPath, support_mask: np.ndarray) -> float:
    """Space-time integral of F over the mask, trapezoid rule in time."""
    mask = np.asarray(support_mask, dtype=bool)
    vals = F.values
    outside = np.abs(vals[:, ~mask])
    if outside.size and outside.max() > 1e-12:
        raise SupportError(f"path not supported in mask (max |F| outside = {outside.max():.3e})")
    w = F.mesh.vertex_weights
    per_t = vals[:, mask] @ w[mask]
    return float(np.trapezoid(per_t, F.times))


# -- caps and displacement -----------------------------------------------------

@dataclass(frozen=True)
class Cap:
    """Closed spherical cap given by centre and normalized area."""

    center: tuple[float, float, float]
    area: float

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", tuple(c / np.linalg.norm(c)))
        if not 0.0 <= self.area <= 1.0:
            raise ValueError("cap area must lie in [0, 1]")

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center)

    @property
    def radius(self) -> float:
        """Angular radius: area = (1 - cos rho) / 2."""
        return math.acos(max(-1.0, min(1.0, 1.0 - 2.0 * self.area)))

    def angle(self, points: np.ndarray) -> np.ndarray:
        return np.arccos(np.clip(np.atleast_2d(points) @ self.c, -1.0, 1.0))

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.angle(points) <= self.radius + 1e-15

    def vertex_mask(self, mesh: SphereMesh) -> np.ndarray:
        return self.contains(mesh.vertices)

    def boundary_samples(self, n: int = 64) -> np.ndarray:
        c = self.c
        e1 = np.cross(c, [1.0, 0.0, 0.0])
        if np.linalg.norm(e1) < 1e-6:
            e1 = np.cross(c, [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(c, e1)
        a = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        rho = self.radius
        return math.cos(rho) * c + math.sin(rho) * (np.outer(np.cos(a), e1) + np.outer(np.sin(a), e2))

    def samples(self, n_rings: int = 6, n_per_ring: int = 32) -> np.ndarray:
        """Centre, interior rings and boundary."""
        pts = [self.c[None, :]]
        for j in range(1, n_rings + 1):
            sub = Cap(self.center, (1 - math.cos(self.radius * j / n_rings)) / 2)
            pts.append(sub.boundary_samples(n_per_ring))
        return np.concatenate(pts)


def _perpendicular(c: np.ndarray) -> np.ndarray:
    u = np.cross(c, [0.0, 0.0, 1.0])
    if np.linalg.norm(u) < 1e-6:
        u = np.cross(c, [1.0, 0.0, 0.0])
    return u / np.linalg.norm(u)


def displacement_margin(F: HamiltonianPath, cap: Cap, dt: float = 1e-2, n_samples: int = 64) -> float:
    """Smallest angular gap between the time-1 image of cap samples and the cap."""
    pts = cap.samples(n_rings=6, n_per_ring=n_samples)
    img = F.flow_to(pts, np.ones(len(pts)), dt)
    return float(np.min(cap.angle(img)) - cap.radius)


def displacing_rotation(mesh: SphereMesh, cap_center: Sequence[float], cap_area: float,
                        m: int = 10, dt: float = 1e-2) -> SampledPath:
    """Half-turn about an axis orthogonal to the cap centre, generated by (1/4) u.p."""
    cap = Cap(tuple(cap_center), cap_area)
    if cap_area >= 0.5:
        raise DisplacementError("caps of area >= 1/2 cannot be displaced by a rotation")
    u = _perpendicular(cap.c)
    # angular speed of sgrad(k u.p) is 4 pi k; k = 1/4 gives a half turn in unit time
    expr = Expression(f"({float(u[0])!r}*x + {float(u[1])!r}*y + {float(u[2])!r}*z)/4")
    path = SampledPath.from_expression(mesh, expr, m=m)
    margin = displacement_margin(path, cap, dt)
    if margin <= 0:
        raise DisplacementError(f"rotation failed to displace cap (margin {margin:.3e})")
    return path
