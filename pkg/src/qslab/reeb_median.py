"""Contour trees of vertex fields on the sphere and the median quasi-state.

The Reeb graph of a function on S^2 is a tree.  Pushing the area measure to
the tree and taking the point that splits it into pieces of measure at most
1/2 gives the median; the median quasi-state evaluates the function there.

Vertex measure is lumped, so a tree built from a mesh carries atoms: the
weight of each critical vertex sits on its node and the weights of regular
vertices sit inside the edge that contains them.  Trees built by hand may
instead carry a continuous measure spread uniformly in level along an edge.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .sphere_field import ScalarField, SphereMesh, poisson_bracket


class ReebError(ValueError):
    pass


@dataclass
class ReebEdge:
    lower: int
    upper: int
    measure: float
    atom_levels: np.ndarray = field(default_factory=lambda: np.zeros(0))
    atom_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    atom_vertices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    continuous: bool = False


@dataclass
class ReebGraph:
    node_levels: np.ndarray
    node_weights: np.ndarray
    edges: list[ReebEdge]
    node_vertices: np.ndarray | None = None
    # rank of each node in the (value, index) order; breaks level ties
    node_keys: np.ndarray | None = None
    vertex_node: np.ndarray | None = None
    vertex_edge: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.node_levels = np.asarray(self.node_levels, dtype=float)
        self.node_weights = np.asarray(self.node_weights, dtype=float)
        if self.node_keys is None:
            self.node_keys = np.argsort(np.argsort(self.node_levels, kind="stable"), kind="stable")
        n = len(self.node_levels)
        if len(self.edges) != n - 1:
            raise ReebError(f"a tree on {n} nodes needs {n - 1} edges, got {len(self.edges)}")
        for e in self.edges:
            if self.node_keys[e.lower] >= self.node_keys[e.upper] or \
                    self.node_levels[e.lower] > self.node_levels[e.upper]:
                raise ReebError(f"edge {e.lower}->{e.upper} is not oriented upward")
        seen = {0}
        stack = [0]
        adj = self.adjacency
        while stack:
            u = stack.pop()
            for w, _ in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != n:
            raise ReebError("graph is not connected")

    @classmethod
    def from_edges(cls, levels: Sequence[float], edges: Sequence[tuple[int, int, float]],
                   node_weights: Sequence[float] | None = None) -> ReebGraph:
        """Tree with measure spread uniformly in level along each edge."""
        lv = np.asarray(levels, dtype=float)
        nw = np.zeros(len(lv)) if node_weights is None else np.asarray(node_weights, dtype=float)
        es = []
        for a, b, m in edges:
            lo, hi = (a, b) if lv[a] <= lv[b] else (b, a)
            es.append(ReebEdge(lo, hi, float(m), continuous=True))
        return cls(lv, nw, es)

    @property
    def n_nodes(self) -> int:
        return len(self.node_levels)

    @property
    def total_measure(self) -> float:
        return float(self.node_weights.sum() + sum(e.measure for e in self.edges))

    @property
    def adjacency(self) -> list[list[tuple[int, int]]]:
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n_nodes)]
        for i, e in enumerate(self.edges):
            adj[e.lower].append((e.upper, i))
            adj[e.upper].append((e.lower, i))
        return adj

    @property
    def leaves(self) -> list[int]:
        return [i for i, a in enumerate(self.adjacency) if len(a) == 1]

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": i, "level": float(self.node_levels[i]), "weight": float(self.node_weights[i]),
                       "vertex": None if self.node_vertices is None else int(self.node_vertices[i])}
                      for i in range(self.n_nodes)],
            "edges": [{"lower": e.lower, "upper": e.upper, "measure": e.measure,
                       "n_atoms": int(len(e.atom_weights)), "continuous": e.continuous} for e in self.edges],
            "total_measure": self.total_measure,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# -- contour tree ------------------------------------------------------------------

def _find(parent: list[int], x: int) -> int:
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def _merge_tree(order: Sequence[int], nbrs: list[list[int]], rank: list[int], descending: bool) -> list[int]:
    """Union-find sweep; arcs (child, parent) of the join or split tree.

    In a descending sweep (join tree of superlevel sets) each arc joins the
    most recently added vertex of a component above v to v itself.
    """
    n = len(order)
    uf = list(range(n))
    last = list(range(n))
    arcs: list[tuple[int, int]] = []
    for v in order:
        rv = rank[v]
        for u in nbrs[v]:
            if (rank[u] > rv) if descending else (rank[u] < rv):
                ru = _find(uf, u)
                rvv = _find(uf, v)
                if ru != rvv:
                    arcs.append((last[ru], v))
                    uf[ru] = rvv
                    last[rvv] = v
    return arcs


def contour_tree(values: np.ndarray, nbrs: list[list[int]]) -> list[tuple[int, int]]:
    """Augmented contour tree arcs (lower, upper) by merging join and split trees."""
    n = len(values)
    order_up = np.lexsort((np.arange(n), values)).tolist()
    rank = [0] * n
    for r, v in enumerate(order_up):
        rank[v] = r
    join = _merge_tree(order_up[::-1], nbrs, rank, descending=True)    # (child above, parent below)
    split = _merge_tree(order_up, nbrs, rank, descending=False)        # (child below, parent above)
    if len(join) != n - 1 or len(split) != n - 1:
        raise ReebError("mesh is disconnected")
    # join tree: each vertex has at most one lower parent and a set of upper children
    j_down = [-1] * n
    j_up: list[set[int]] = [set() for _ in range(n)]
    for c, p in join:
        j_down[c] = p
        j_up[p].add(c)
    s_up = [-1] * n
    s_down: list[set[int]] = [set() for _ in range(n)]
    for c, p in split:
        s_up[c] = p
        s_down[p].add(c)

    def is_leaf(v: int) -> bool:
        return (len(j_up[v]) == 0 and len(s_down[v]) == 1) or (len(s_down[v]) == 0 and len(j_up[v]) == 1)

    queue = deque(v for v in order_up if is_leaf(v))
    done = [False] * n
    arcs: list[tuple[int, int]] = []
    remaining = n
    while remaining > 1:
        v = queue.popleft()
        if done[v]:
            continue
        if len(j_up[v]) == 0:
            u = j_down[v]
            arcs.append((u, v))
        else:
            u = s_up[v]
            arcs.append((v, u))
        # splice v out of both trees
        _splice(v, j_down, j_up)
        _splice(v, s_up, s_down)
        done[v] = True
        remaining -= 1
        if remaining > 1 and not done[u] and is_leaf(u):
            queue.append(u)
    return arcs


def _splice(v: int, parent: list[int], children: list[set[int]]) -> None:
    p = parent[v]
    kids = children[v]
    if p >= 0:
        children[p].discard(v)
    for c in kids:
        parent[c] = p
        if p >= 0:
            children[p].add(c)
    children[v] = set()
    parent[v] = -1


def _mesh_neighbors(mesh: SphereMesh) -> list[list[int]]:
    cache = mesh.__dict__.get("_nbr_lists")
    if cache is None:
        cache = [nb.tolist() for nb in mesh.neighbors]
        mesh.__dict__["_nbr_lists"] = cache
    return cache


def build_reeb(H: ScalarField) -> ReebGraph:
    """Contour tree of a vertex field, regular vertices folded into edge atoms."""
    mesh = H.mesh
    values = H.values
    n = mesh.n_vertices
    arcs = contour_tree(values, _mesh_neighbors(mesh))
    up_deg = np.zeros(n, dtype=int)
    down_deg = np.zeros(n, dtype=int)
    up_of = np.full(n, -1)
    for lo, hi in arcs:
        up_deg[lo] += 1
        down_deg[hi] += 1
        up_of[lo] = hi
    order = np.lexsort((np.arange(n), values))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    critical = ~((up_deg == 1) & (down_deg == 1))
    crit_ids = np.nonzero(critical)[0]
    node_of = np.full(n, -1)
    node_of[crit_ids] = np.arange(len(crit_ids))
    w = mesh.vertex_weights
    edges: list[ReebEdge] = []
    vertex_edge = np.full(n, -1)
    for lo, hi in arcs:
        if not critical[lo]:
            continue
        chain = []
        v = hi
        while not critical[v]:
            chain.append(v)
            v = up_of[v]
        chain_arr = np.asarray(chain, dtype=np.int64)
        vertex_edge[chain_arr] = len(edges)
        edges.append(ReebEdge(int(node_of[lo]), int(node_of[v]), float(w[chain_arr].sum()) if chain else 0.0,
                              values[chain_arr], w[chain_arr], chain_arr))
    return ReebGraph(values[crit_ids], w[crit_ids], edges, node_vertices=crit_ids,
                     node_keys=rank[crit_ids], vertex_node=node_of, vertex_edge=vertex_edge)


# -- median ------------------------------------------------------------------------------

@dataclass
class MedianPoint:
    level: float
    node: int | None = None
    edge: int | None = None
    vertex: int | None = None
    branches: list[float] = field(default_factory=list)
    tie: bool = False

    @property
    def balanced(self) -> bool:
        return all(b <= 0.5 + 1e-12 for b in self.branches)


def median(reeb: ReebGraph) -> MedianPoint:
    """Point of the tree whose complementary pieces each carry at most half the measure."""
    n = reeb.n_nodes
    adj = reeb.adjacency
    T = reeb.total_measure
    half = 0.5 * T
    # exact halves occur on symmetric meshes; absorb summation-order rounding
    tol = 1e-12 * T
    # root at 0; below[v] = measure of v's subtree including v's atom
    parent = [-1] * n
    parent_edge = [-1] * n
    order = [0]
    seen = [False] * n
    seen[0] = True
    for u in order:
        for w, ei in adj[u]:
            if not seen[w]:
                seen[w] = True
                parent[w], parent_edge[w] = u, ei
                order.append(w)
    below = reeb.node_weights.astype(float).copy()
    for v in reversed(order[1:]):
        below[parent[v]] += below[v] + reeb.edges[parent_edge[v]].measure

    def side(e_idx: int, node: int) -> float:
        """Measure on node's side of edge e_idx, excluding the edge itself."""
        e = reeb.edges[e_idx]
        other = e.upper if node == e.lower else e.lower
        if parent[other] == node:
            return T - below[other] - e.measure
        return below[node]

    candidates: list[tuple[tuple[float, float], MedianPoint]] = []
    for v in range(n):
        branches = []
        for w, ei in adj[v]:
            branches.append(reeb.edges[ei].measure + side(ei, w))
        if all(b <= half + tol for b in branches):
            vert = None if reeb.node_vertices is None else int(reeb.node_vertices[v])
            candidates.append(((reeb.node_levels[v], float(reeb.node_keys[v])),
                               MedianPoint(float(reeb.node_levels[v]), node=v, vertex=vert, branches=branches)))
    for ei, e in enumerate(reeb.edges):
        a_lo, a_hi = side(ei, e.lower), side(ei, e.upper)
        if e.continuous:
            if e.measure > 0 and a_lo < half and a_hi < half:
                s = (half - a_lo) / e.measure
                lv = reeb.node_levels[e.lower] + s * (reeb.node_levels[e.upper] - reeb.node_levels[e.lower])
                key = reeb.node_keys[e.lower] + s * (reeb.node_keys[e.upper] - reeb.node_keys[e.lower])
                candidates.append(((lv, float(key)), MedianPoint(float(lv), edge=ei, branches=[half, half])))
            continue
        if len(e.atom_weights) == 0:
            continue
        f = a_lo + np.cumsum(e.atom_weights)
        before = f - e.atom_weights
        ok = np.nonzero((before <= half + tol) & (f >= half - tol))[0]
        for j in ok:
            lv = float(e.atom_levels[j])
            key = reeb.node_keys[e.lower] + (j + 1) / (len(f) + 1)
            candidates.append(((lv, float(key)), MedianPoint(lv, edge=ei, vertex=int(e.atom_vertices[j]),
                                                             branches=[float(before[j]), float(T - f[j])])))
    if not candidates:
        raise ReebError("no median found; measure is inconsistent")
    candidates.sort(key=lambda c: c[0])
    best = candidates[-1][1]
    best.branches = [b / T for b in best.branches]
    best.tie = len(candidates) > 1
    return best


def zeta_med(H: ScalarField) -> float:
    """Value of H at the median of its Reeb tree."""
    return median(build_reeb(H)).level


# -- quasi-measure -------------------------------------------------------------------------------

def distance_to_set(mesh: SphereMesh, C: np.ndarray) -> np.ndarray:
    """Angular distance from each vertex to the vertex set C."""
    mask = np.asarray(C, dtype=bool)
    if not mask.any():
        raise ValueError("C must be nonempty")
    chord, _ = cKDTree(mesh.vertices[mask]).query(mesh.vertices)
    return 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))


def shoulder_family(mesh: SphereMesh, C: np.ndarray) -> Callable[[float], ScalarField]:
    """s -> clip(1 - dist(., C)/s, 0, 1): equal to 1 on C, vanishing beyond width s."""
    d = distance_to_set(mesh, C)
    return lambda s: ScalarField(mesh, np.clip(1.0 - d / s, 0.0, 1.0))


@dataclass
class TauResult:
    value: float
    argmin: float
    evaluations: list[tuple[float, float]]


def tau_med(C: np.ndarray, mesh: SphereMesh, family: Callable[[float], ScalarField] | None = None,
            params: Sequence[float] | None = None, budget: int = 12) -> TauResult:
    """Upper bound for the quasi-measure of C: min of zeta_med over admissible test functions."""
    mask = np.asarray(C, dtype=bool)
    if family is None:
        family = shoulder_family(mesh, mask)
    if params is None:
        params = list(np.geomspace(math.pi, mesh.mesh_size / 4.0, budget))
    evals = []
    for s in params[:budget]:
        F = family(s)
        if np.any(F.values[mask] < 1.0) or np.any(F.values < 0.0) or np.any(F.values > 1.0):
            raise ValueError(f"family member at parameter {s} is not an admissible test function for C")
        evals.append((float(s), zeta_med(F)))
    s_best, v_best = min(evals, key=lambda sv: (sv[1], -sv[0]))
    return TauResult(v_best, s_best, evals)


# -- bracket inequality --------------------------------------------------------------------------

@dataclass
class BracketRow:
    pi: float
    sqrt_bracket: float
    ratio: float


@dataclass
class BracketReport:
    rows: list[BracketRow]

    @property
    def max_ratio(self) -> float:
        return max((r.ratio for r in self.rows), default=0.0)


def bracket_inequality_report(pairs: Sequence[tuple[ScalarField, ScalarField]],
                              zeta: Callable[[ScalarField], float] = zeta_med) -> BracketReport:
    """|zeta(H+K) - zeta(H) - zeta(K)| against sqrt of the sup-norm of {H, K}."""
    rows = []
    for H, K in pairs:
        pi = abs(zeta(H + K) - zeta(H) - zeta(K))
        sb = math.sqrt(float(np.max(np.abs(poisson_bracket(H, K).values))))
        if sb > 0:
            ratio = pi / sb
        else:
            ratio = 0.0 if pi == 0 else math.inf
        rows.append(BracketRow(pi, sb, ratio))
    return BracketReport(rows)


# -- axiom suite ---------------------------------------------------------------------------------

@dataclass
class AxiomReport:
    n_fields: int
    normalization_error: float
    monotonicity_violations: int
    aarnes_residual: float
    lipschitz_violations: int
    vanishing_max: float
    ham_invariance: float | None = None
    aarnes_tol: float = 1e-2
    ham_tol: float = 1e-2

    @property
    def passed(self) -> bool:
        ok = (self.normalization_error == 0.0 and self.monotonicity_violations == 0
              and self.aarnes_residual <= self.aarnes_tol and self.lipschitz_violations == 0
              and self.vanishing_max == 0.0)
        if self.ham_invariance is not None:
            ok = ok and self.ham_invariance <= self.ham_tol
        return ok

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("n_fields", "normalization_error", "monotonicity_violations",
                                              "aarnes_residual", "lipschitz_violations", "vanishing_max",
                                              "ham_invariance", "passed")}


def _random_values(rng: np.random.Generator, pts: np.ndarray, degree: int = 3) -> np.ndarray:
    """Vertex values of a random polynomial of the given degree, evaluated numerically."""
    x, y, z = pts.T
    out = np.zeros(len(pts))
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            for k in range(degree + 1 - i - j):
                if i + j + k:
                    out += rng.normal() * x**i * y**j * z**k
    return out


def _random_profile(rng: np.random.Generator) -> Callable[[np.ndarray], np.ndarray]:
    c = rng.normal(size=5)
    w = 1.0 + abs(c[4])
    return lambda s: c[0] * s + c[1] * s**2 + c[2] * s**3 + c[3] * np.sin(w * s)


def lipschitz_holds(zh: float, zk: float, sup: float) -> bool:
    """|zh - zk| <= sup up to the rounding of the two subtractions involved."""
    slack = 4.0 * np.finfo(float).eps * max(abs(zh), abs(zk), sup)
    return abs(zh - zk) <= sup + slack


def axiom_suite(zeta: Callable[[ScalarField], float], mesh: SphereMesh, n_fields: int = 100, seed: int = 0,
                cap_area: float = 0.4, ham_fields: int = 0, ham_speed: float = 0.1,
                dt: float = 1e-2) -> AxiomReport:
    """Quasi-state axioms on seeded random smooth fields.

    Normalization (constants and shifts), monotonicity, Aarnes quasi-linearity
    on functions of one field (residual relative to the sup norms involved),
    the C^0 Lipschitz bound and vanishing on fields supported in caps of area
    at most cap_area.  With ham_fields > 0 also checks invariance under the
    time-one maps of random Hamiltonians whose tangent gradient is at most
    ham_speed; faster flows fold level sets below mesh resolution.
    """
    from .expr import random_hamiltonian
    from .sphere_field import Cap, SampledPath, hamiltonian_flow

    rng = np.random.default_rng(seed)
    pts = mesh.vertices
    F = lambda vals: ScalarField(mesh, vals)  # noqa: E731
    norm_err = 0.0
    mono = lip = 0
    aarnes = vanish = 0.0
    for c in (0.0, 1.0, -2.5, float(rng.normal())):
        norm_err = max(norm_err, abs(zeta(F(np.full(len(pts), c))) - c))
    for _ in range(n_fields):
        h = _random_values(rng, pts)
        zh = zeta(F(h))
        c = float(rng.normal())
        norm_err = max(norm_err, abs(zeta(F(h + c)) - (zh + c)))
        # monotone pair: add a nonnegative field
        k = h + _random_values(rng, pts, 2) ** 2
        zk = zeta(F(k))
        mono += zh > zk
        lip += not lipschitz_holds(zh, zk, float(np.max(np.abs(k - h))))
        # Aarnes on g(H), l(H)
        g, l = _random_profile(rng)(h), _random_profile(rng)(h)
        res = abs(zeta(F(g + l)) - zeta(F(g)) - zeta(F(l)))
        aarnes = max(aarnes, float(res / max(np.max(np.abs(g)) + np.max(np.abs(l)), 1e-300)))
        # Lipschitz on a signed perturbation
        p = h + 0.1 * _random_values(rng, pts, 2)
        lip += not lipschitz_holds(zh, zeta(F(p)), float(np.max(np.abs(p - h))))
        # vanishing on a cap-supported field
        centre = rng.normal(size=3)
        cap = Cap(tuple(centre), float(rng.uniform(0.05, cap_area)))
        inside = cap.vertex_mask(mesh)
        bump = np.where(inside, np.cos(0.5 * math.pi * cap.angle(pts) / cap.radius) ** 2, 0.0)
        vanish = max(vanish, abs(zeta(F(bump * (h - h.min() + 1.0) * rng.choice([-1.0, 1.0])))))
    ham = None
    if ham_fields:
        ham = 0.0
        for _ in range(ham_fields):
            H = random_hamiltonian(rng)
            path = SampledPath.from_expression(mesh, random_hamiltonian(rng, max_grad=ham_speed), m=10)
            moved = hamiltonian_flow(path, pts, dt).final
            ham = max(ham, abs(zeta(F(H(moved))) - zeta(F(H(pts)))))
    return AxiomReport(n_fields, norm_err, int(mono), aarnes, int(lip), vanish, ham)
