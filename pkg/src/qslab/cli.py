"""Command line runner: seeded verification suites with JSON reports, plus small inspection tools."""
from __future__ import annotations

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import datetime  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import platform  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from dataclasses import asdict, dataclass, field, fields, replace  # noqa: E402
from pathlib import Path  # noqa: E402
from typing import Callable  # noqa: E402

import numpy as np  # noqa: E402

SCHEMA_VERSION = 1
SUITES = ("hirzebruch", "group", "axioms", "bracket", "poisson", "fiber", "commute", "reduce")


class UsageError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    suite: str = "all"
    level: int = 4
    grid: tuple[int, int, int, int] = (64, 64, 32, 32)
    eps: float = 0.1
    poisson_eps: float = 0.02
    dt: float = 5e-3
    trials: int = 100
    pairs: int = 10
    group_trials: int = 10000
    k_max: int = 10
    seed: int = 0
    out: str | None = None
    threads: int = 1

    def __post_init__(self) -> None:
        self.grid = tuple(int(g) for g in self.grid)
        if self.suite not in SUITES + ("all",):
            raise UsageError(f"unknown suite {self.suite!r}; choose from {', '.join(SUITES + ('all',))}")
        if len(self.grid) != 4 or min(self.grid) < 8:
            raise UsageError("grid needs four counts, each >= 8")
        for name in ("level", "trials", "pairs", "group_trials", "k_max", "threads"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be positive")
        for name in ("eps", "poisson_eps"):
            if not 0 < getattr(self, name) < 0.5:
                raise UsageError(f"{name} must lie in (0, 1/2)")
        if not self.dt > 0:
            raise UsageError("dt must be positive")

    @classmethod
    def from_mapping(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)


@dataclass
class Record:
    name: str
    anchor: str
    value: float
    tolerance: float
    passed: bool
    relation: str = "<="


def check(name: str, anchor: str, value, tolerance: float, relation: str = "<=") -> Record:
    v = float(value)
    ops: dict[str, Callable[[float, float], bool]] = {
        "<=": lambda a, b: a <= b, ">=": lambda a, b: a >= b, "==": lambda a, b: a == b,
        "<": lambda a, b: a < b, ">": lambda a, b: a > b}
    return Record(name, anchor, v, float(tolerance), bool(ops[relation](v, tolerance)), relation)


@dataclass
class Report:
    suite: str
    seed: int
    config: dict
    records: list[Record] = field(default_factory=list)
    timestamp: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def to_dict(self, with_timestamp: bool = True) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "suite": self.suite, "seed": self.seed, "config": self.config,
               "environment": environment_stamp(self.config.get("threads", 1)),
               "records": [asdict(r) for r in self.records], "passed": self.passed}
        if with_timestamp:
            out["timestamp"] = self.timestamp
        return out

    def to_json(self, with_timestamp: bool = True) -> str:
        return json.dumps(self.to_dict(with_timestamp), sort_keys=True, indent=2)


def environment_stamp(threads: int) -> dict:
    import scipy
    import sympy
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "sympy": sympy.__version__, "threads": threads}


# -- suites -----------------------------------------------------------------------------------------

def suite_hirzebruch(cfg: ExperimentConfig) -> list[Record]:
    from .hirzebruch import classify, verify_class_identities
    recs = []
    for k in range(1, cfg.k_max + 1):
        c = classify(k)
        l = c.l
        expected = {"L": 3 * l + 2, "E": 3 * l + 1} if k % 2 else {"CP1xpt": 1, "ptxCP1": 3 * l}
        dev = max(abs(c.areas[n] - v) for n, v in expected.items())
        recs.append(check(f"areas k={k}", "hirzebruch-areas", dev, 0, "=="))
        rep = verify_class_identities(k)
        bad = sum(a != b for a, b in rep.checks.values())
        recs.append(check(f"class identities k={k}", "hirzebruch-intersections", bad, 0, "=="))
    return recs


def suite_group(cfg: ExperimentConfig) -> list[Record]:
    from . import group_qm as gq
    recs = []
    mu = gq.brooks_qm(gq.word("ab"))
    D = mu.defect_bound
    sampler = gq.WordSampler(rank=2, max_len=20, seed=cfg.seed)
    maps = [gq.identity_map(), gq.conjugation_map(gq.word("abA")),
            gq.substitution_map({0: gq.word("ab"), 1: gq.word("b")}, "a->ab"),
            gq.collapse_map(1), gq.right_multiplication_map(gq.word("ab"))]
    for phi in maps:
        pairs = sampler.pairs(cfg.group_trials)
        d_phi = gq.map_defect_bound(phi, mu, pairs)
        pb = gq.pullback(phi, mu, d_phi)
        worst = max(gq.pair_defect(pb, a, b) for a, b in pairs)
        recs.append(check(f"pullback defect {phi.name}", "pullback-defect", worst - pb.defect_bound, 0.0))
    hmu = gq.homogenized_brooks_qm(gq.word("ab"))
    cauchy = -math.inf
    for _ in range(cfg.group_trials // 10):
        g = sampler()
        for N in (1, 2, 4, 8):
            val = abs(mu(g ** N) / N - mu(g ** (2 * N)) / (2 * N))
            cauchy = max(cauchy, val - D / N)
    recs.append(check("homogenization cauchy bound", "homogenization", cauchy, 0.0))
    kernel = [gq.commutator(gq.word("a"), gq.word("b")), gq.word("aB"), gq.word("bA"),
              gq.commutator(gq.word("ab"), gq.word("b"))]
    tests = [gq.word("a") ** n for n in range(-5, 6)]
    try:
        gq.pushforward(gq.total_exponent_map(), gq.power_section, hmu, kernel, tests, gq.mixed_section)
        rejected = 0
    except gq.WellDefinednessError:
        rejected = 1
    recs.append(check("pushforward rejects counting fixture", "pushforward", rejected, 1, "=="))
    try:
        push, _ = gq.pushforward(gq.total_exponent_map(), gq.power_section, gq.exponent_sum_qm(None), kernel,
                                 tests, gq.mixed_section)
        err = max(abs(push(t) - t.exponent_sum()) for t in tests)
    except gq.WellDefinednessError:
        err = math.inf
    recs.append(check("pushforward accepts homomorphism", "pushforward", err, 0.0, "=="))
    return recs


def suite_axioms(cfg: ExperimentConfig) -> list[Record]:
    from .reeb_median import axiom_suite, zeta_med
    from .sphere_field import ScalarField, make_mesh
    mesh = make_mesh(cfg.level)
    rep = axiom_suite(zeta_med, mesh, cfg.trials, cfg.seed, ham_fields=5)
    return _axiom_records(rep, "median") + [
        check("median of z", "median-symmetry", abs(zeta_med(ScalarField.from_expression(mesh, "z"))), 1e-2)]


def _axiom_records(rep, label: str) -> list[Record]:
    return [check(f"{label} normalization", "quasi-state-axioms", rep.normalization_error, 0.0, "=="),
            check(f"{label} monotonicity violations", "quasi-state-axioms", rep.monotonicity_violations, 0, "=="),
            check(f"{label} quasi-linearity residual", "quasi-state-axioms", rep.aarnes_residual, 1e-2),
            check(f"{label} lipschitz violations", "quasi-state-axioms", rep.lipschitz_violations, 0, "=="),
            check(f"{label} vanishing on caps", "quasi-state-axioms", rep.vanishing_max, 0.0, "=="),
            check(f"{label} ham invariance", "quasi-state-axioms", rep.ham_invariance, 1e-2)]


def bracket_study(levels: tuple[int, ...], n_pairs: int, seed: int) -> dict:
    from .expr import random_polynomial
    from .reeb_median import _random_profile, bracket_inequality_report
    from .sphere_field import ScalarField, make_mesh
    rng = np.random.default_rng(seed)
    exprs = [(random_polynomial(rng), random_polynomial(rng)) for _ in range(n_pairs)]
    out = {}
    for lvl in levels:
        mesh = make_mesh(lvl)
        pairs = [(ScalarField(mesh, a(mesh.vertices)), ScalarField(mesh, b(mesh.vertices))) for a, b in exprs]
        out[lvl] = bracket_inequality_report(pairs).max_ratio
    mesh = make_mesh(levels[0])
    crng = np.random.default_rng(seed + 1)
    commuting = []
    for _ in range(10):
        F = random_polynomial(crng)(mesh.vertices)
        g, h = _random_profile(crng), _random_profile(crng)
        # rescale so each function has sup norm 1
        G, H = g(F), h(F)
        commuting.append((ScalarField(mesh, G / np.max(np.abs(G))), ScalarField(mesh, H / np.max(np.abs(H)))))
    out["commuting_pi"] = max(r.pi for r in bracket_inequality_report(commuting).rows)
    return out


def suite_bracket(cfg: ExperimentConfig) -> list[Record]:
    lo, hi = cfg.level, cfg.level + 1
    st = bracket_study((lo, hi), cfg.trials, cfg.seed)
    change = abs(st[hi] - st[lo]) / st[lo] if st[lo] > 0 else math.inf
    return [check("commuting pairs defect", "bracket-inequality", st["commuting_pi"], 1e-2),
            check(f"max ratio level {lo}", "bracket-inequality", st[lo], math.inf, "<"),
            check(f"max ratio level {hi}", "bracket-inequality", st[hi], math.inf, "<"),
            check("max ratio relative change", "bracket-inequality", change, 0.25)]


def _grid(cfg: ExperimentConfig):
    from .disk_bundle import BundleGrid
    return BundleGrid(*cfg.grid)


def poisson_study(cfg: ExperimentConfig) -> dict:
    from .disk_bundle import bracket_identity_residual, random_bundle_points, theta_profile
    from .expr import random_polynomial
    rng = np.random.default_rng(cfg.seed)
    theta = theta_profile(cfg.poisson_eps)
    pairs = [(random_polynomial(rng), random_polynomial(rng)) for _ in range(cfg.pairs)]
    pts = random_bundle_points(rng, 200, r_max=0.9)
    grid = _grid(cfg)
    coarse = max(bracket_identity_residual(H, K, theta, pts, grid).max_rel for H, K in pairs)
    fine = max(bracket_identity_residual(H, K, theta, pts, grid.refined()).max_rel for H, K in pairs)
    return {"coarse": coarse, "fine": fine, "ratio": fine / coarse if coarse > 0 else math.inf}


def suite_poisson(cfg: ExperimentConfig) -> list[Record]:
    from .disk_bundle import BundlePoints, sgrad_pushforward_residual, theta_profile
    st = poisson_study(cfg)
    theta = theta_profile(cfg.eps)
    base = np.array([[0.6, 0.0, 0.8], [0.0, -0.6, 0.8], [0.36, 0.48, -0.8]])
    zero = BundlePoints.from_base(base, 0.0, 0.3)
    # fourth-order differences need h = 1/128 in the fiber to reach 1e-6 absolute
    sg = sgrad_pushforward_residual("z", theta, zero, _grid(cfg).refined(4))
    return [check("bracket identity residual", "bracket-identity", st["coarse"], 2e-2),
            check("bracket identity refinement ratio", "bracket-identity", st["ratio"], 0.6),
            check("pushforward of sgrad z on the zero section", "sgrad-pushforward", sg.max_abs, 1e-6)]


FIBER_FIELDS = ("1", "1 + z**2", "2 + x*y", "1 + x - y*z", "3 + x**2*z")


def suite_fiber(cfg: ExperimentConfig) -> list[Record]:
    from .disk_bundle import fiber_integral_residual, one_minus_r2, radial_factor_literal, theta_profile
    theta = theta_profile(cfg.eps)
    grid = _grid(cfg)
    reps = [fiber_integral_residual(H, theta, grid) for H in FIBER_FIELDS]
    return [check("radial factor of 1-r^2", "fiber-integral", abs(radial_factor_literal(one_minus_r2()) - 1 / 3),
                  1e-6),
            check("fiber identity residual, literal radial factor", "fiber-integral",
                  max(r.residual_literal for r in reps), 1e-2),
            check("fiber identity residual, fiber-integrated radial factor", "fiber-integral",
                  max(r.residual for r in reps), 1e-2)]


def suite_commute(cfg: ExperimentConfig) -> list[Record]:
    from .disk_bundle import failure_term, flow_commutation_residual, random_bundle_points, theta_profile
    from .expr import random_hamiltonian
    from .sphere_field import SampledPath, make_mesh
    rng = np.random.default_rng(cfg.seed)
    mesh = make_mesh(cfg.level)
    theta = theta_profile(cfg.eps)
    seeds = random_bundle_points(rng, 20, r_max=0.3, r_min=0.3)
    rz = flow_commutation_residual(SampledPath.from_expression(mesh, "z", m=10), theta, seeds, 1e-3)
    F = SampledPath.from_expression(mesh, random_hamiltonian(rng), m=10)
    G = SampledPath.from_expression(mesh, random_hamiltonian(rng), m=10)
    seeds = random_bundle_points(rng, 20, r_max=1.0 - cfg.eps)
    r1 = flow_commutation_residual(F, theta, seeds, cfg.dt)
    r2 = flow_commutation_residual(F, theta, seeds, cfg.dt / 2)
    fail = failure_term(F, G, theta, random_bundle_points(rng, 20, r_max=1.0 - cfg.eps), cfg.dt)
    return [check("rotation fixture projection discrepancy", "flow-commutation", rz.max_distance, 1e-4),
            check("random path projection discrepancy", "flow-commutation", r1.max_distance, 5e-3),
            check("random path refinement decrease", "flow-commutation", r2.max_distance - r1.max_distance, 0.0, "<"),
            check("fiber radius drift", "flow-commutation", max(rz.max_r_drift, r1.max_r_drift), 1e-6),
            check("composition failure term", "composition-failure", fail, 1e-3)]


def suite_reduce(cfg: ExperimentConfig) -> list[Record]:
    from . import reduction as rd
    from .disk_bundle import BundlePoints, one_minus_r2, theta_profile
    from .expr import random_polynomial
    from .reeb_median import axiom_suite, zeta_med
    from .sphere_field import Cap, ScalarField, displacing_rotation, make_mesh
    rng = np.random.default_rng(cfg.seed)
    mesh = make_mesh(cfg.level)
    profiles = [theta_profile(cfg.eps), theta_profile(0.3), one_minus_r2()]
    worst = 0.0
    for _ in range(5):
        x = rng.normal(size=(1, 3))
        x /= np.linalg.norm(x)
        p = BundlePoints.from_base(x, float(rng.uniform(0, 0.85)), float(rng.uniform(0, 2 * math.pi)))
        H = ScalarField(mesh, random_polynomial(rng)(mesh.vertices))
        zeta = rd.point_oracle(p)
        target = H.evaluate(x)[0]
        worst = max(worst, max(abs(rd.reduce_quasi_state(zeta, th, H) - target) for th in profiles))
    recs = [check("point oracle reduction", "quasi-state-reduction", worst, 1e-10)]
    reduced = rd.reduced_quasi_state(rd.median_slice_oracle(mesh), theta_profile(cfg.eps))
    recs += _axiom_records(axiom_suite(reduced, mesh, cfg.trials, cfg.seed + 1, ham_fields=5), "reduced")
    cap = Cap((0.0, 0.0, 1.0), 0.2)
    mask = cap.vertex_mask(mesh)
    Hc = ScalarField(mesh, np.where(mask, np.cos(0.5 * math.pi * cap.angle(mesh.vertices) / cap.radius) ** 2, 0.0))
    for lam in ("1", "2*t", "sin(2*pi*t)"):
        rep = rd.scale_identity_check(rd.calabi_qm(mask), lam, Hc)
        recs.append(check(f"scale identity lambda={lam}", "scale-lemma", rep.residual, 1e-6))
    H = ScalarField(mesh, random_polynomial(rng)(mesh.vertices))
    recs.append(check("quasi-state from median quasi-morphism", "qs-from-qm",
                      abs(rd.qs_from_qm(rd.median_qm(), H) - zeta_med(H)), 1e-12))
    G = displacing_rotation(mesh, cap.center, cap.area)
    _, cert = rd.lift_displacer(G, cap, 0.2, 0.5)
    recs.append(check("lifted displacer separation", "displacement-lift", cert.min_separation, 0.0, ">"))
    return recs


SUITE_FUNCS: dict[str, Callable[[ExperimentConfig], list[Record]]] = {
    "hirzebruch": suite_hirzebruch, "group": suite_group, "axioms": suite_axioms, "bracket": suite_bracket,
    "poisson": suite_poisson, "fiber": suite_fiber, "commute": suite_commute, "reduce": suite_reduce}


def run(cfg: ExperimentConfig) -> Report:
    names = SUITES if cfg.suite == "all" else (cfg.suite,)
    cfg_dict = asdict(cfg)
    cfg_dict.pop("out")
    cfg_dict["grid"] = list(cfg.grid)
    report = Report(cfg.suite, cfg.seed, cfg_dict)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    elapsed = {}
    for name in names:
        t0 = time.perf_counter()
        sub = replace(cfg, suite=name)
        for rec in SUITE_FUNCS[name](sub):
            rec.name = f"{name}: {rec.name}" if cfg.suite == "all" else rec.name
            report.records.append(rec)
        elapsed[name] = round(time.perf_counter() - t0, 3)
    report.timestamp = {"started": started, "elapsed_s": elapsed}
    return report


# -- inspection subcommands ----------------------------------------------------------------------

def cmd_hirzebruch(args) -> dict:
    from .hirzebruch import classify, verify_class_identities
    c = classify(args.k)
    out = c.to_dict()
    out["identities"] = {n: list(v) for n, v in verify_class_identities(args.k).checks.items()}
    return out


def cmd_group(args) -> dict:
    from . import group_qm as gq
    pat = gq.word(args.pattern)
    mu = gq.brooks_qm(pat)
    seed = args.seed if args.seed is not None else (_seed_default() or 0)
    sampler = gq.WordSampler(rank=max(2, max(g for g, _ in pat.letters) + 1), max_len=args.max_len, seed=seed)
    lb = gq.defect_lower_bound(mu, sampler, args.trials)
    val, rad = gq.homogenize(mu, pat, args.power)
    return {"pattern": str(pat), "defect_bound": mu.defect_bound, "defect_lower_bound": lb,
            "homogenized": {"power": args.power, "value": val, "error_radius": rad}, "seed": seed}


def cmd_sphere(args) -> dict:
    from .reeb_median import zeta_med
    from .sphere_field import SampledPath, ScalarField, hamiltonian_flow, integrate, make_mesh
    mesh = make_mesh(args.level)
    H = ScalarField.from_expression(mesh, args.field)
    if args.off:
        mesh.write_off(args.off)
    if args.csv:
        Path(args.csv).write_text(H.to_csv())
    flow = hamiltonian_flow(SampledPath.from_expression(mesh, args.field, m=10), mesh.vertices, args.dt)
    drift = float(np.max(np.abs(H.source(flow.final) - H.values)))
    return {"level": args.level, "n_vertices": mesh.n_vertices, "euler_characteristic": mesh.euler_characteristic,
            "mesh_size": mesh.mesh_size, "field": args.field, "integral": integrate(H), "zeta_med": zeta_med(H),
            "energy_drift_time_one": drift, "dt": args.dt}


def cmd_median(args) -> dict:
    from .reeb_median import build_reeb, median, tau_med
    from .sphere_field import Cap, ScalarField, make_mesh
    mesh = make_mesh(args.level)
    H = ScalarField.from_expression(mesh, args.field)
    reeb = build_reeb(H)
    mp = median(reeb)
    out = {"field": args.field, "level": args.level, "median": {"level": mp.level, "tie": mp.tie,
                                                                 "branches": mp.branches},
           "reeb": reeb.to_dict()}
    if args.tau_cap_area is not None:
        cap = Cap((0.0, 0.0, 1.0), args.tau_cap_area)
        tr = tau_med(cap.vertex_mask(mesh), mesh)
        out["tau"] = {"cap_area": args.tau_cap_area, "upper_bound": tr.value, "argmin": tr.argmin}
    return out


def cmd_bundle(args) -> dict:
    grid = tuple(int(g) for g in args.grid.split(","))
    cfg = ExperimentConfig(suite="poisson", grid=grid, eps=args.eps, seed=args.seed)
    if args.check == "poisson":
        return {"check": "poisson", **poisson_study(replace(cfg, poisson_eps=args.eps))}
    if args.check == "fiber":
        recs = suite_fiber(cfg)
    elif args.check == "commute":
        recs = suite_commute(cfg)
    else:
        from .disk_bundle import random_bundle_points, sgrad_pushforward_residual, theta_profile
        grid = _grid(cfg)
        # keep the difference stencil clear of the transition band of theta
        r_max = min(0.9, 1.0 - args.eps - 2.0 * float(grid.steps[2]))
        if r_max <= 0:
            raise UsageError("grid too coarse for this eps")
        pts = random_bundle_points(np.random.default_rng(args.seed), 200, r_max=r_max)
        rep = sgrad_pushforward_residual("x", theta_profile(args.eps), pts, grid)
        return {"check": "sgrad", "r_max": r_max, "max_abs": rep.max_abs, "max_rel": rep.max_rel}
    return {"check": args.check, "records": [asdict(r) for r in recs]}


TOOLS = {"hirzebruch": cmd_hirzebruch, "group-qm": cmd_group, "sphere": cmd_sphere, "median": cmd_median,
         "bundle": cmd_bundle}


# -- argument handling --------------------------------------------------------------------------

def _seed_default() -> int | None:
    env = os.environ.get("QSLAB_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"QSLAB_SEED must be an integer, got {env!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qslab", description="Verification suites and inspection tools.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUITES + ("all",):
        s = sub.add_parser(name, help=f"run the {name} suite")
        s.add_argument("--config", help="JSON file with ExperimentConfig fields")
        s.add_argument("--out", help="write the JSON report here")
        s.add_argument("--seed", type=int)
        s.add_argument("--level", type=int)
        s.add_argument("--grid", help="u,v,r,phi counts")
        s.add_argument("--eps", type=float)
        s.add_argument("--dt", type=float)
        s.add_argument("--trials", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--quiet", action="store_true", help="print only the summary line")
    h = sub.add_parser("hirzebruch-classify", help="same as: hirzebruch --k N")
    h.add_argument("--k", type=int, required=True)
    h.add_argument("--json", action="store_true", help="print JSON instead of text")
    g = sub.add_parser("group-qm", help="counting quasi-morphism defect and homogenization")
    g.add_argument("--pattern", default="ab")
    g.add_argument("--trials", type=int, default=1000)
    g.add_argument("--max-len", type=int, default=20)
    g.add_argument("--seed", type=int)
    g.add_argument("--power", type=int, default=50)
    s = sub.add_parser("sphere", help="mesh statistics, integral, median and flow drift of a field")
    s.add_argument("--level", type=int, default=3)
    s.add_argument("--dt", type=float, default=1e-2)
    s.add_argument("--field", default="z")
    s.add_argument("--off", help="export the mesh in OFF format")
    s.add_argument("--csv", help="export the field as CSV")
    m = sub.add_parser("median", help="Reeb tree, median and cap quasi-measure bound")
    m.add_argument("--field", default="z")
    m.add_argument("--level", type=int, default=4)
    m.add_argument("--tau-cap-area", type=float)
    m.add_argument("--report", help="write the JSON here")
    b = sub.add_parser("bundle", help="disk bundle checks")
    b.add_argument("--eps", type=float, default=0.1)
    b.add_argument("--grid", default="64,64,32,32")
    b.add_argument("--check", choices=("poisson", "fiber", "commute", "sgrad"), default="sgrad")
    b.add_argument("--seed", type=int, default=0)
    return p


def config_from_args(args) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    data["suite"] = args.command
    env_seed = _seed_default()
    if "seed" not in data and env_seed is not None:
        data["seed"] = env_seed
    for key in ("seed", "level", "eps", "dt", "trials", "threads", "out"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.grid:
        data["grid"] = [int(x) for x in args.grid.split(",")]
    return ExperimentConfig.from_mapping(data)


def _check_writable(path: str | None) -> None:
    if path is None:
        return
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise UsageError(f"cannot write report to {path}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # `hirzebruch --k N` is the inspection tool; without --k it is the suite
    if argv[:1] == ["hirzebruch"] and any(a == "--k" or a.startswith("--k=") for a in argv):
        argv[0] = "hirzebruch-classify"
    args = parser.parse_args(argv)
    try:
        if args.command in SUITES + ("all",):
            cfg = config_from_args(args)
            _check_writable(cfg.out)
            report = run(cfg)
            text = report.to_json()
            if cfg.out:
                Path(cfg.out).write_text(text + "\n")
            if not args.quiet:
                for r in report.records:
                    print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.value:.6g} {r.relation} {r.tolerance:g}")
            print(f"{sum(r.passed for r in report.records)}/{len(report.records)} checks passed")
            return 0 if report.passed else 1
        command = "hirzebruch" if args.command == "hirzebruch-classify" else args.command
        target = getattr(args, "report", None)
        _check_writable(target)
        try:
            out = TOOLS[command](args)
        except ValueError as exc:
            # malformed fields, words, grids or parameters given on the command line
            raise UsageError(str(exc)) from exc
        text = json.dumps(out, sort_keys=True, indent=2, default=float)
        if command == "hirzebruch" and not args.json:
            text = "\n".join([f"k={out['k']} l={out['l']} type={out['type']}"]
                             + [f"  {n}: class {out['classes'][n]} area {a}" for n, a in out["areas"].items()])
        if target:
            Path(target).write_text(text + "\n")
        print(text)
        return 0
    except UsageError as exc:
        print(f"qslab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
