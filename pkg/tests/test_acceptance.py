"""Acceptance criteria 1-9, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the terminal
summary) or ``python tests/test_acceptance.py`` (lines printed as they finish).
"""
import math
import time

from qslab import cli
from qslab.disk_bundle import fiber_integral_residual, one_minus_r2, radial_factor_literal, theta_profile
from qslab.hirzebruch import classify
from qslab.reeb_median import axiom_suite, zeta_med
from qslab.sphere_field import make_mesh

RESULTS: dict[int, str] = {}


def record(n: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {n} (primary) {title}: {detail}"
    RESULTS[n] = line
    print(line, flush=True)
    assert passed, line


def _records_ok(recs) -> tuple[bool, str]:
    bad = [f"{r.name}={r.value:.3g}" for r in recs if not r.passed]
    return not bad, "; ".join(f"{r.name}={r.value:.3g}" for r in recs) if not bad else "failed: " + "; ".join(bad)


def test_criterion_1_hirzebruch_areas():
    t0 = time.perf_counter()
    bad = []
    for k in range(1, 11):
        l = k // 2
        want = {"L": 3 * l + 2, "E": 3 * l + 1} if k % 2 else {"CP1xpt": 1, "ptxCP1": 3 * l}
        got = classify(k).areas
        if got != want or not all(type(v) is int for v in got.values()):
            bad.append(k)
    elapsed = time.perf_counter() - t0
    record(1, "Hirzebruch areas", not bad and elapsed < 1.0,
           f"k=1..10 exact, mismatches {bad}, {elapsed:.3f} s (limit 1 s)")


def test_criterion_2_median_axioms():
    t0 = time.perf_counter()
    rep = axiom_suite(zeta_med, make_mesh(4), n_fields=100, seed=0)
    elapsed = time.perf_counter() - t0
    ok = (rep.normalization_error == 0.0 and rep.monotonicity_violations == 0 and rep.aarnes_residual <= 1e-2
          and rep.lipschitz_violations == 0 and rep.vanishing_max == 0.0 and elapsed < 60.0)
    record(2, "median quasi-state axioms", ok,
           f"normalization {rep.normalization_error:g}, monotonicity violations {rep.monotonicity_violations}, "
           f"quasi-linearity {rep.aarnes_residual:.3g} (<= 1e-2), Lipschitz violations {rep.lipschitz_violations}, "
           f"cap vanishing {rep.vanishing_max:g}, {elapsed:.1f} s (limit 60 s)")


def test_criterion_3_bracket_identity():
    t0 = time.perf_counter()
    cfg = cli.ExperimentConfig(suite="poisson")
    st = cli.poisson_study(cfg)
    elapsed = time.perf_counter() - t0
    ok = st["coarse"] <= 2e-2 and st["ratio"] <= 0.6 and elapsed < 300.0
    record(3, "bracket identity", ok,
           f"max relative residual {st['coarse']:.3g} at 64x64x32 (<= 2e-2), refined {st['fine']:.3g}, "
           f"ratio {st['ratio']:.3g} (<= 0.6), theta eps {cfg.poisson_eps:g}, {elapsed:.1f} s (limit 300 s)")


def test_criterion_4_fiber_integral():
    factor = radial_factor_literal(one_minus_r2())
    theta = theta_profile(0.1)
    reps = [fiber_integral_residual(H, theta, cli._grid(cli.ExperimentConfig())) for H in cli.FIBER_FIELDS]
    literal = max(r.residual_literal for r in reps)
    integrated = max(r.residual for r in reps)
    ok = abs(factor - 1 / 3) <= 1e-6 and literal <= 1e-2
    record(4, "fiber integral", ok,
           f"radial factor of 1-r^2 {factor:.12g} (1/3 within 1e-6), two-sided identity with the stated radial "
           f"factor {literal:.3g} (<= 1e-2); with the fiber-integrated factor theta(0) + int theta'(1-r^2)^2 the "
           f"residual is {integrated:.3g}")


def test_criterion_5_flow_commutation():
    recs = cli.suite_commute(cli.ExperimentConfig(suite="commute"))
    need = {"rotation fixture projection discrepancy", "random path projection discrepancy",
            "random path refinement decrease"}
    ok, detail = _records_ok([r for r in recs if r.name in need])
    record(5, "flow commutation", ok, detail)


def test_criterion_6_group_lemmas():
    recs = cli.suite_group(cli.ExperimentConfig(suite="group", group_trials=10_000))
    ok, detail = _records_ok(recs)
    record(6, "group lemmas", ok, detail)


def test_criterion_7_reduction():
    recs = cli.suite_reduce(cli.ExperimentConfig(suite="reduce"))
    wanted = [r for r in recs if r.anchor in ("quasi-state-reduction", "scale-lemma")
              or (r.anchor == "quasi-state-axioms" and "ham" not in r.name)]
    ok, detail = _records_ok(wanted)
    record(7, "reduction", ok, detail)


def test_criterion_8_bracket_inequality():
    t0 = time.perf_counter()
    st = cli.bracket_study((4, 5), 100, 0)
    change = abs(st[5] - st[4]) / st[4]
    ok = st["commuting_pi"] <= 1e-2 and math.isfinite(st[4]) and math.isfinite(st[5]) and change <= 0.25
    record(8, "bracket inequality report", ok,
           f"commuting pairs max defect {st['commuting_pi']:.3g} (<= 1e-2), max ratio level 4 {st[4]:.4g}, "
           f"level 5 {st[5]:.4g}, change {change:.2%} (<= 25%), {time.perf_counter() - t0:.0f} s")


def test_criterion_9_determinism():
    cfg = dict(seed=123, level=3, trials=10, pairs=2, group_trials=300, grid=(32, 32, 32, 32), threads=1)
    suites = ("hirzebruch", "group", "axioms", "poisson", "commute")
    runs = [[cli.run(cli.ExperimentConfig(suite=s, **cfg)).to_json(with_timestamp=False) for s in suites]
            for _ in range(2)]
    same = runs[0] == runs[1]
    record(9, "determinism", same, f"{len(suites)} suite reports identical apart from the timestamp: {same}")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_criterion"):
            try:
                fn()
            except AssertionError:
                pass
