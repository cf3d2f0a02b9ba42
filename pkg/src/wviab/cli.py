"""Scenario-driven command line front end.

Subcommands: w1, simulate, probe, construct-lipschitz, construct-usc,
gronwall, counterexample, verify.  Every run writes CSV artifacts with fixed
headers (documented in docs/formats.md) and, unless --no-plot is given,
matplotlib figures next to them.  Exit codes: 0 success, 1 verification
breach, 2 configuration error, 3 infeasibility/divergence report.

All randomness flows from the scenario's `seed` key; per-purpose seeds are
seed + CRC32(purpose).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import oracle, plots
from .constraints import default_h_grid, tube_dist
from .dynamics import (DivergenceError, Schedule, StepPolicy, derived_seed,
                       estimate_monitor, inclusion_solve)
from .fields import Affine
from .measures import (DiscreteMeasure, first_moment, load_csv, pushforward,
                       to_csv)
from .scenario import Scenario, ScenarioError, canonical_text, parse_scenario
from .transport import w1_exact
from .viability import (ConstructionError, InfeasibilityError, ViabilityError,
                        constants_for, gronwall_track, lipschitz_construct,
                        pointwise_probe, superdiff_counterexample,
                        usc_construct)

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def _write(outdir: Path, name: str, text: str) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / name
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _g(x: float) -> str:
    return format(float(x), ".17g")


def _trajectory_csv(times, measures) -> str:
    d = measures[0].dim
    header = "t,node_index,w," + ",".join(f"x{i + 1}" for i in range(d))
    lines = [header]
    for k, (t, mu) in enumerate(zip(times, measures)):
        for w, p in zip(mu.weights, mu.points):
            lines.append(",".join([_g(t), str(k), _g(w)]
                                  + [_g(c) for c in p]))
    return "\n".join(lines) + "\n"


def _policy(sc: Scenario) -> StepPolicy:
    if "budget" in sc.params:
        return StepPolicy(m_budget=sc.params["budget"])
    return StepPolicy()


# --- subcommand bodies -------------------------------------------------------

def cmd_w1(args) -> int:
    mu = load_csv(args.measure_a)
    nu = load_csv(args.measure_b)
    cost, plan = w1_exact(mu, nu)
    print(f"W1 = {cost:.12g}")
    if args.outdir is not None:
        _write(Path(args.outdir), "plan.csv", plan.to_csv())
    return EXIT_OK


def cmd_simulate(sc: Scenario, outdir: Path, do_plot: bool) -> int:
    k = sc.velocity_set.k
    schedule = Schedule.constant(np.full(k, 1.0 / k), 0.0, sc.horizon)
    traj = inclusion_solve(sc.velocity_set, schedule, sc.measure,
                           0.0, sc.horizon, _policy(sc))
    report = estimate_monitor(traj, sc.velocity_set, first_moment(sc.measure))
    _write(outdir, "trajectory.csv", _trajectory_csv(traj.times, traj.measures))
    _write(outdir, "diagnostics.csv", report.to_csv())
    if do_plot:
        plots.save_trajectory(outdir / "trajectory.png", traj)
    print(f"simulated {len(traj.times)} nodes; "
          f"monitor {'clean' if report.ok else 'VIOLATED'}")
    return EXIT_OK if report.ok else EXIT_INFEASIBLE


def cmd_probe(sc: Scenario, outdir: Path, do_plot: bool) -> int:
    tau = sc.params.get("probe_tau", 0.0)
    res = pointwise_probe(sc.velocity_set, sc.tube, tau, sc.measure,
                          grid=default_h_grid(sc.horizon, tau))
    _write(outdir, "rates.csv", res.probe.to_csv())
    if do_plot:
        plots.save_rates(outdir / "rates.png", res.probe.h_grid,
                         res.probe.rates)
    lam = " ".join(_g(x) for x in res.lam)
    print(f"lambda* = [{lam}]  rate* = {res.rate:.12g}  at h = {res.h:.12g}")
    return EXIT_OK


def cmd_construct_lipschitz(sc: Scenario, outdir: Path, do_plot: bool) -> int:
    n = sc.params.get("mesh_n", 16)
    try:
        res = lipschitz_construct(sc.velocity_set, sc.tube, 0.0, sc.measure,
                                  n, policy=_policy(sc))
    except InfeasibilityError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        _write(outdir, "report.txt", f"infeasible\ntime = {exc.time!r}\n"
                                     f"rate = {exc.rate!r}\n")
        return EXIT_INFEASIBLE
    _write(outdir, "defects.csv", res.defects_csv())
    _write(outdir, "trajectory.csv",
           _trajectory_csv(res.trajectory.times, res.trajectory.measures))
    if do_plot:
        plots.save_defects(outdir / "defects.png",
                           [r.t for r in res.defects],
                           [r.defect for r in res.defects])
        plots.save_trajectory(outdir / "trajectory.png", res.trajectory)
    print(f"constructed mesh n={n}; max defect = {res.max_defect:.12g}")
    return EXIT_OK


def cmd_construct_usc(sc: Scenario, outdir: Path, do_plot: bool) -> int:
    consts = constants_for(first_moment(sc.measure), sc.velocity_set.M,
                           sc.tube.modulus, sc.horizon)
    eps = sc.params.get("epsilon", 0.5 * consts.eps0)
    bad_set = sc.params.get("bad_set")
    try:
        triple = usc_construct(sc.velocity_set, sc.tube, sc.measure, eps,
                               bad_set=bad_set, policy=_policy(sc))
    except ConstructionError as exc:
        print(f"construction failed: {exc}", file=sys.stderr)
        _write(outdir, "report.txt",
               f"blocked\ntime = {exc.blocking_time!r}\n")
        return EXIT_INFEASIBLE
    _write(outdir, "intervals.csv", triple.intervals_csv())
    _write(outdir, "curve.csv",
           _trajectory_csv(triple.curve.times, triple.curve.measures))
    defect_rows = [(rec.b, tube_dist(sc.tube, rec.b,
                                     triple.curve.node_at(rec.b))[0])
                   for rec in triple.intervals]
    _write(outdir, "defects.csv",
           "t_k,defect\n" + "".join(f"{_g(t)},{_g(v)}\n"
                                    for t, v in defect_rows))
    if do_plot:
        plots.save_defects(outdir / "defects.png",
                           [t for t, _ in defect_rows],
                           [v for _, v in defect_rows],
                           title=f"endpoint defects (eps={eps:g})")
    n_good = sum(1 for r in triple.intervals if r.kind == "good")
    print(f"constructed triple: {len(triple.intervals)} intervals "
          f"({n_good} good), eps = {eps:.6g}")
    return EXIT_OK


def cmd_gronwall(sc: Scenario, outdir: Path, do_plot: bool) -> int:
    grid = np.linspace(0.0, sc.horizon, sc.params.get("grid_points", 9))
    report = gronwall_track(sc.velocity_set, sc.tube, sc.measure, 0.0, grid,
                            samples=sc.params.get("samples", 8),
                            seed=derived_seed(sc.seed, "gronwall"),
                            slack=sc.params.get("slack"),
                            policy=_policy(sc),
                            pieces=sc.params.get("pieces", 4))
    _write(outdir, "gronwall.csv", report.to_csv())
    if do_plot:
        plots.save_gronwall(outdir / "gronwall.png", report.times, report.g,
                            report.bound, report.slack)
    verdict = "viable-consistent" if report.viable_verdict else "NEGATIVE"
    print(f"gronwall verdict: {verdict} "
          f"(max g = {report.g.max():.6g}, slack = {report.slack:.6g})")
    return EXIT_OK if report.viable_verdict else EXIT_INFEASIBLE


def cmd_counterexample(sc: Scenario, outdir: Path, do_plot: bool) -> int:
    xi = sc.params.get("xi", 1.0)
    zeta = sc.params.get("zeta", 0.0)
    s0 = sc.params.get("s0", 0.0)
    hs = 0.1 * 0.5 ** np.arange(9)
    mu = sc.measure
    rows = []
    for h in hs:
        a = pushforward(mu, lambda pts: pts + h * xi)
        b = pushforward(mu, lambda pts: pts + h * zeta)
        lhs = w1_exact(a, b)[0] - 0.0
        rhs = h * (xi - zeta) * s0 + 2.0 * h * abs(xi - zeta)
        rows.append((h, lhs, rhs))
    ok, rate = superdiff_counterexample(xi, zeta, s0, h_grid=hs)
    expected = (xi - zeta) * (np.sign(xi - zeta) - s0)
    _write(outdir, "counterexample.csv",
           "h,lhs,rhs\n" + "".join(f"{_g(h)},{_g(l)},{_g(r)}\n"
                                   for h, l, r in rows))
    if do_plot:
        plots.save_counterexample(outdir / "counterexample.png", hs,
                                  [l for _, l, _ in rows],
                                  [r for _, _, r in rows])
    print(f"upper estimate holds: {ok}; measured rate = {rate:.9g} "
          f"(closed form {expected:.9g})")
    return EXIT_OK


def _verify_battery(sc: Scenario):
    """Oracle cross-check suite; returns (rows, n_failures)."""
    rng = np.random.default_rng(derived_seed(sc.seed, "verify"))
    rows = []

    def record(name, instances, worst, limit):
        rows.append((name, instances, worst, limit, worst <= limit))

    worst = 0.0
    for _ in range(60):
        n, m = rng.integers(1, 24, size=2)
        mu = DiscreteMeasure(rng.normal(size=(n, 1)), rng.dirichlet(np.ones(n)))
        nu = DiscreteMeasure(rng.normal(size=(m, 1)), rng.dirichlet(np.ones(m)))
        cost, plan = w1_exact(mu, nu)
        worst = max(worst, abs(cost - oracle.w1_1d_quantile(mu, nu)))
        worst = max(worst, oracle.certify_plan(mu, nu, plan).max_violation)
    record("w1_vs_quantile_and_certificate", 60, worst, 1e-8)

    worst = 0.0
    for _ in range(30):
        n = int(rng.integers(1, 6))
        d = int(rng.integers(1, 4))
        mu = DiscreteMeasure(rng.normal(size=(n, d)), np.full(n, 1.0 / n))
        nu = DiscreteMeasure(rng.normal(size=(n, d)), np.full(n, 1.0 / n))
        worst = max(worst, abs(w1_exact(mu, nu)[0] - oracle.w1_permutation(mu, nu)))
    record("w1_vs_permutation", 30, worst, 1e-9)

    worst = 0.0
    for _ in range(60):
        n = int(rng.integers(2, 16))
        d = int(rng.integers(1, 3))
        mu = DiscreteMeasure(rng.normal(size=(n, d)), rng.dirichlet(np.ones(n)))
        nu = DiscreteMeasure(rng.normal(size=(n, d)), rng.dirichlet(np.ones(n)))
        A = rng.normal(size=(d, d)) * 0.5
        phi = Affine(A, rng.normal(size=d))
        lhs = w1_exact(pushforward(mu, phi), pushforward(nu, phi))[0]
        worst = max(worst, lhs - phi.lip_bound * w1_exact(mu, nu)[0])
    record("pushforward_lipschitz_contraction", 60, worst, 1e-9)

    worst = 0.0
    for _ in range(30):
        n = int(rng.integers(2, 12))
        mu = DiscreteMeasure(rng.normal(size=(n, 2)), rng.dirichlet(np.ones(n)))
        nu = DiscreteMeasure(rng.normal(size=(n, 2)), rng.dirichlet(np.ones(n)))
        sig = DiscreteMeasure(rng.normal(size=(n, 2)), rng.dirichlet(np.ones(n)))
        ab = w1_exact(mu, nu)[0]
        worst = max(worst, abs(ab - w1_exact(nu, mu)[0]))
        worst = max(worst, w1_exact(mu, sig)[0] - ab - w1_exact(nu, sig)[0])
    record("symmetry_and_triangle", 30, worst, 1e-9)

    # fault injection: a deliberately swapped assignment must be flagged
    mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    nu = DiscreteMeasure([[0.1], [1.1]], [0.5, 0.5])
    from .transport import TransportPlan
    bad = TransportPlan(mu, nu, np.array([0, 1]), np.array([1, 0]),
                        np.array([0.5, 0.5]), 1.0)
    viol = oracle.certify_plan(mu, nu, bad).max_violation
    rows.append(("fault_injection_detected", 1, viol, 1e-3, viol > 1e-3))

    failures = sum(1 for r in rows if not r[4])
    return rows, failures


def cmd_verify(sc: Scenario, outdir: Path, do_plot: bool) -> int:
    rows, failures = _verify_battery(sc)
    lines = ["check,instances,worst,limit,status"]
    for name, inst, worst, limit, ok in rows:
        lines.append(f"{name},{inst},{_g(worst)},{_g(limit)},"
                     f"{'pass' if ok else 'FAIL'}")
        print(f"{'PASS' if ok else 'FAIL'}  {name}  worst={worst:.3g}  "
              f"limit={limit:g}")
    _write(outdir, "verify.csv", "\n".join(lines) + "\n")
    return EXIT_OK if failures == 0 else EXIT_VERIFY_FAIL


# --- dispatcher ---------------------------------------------------------------

SCENARIO_COMMANDS = {
    "simulate": cmd_simulate,
    "probe": cmd_probe,
    "construct-lipschitz": cmd_construct_lipschitz,
    "construct-usc": cmd_construct_usc,
    "gronwall": cmd_gronwall,
    "counterexample": cmd_counterexample,
    "verify": cmd_verify,
}


def dispatch(subcommand: str, sc: Scenario, outdir, do_plot: bool = True) -> int:
    """Run a scenario subcommand; returns the process exit code."""
    body = SCENARIO_COMMANDS[subcommand]
    try:
        return body(sc, Path(outdir), do_plot)
    except (ScenarioError, ViabilityError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, InfeasibilityError, ConstructionError) as exc:
        print(f"report: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wviab",
        description="Viability analysis for continuity inclusions over the "
                    "1-Wasserstein space")
    sub = parser.add_subparsers(dest="command", required=True)

    w1p = sub.add_parser("w1", help="exact transport cost between two "
                                    "measure CSV files")
    w1p.add_argument("measure_a")
    w1p.add_argument("measure_b")
    w1p.add_argument("-o", "--outdir", default=None,
                     help="also write the optimal plan CSV here")

    for name, help_text in [
            ("simulate", "integrate the equal-weights selection and monitor it"),
            ("probe", "pointwise tangency probe at the scenario measure"),
            ("construct-lipschitz", "mesh constructor for the Lipschitz regime"),
            ("construct-usc", "greedy approximate-solution triple builder"),
            ("gronwall", "track reachable-set distance against the envelope"),
            ("counterexample", "scalar non-superdifferentiability check"),
            ("verify", "run the oracle cross-check suite")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("scenario", help="path to a scenario file")
        p.add_argument("-o", "--outdir", default="wviab-out")
        p.add_argument("--no-plot", action="store_true",
                       help="skip figure rendering")

    canon = sub.add_parser("canonical", help="print the canonical form of a "
                                             "scenario file")
    canon.add_argument("scenario")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "w1":
        try:
            return cmd_w1(args)
        except (OSError, ValueError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if args.command == "canonical":
        try:
            sc = parse_scenario(args.scenario)
        except ScenarioError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        sys.stdout.write(canonical_text(sc.raw))
        return EXIT_OK
    try:
        sc = parse_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(args.command, sc, args.outdir, do_plot=not args.no_plot)


if __name__ == "__main__":
    sys.exit(main())
