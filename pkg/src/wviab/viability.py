"""Viability probes and the two constructive schemes.

The pointwise probe searches the velocity set's simplex of generator weights
for a direction tangent to the constraint graph; the integral probe searches
short two-piece schedules of velocities evaluated on a statistics ball, and
tests their time averages.  On top of these sit:

* a mesh constructor for the Lipschitz regime: project onto the tube, probe
  for a tangent weight vector, integrate the matched selection, repeat;
* a Gronwall tracker bounding the gap between sampled reachable measures and
  the tube by the envelope exp(int (1 + M + L));
* a greedy left-to-right builder of approximate-solution triples for the
  upper-semicontinuous regime, alternating flowed steps (with step halving
  against an endpoint-defect cap) and geodesic steps through a glued plan,
  with the full property-list validation;
* the scalar counterexample showing the transport distance is not
  superdifferentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .constraints import (ConstraintTube, RateProbe, default_h_grid,
                          rate_probe, tube_dist)
from .dynamics import (Schedule, StepPolicy, Trajectory, VelocitySet,
                       c_t_bound, flow_solve, inclusion_solve,
                       random_schedule, reachable_trajectories)
from .fields import TimeField, VectorField
from .measures import (DiscreteMeasure, MeasureStats, dirac, first_moment,
                       pushforward)
from .steps import StepFunction, merge_breakpoints, step_max
from .transport import glue_combine, interpolate, w1_exact


class ViabilityError(ValueError):
    pass


class InfeasibilityError(RuntimeError):
    """A probe rate stayed above the failure threshold."""

    def __init__(self, time: float, rate: float, threshold: float):
        super().__init__(f"probe infeasible at t={time}: rate {rate} "
                         f"exceeds threshold {threshold}")
        self.time = time
        self.rate = rate
        self.threshold = threshold


class ConstructionError(RuntimeError):
    """Step halving exhausted: the scenario blocks the greedy builder."""

    def __init__(self, blocking_time: float, detail: str = ""):
        msg = f"construction blocked at t={blocking_time}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.blocking_time = blocking_time


# --- constants of the USC apparatus ---------------------------------------

@dataclass(frozen=True)
class ViabilityConstants:
    c_t: float
    r_t: float
    eps0: float
    m_integral: float


def constants_for(m1_0: float, M: StepFunction, M_Q: StepFunction,
                  T: float | None = None) -> ViabilityConstants:
    """Moment bound, enlargement radius and admissible-epsilon threshold.

    eps0 is the largest value compatible with r_T * eps0 <= 1 and with the
    absolute-continuity requirement int_A M_Q <= M1(mu_0) for every A of
    measure at most eps0 (exact for step moduli via their max value).
    """
    if T is None:
        T = M.t1
    mi = M.integral(M.t0, T)
    c_t = c_t_bound(m1_0, mi)
    r_t = 4.0 * (1.0 + c_t) * (1.0 + mi) + T * math.exp(mi)
    eps0 = 1.0 / r_t
    mq_max = M_Q.max_value()
    if mq_max > 0:
        eps0 = min(eps0, m1_0 / mq_max)
    return ViabilityConstants(c_t, r_t, min(eps0, 1.0), mi)


# --- simplex search grids ---------------------------------------------------

def simplex_grid(k: int, resolution: int) -> list[tuple[float, ...]]:
    """All weight vectors with coordinates at multiples of 1/resolution."""
    if k == 1:
        return [(1.0,)]
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + (remaining,))
            return
        for c in range(remaining + 1):
            rec(prefix + (c,), remaining - c, slots - 1)

    rec((), resolution, k)
    return [tuple(c / resolution for c in comp) for comp in out]


def local_simplex(k: int, resolution: int, center, radius_l1: float
                  ) -> list[tuple[float, ...]]:
    c = np.asarray(center)
    cands = [lam for lam in simplex_grid(k, resolution)
             if np.sum(np.abs(np.asarray(lam) - c)) <= radius_l1 + 1e-12]
    return cands


# --- pointwise probe --------------------------------------------------------

@dataclass
class PointwiseProbeResult:
    lam: np.ndarray
    rate: float
    h: float
    probe: RateProbe
    direction: VectorField


def pointwise_probe(V: VelocitySet, Q: ConstraintTube, tau: float,
                    nu: DiscreteMeasure, grid=None,
                    coarse: int = 8, fine: int = 32) -> PointwiseProbeResult:
    """Minimize the tangency rate over generator weights at (tau, nu).

    Coarse simplex sweep followed by one local refinement pass around the
    incumbent; the incumbent is re-included, so refinement never worsens it.
    """
    if V.k == 0:
        raise ViabilityError("velocity set has no generators")
    if grid is None:
        grid = default_h_grid(Q.horizon[1], tau)
    stats = MeasureStats.of(nu)

    def evaluate(lam):
        xi = V.field(tau, stats, np.asarray(lam))
        rp = rate_probe(Q, tau, nu, xi, grid)
        # ties on the liminf surrogate are broken by the whole rate curve,
        # so among equally tangent candidates the best tracker wins
        return (rp.min_rate, float(np.mean(rp.rates))), rp, xi

    best = None
    for lam in simplex_grid(V.k, coarse):
        score, rp, xi = evaluate(lam)
        if best is None or score < best[0]:
            best = (score, lam, rp, xi)
    if V.k > 1:
        for lam in local_simplex(V.k, fine, best[1], 2.0 / coarse):
            score, rp, xi = evaluate(lam)
            if score < best[0]:
                best = (score, lam, rp, xi)
    _, lam, rp, xi = best
    return PointwiseProbeResult(np.asarray(lam), rp.min_rate, rp.argmin_h,
                                rp, xi)


# --- integral probe ---------------------------------------------------------

@dataclass
class IntegralProbeResult:
    lam_pieces: tuple[tuple[float, ...], tuple[float, ...]]
    shift: np.ndarray
    h: float
    rate: float
    selection: TimeField
    direction: VectorField
    stats_used: MeasureStats


def _schedule_selection(V: VelocitySet, tau: float, h: float,
                        lam1, lam2, stats: MeasureStats) -> TimeField:
    """Concrete two-piece velocity selection over [tau, tau + h]."""
    mid = tau + 0.5 * h
    cuts = merge_breakpoints([tau, mid, tau + h],
                             [b for b in V.time_breaks() if tau < b < tau + h])
    breaks, fields = [cuts[0]], []
    for lo, hi in zip(cuts, cuts[1:]):
        lam = lam1 if lo < mid - 1e-15 else lam2
        fields.append(V.field(lo, stats, np.asarray(lam)))
        breaks.append(hi)
    return TimeField(tuple(breaks), tuple(fields))


def integral_probe(V: VelocitySet, Q: ConstraintTube, tau: float,
                   nu: DiscreteMeasure, r: float, grid,
                   diag_resolution: int = 8, coarse: int = 4,
                   accept_below: float | None = None) -> IntegralProbeResult:
    """Search two-piece schedules on a statistics ball for tangent averages.

    The measure-ball enlargement is surrogated by shifting the barycenter the
    generators read by at most r (statistics are 1-Lipschitz in W1, so this
    under-approximates the true enlargement).  For each window h the tested
    direction is the exact time average of the scheduled selection; the
    reported rate is the minimum over the grid, a liminf surrogate.
    """
    if r <= 0:
        raise ViabilityError("enlargement radius must be positive")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ViabilityError("schedule grid must be nonempty")
    stats0 = MeasureStats.of(nu)
    d = nu.dim
    shifts = [np.zeros(d)]
    for i in range(d):
        e = np.zeros(d)
        e[i] = r
        shifts.extend([e, -e])

    diag = [(lam, lam) for lam in simplex_grid(V.k, diag_resolution)]
    off = []
    if V.k > 1:
        coarse_grid = simplex_grid(V.k, coarse)
        off = [(l1, l2) for l1, l2 in product(coarse_grid, coarse_grid)
               if l1 != l2]
    pairs = diag + off

    best = None
    for h in grid:
        for shift in shifts:
            stats = stats0.shifted(bary_shift=shift)
            for lam1, lam2 in pairs:
                sel = _schedule_selection(V, tau, h, lam1, lam2, stats)
                xi = sel.time_average(tau, h)
                pushed = pushforward(nu, lambda pts: pts + h * xi(pts))
                rate = Q.dist(tau + h, pushed).value / h
                if best is None or rate < best.rate - 1e-15:
                    best = IntegralProbeResult((lam1, lam2), shift, float(h),
                                               float(rate), sel, xi, stats)
                if accept_below is not None and rate <= accept_below:
                    return best
    return best


# --- Lipschitz-case mesh constructor ---------------------------------------

@dataclass
class DefectRow:
    t: float
    defect: float


@dataclass
class LipschitzConstruction:
    trajectory: Trajectory
    defects: list[DefectRow]
    rates: list[float]

    @property
    def max_defect(self) -> float:
        return max(r.defect for r in self.defects)

    def defects_csv(self) -> str:
        lines = ["t_k,defect"]
        for r in self.defects:
            lines.append(f"{format(r.t, '.17g')},{format(r.defect, '.17g')}")
        return "\n".join(lines) + "\n"


def _stitch(segments: list[Trajectory]) -> Trajectory:
    times = [segments[0].times]
    measures = list(segments[0].measures)
    sel_breaks = list(segments[0].selection.breaks)
    sel_fields = list(segments[0].selection.fields)
    for seg in segments[1:]:
        times.append(seg.times[1:])
        measures.extend(seg.measures[1:])
        sel_breaks.extend(seg.selection.breaks[1:])
        sel_fields.extend(seg.selection.fields)
    return Trajectory(np.concatenate(times), measures,
                      TimeField(tuple(sel_breaks), tuple(sel_fields)),
                      segments[0].m_profile)


def lipschitz_construct(V: VelocitySet, Q: ConstraintTube, tau: float,
                        mu_tau: DiscreteMeasure, n: int,
                        t_end: float | None = None,
                        policy: StepPolicy | None = None,
                        probe_grid_k: int = 12,
                        coarse: int = 8, fine: int = 32,
                        failure_factor: float = 10.0) -> LipschitzConstruction:
    """Uniform-mesh viable-curve constructor for the Lipschitz regime.

    Per mesh node: project the current measure onto the tube, probe for
    tangent generator weights at the projection, then integrate the matched
    selection (same weights, statistics read from the evolving measure) to
    the next node.  Raises InfeasibilityError when a probe rate exceeds
    failure_factor times the membership tolerance 1e-3 (1 + M1).
    """
    if n < 1:
        raise ViabilityError("mesh must have n >= 1 intervals")
    if t_end is None:
        t_end = Q.horizon[1]
    tol0 = 1e-3 * (1.0 + first_moment(mu_tau))
    d0, _ = tube_dist(Q, tau, mu_tau)
    if d0 > tol0:
        raise ViabilityError(f"initial measure is off the tube by {d0}")

    mesh = tau + (t_end - tau) * np.arange(n + 1) / n
    segments: list[Trajectory] = []
    defects: list[DefectRow] = []
    rates: list[float] = []
    mu = mu_tau
    for k in range(n):
        t_k, t_next = float(mesh[k]), float(mesh[k + 1])
        dist_k, witness = tube_dist(Q, t_k, mu)
        defects.append(DefectRow(t_k, dist_k))
        # probe at the scale the selection will act on: one mesh step
        probe = pointwise_probe(
            V, Q, t_k, witness,
            grid=default_h_grid(t_end, t_k, h0=t_next - t_k, K=probe_grid_k),
            coarse=coarse, fine=fine)
        rates.append(probe.rate)
        tol_k = 1e-3 * (1.0 + first_moment(witness))
        if probe.rate > failure_factor * tol_k:
            raise InfeasibilityError(t_k, probe.rate, failure_factor * tol_k)
        seg = inclusion_solve(V, Schedule.constant(probe.lam, t_k, t_next),
                              mu, t_k, t_next, policy)
        segments.append(seg)
        mu = seg.terminal
    defects.append(DefectRow(float(mesh[-1]), tube_dist(Q, t_end, mu)[0]))
    return LipschitzConstruction(_stitch(segments), defects, rates)


# --- Gronwall tracking ------------------------------------------------------

@dataclass
class GronwallReport:
    times: np.ndarray
    g: np.ndarray
    bound: np.ndarray
    slack: float
    violations: list[int]
    n_samples: int
    tracker_used: bool

    @property
    def viable_verdict(self) -> bool:
        return not self.violations

    def to_csv(self) -> str:
        lines = ["t,g,bound"]
        for t, g, b in zip(self.times, self.g, self.bound):
            lines.append(",".join(format(v, ".17g") for v in (t, g, b)))
        return "\n".join(lines) + "\n"


def gronwall_track(V: VelocitySet, Q: ConstraintTube, mu_tau: DiscreteMeasure,
                   tau: float, grid, samples: int, seed: int,
                   slack: float | None = None, include_tracker: bool = True,
                   policy: StepPolicy | None = None,
                   pieces: int = 4) -> GronwallReport:
    """Track min distance between sampled reachable measures and the tube.

    g(t) is a minimum over finitely many inclusion solutions: the random
    schedules plus, when the probe succeeds, the greedy tube-tracking
    schedule (itself a genuine selection).  The envelope is
    g(tau) exp(int (1 + M + L)); the slack absorbs the sampling excess.
    """
    if samples < 1:
        raise ViabilityError("need at least one sample")
    grid = np.asarray(grid, dtype=float)
    t_end = float(grid[-1])
    g0, _ = tube_dist(Q, tau, mu_tau)
    if slack is None:
        slack = 1e-2 * (1.0 + first_moment(mu_tau))

    trajs = reachable_trajectories(V, mu_tau, tau, t_end, samples, seed,
                                   pieces=pieces, policy=policy,
                                   forced_breaks=tuple(grid))
    tracker_used = False
    if include_tracker:
        try:
            cons = lipschitz_construct(V, Q, tau, mu_tau, max(len(grid) - 1, 1),
                                       t_end=t_end, policy=policy,
                                       probe_grid_k=8)
            trajs = trajs + [cons.trajectory]
            tracker_used = True
        except (InfeasibilityError, ViabilityError):
            pass

    g = np.empty(len(grid))
    bound = np.empty(len(grid))
    violations = []
    for i, t in enumerate(grid):
        g[i] = min(tube_dist(Q, float(t), tr.at(float(t)))[0] for tr in trajs)
        expo = (t - tau) + V.M.integral(tau, float(t)) + V.L.integral(tau, float(t))
        bound[i] = g0 * math.exp(expo)
        if g[i] > bound[i] + slack:
            violations.append(i)
    return GronwallReport(grid, g, bound, slack, violations,
                          samples, tracker_used)


# --- USC-case greedy triple builder -----------------------------------------

@dataclass
class MeasurePath:
    """Times and measures of a curve; nodes are dense enough for lookups."""

    times: np.ndarray
    measures: list[DiscreteMeasure]

    def index_at(self, t: float, tol: float = 1e-9) -> int:
        k = int(np.searchsorted(self.times, t + tol) - 1)
        return min(max(k, 0), len(self.measures) - 1)

    def at(self, t: float) -> DiscreteMeasure:
        return self.measures[self.index_at(t)]

    def node_at(self, t: float, tol: float = 1e-9) -> DiscreteMeasure:
        k = self.index_at(t, tol)
        if abs(float(self.times[k]) - t) > tol:
            raise ViabilityError(f"{t} is not a path node")
        return self.measures[k]


@dataclass
class GoodSelection:
    lam_pieces: tuple[tuple[float, ...], tuple[float, ...]]
    shift: np.ndarray
    stats_used: MeasureStats
    selection: TimeField


@dataclass
class BadSelection:
    geodesic_length: float
    plan: object = None  # interpolation plan driving the interval


@dataclass
class IntervalRecord:
    a: float
    b: float
    kind: str  # 'good' | 'bad'
    selection: GoodSelection | BadSelection


@dataclass
class UscTriple:
    tau: float
    intervals: list[IntervalRecord]
    curve: MeasurePath
    eps: float
    c_t: float
    r_t: float
    bad_set: tuple[tuple[float, float], ...]

    def intervals_csv(self) -> str:
        lines = ["a,b,kind"]
        for rec in self.intervals:
            lines.append(f"{format(rec.a, '.17g')},{format(rec.b, '.17g')},{rec.kind}")
        return "\n".join(lines) + "\n"


def default_bad_set(V: VelocitySet, Q: ConstraintTube, eps: float
                    ) -> tuple[tuple[float, float], ...]:
    """Width-eps neighborhoods of the bound profiles' interior breakpoints.

    Step functions have Lebesgue points everywhere except their breakpoints,
    so everything outside these neighborhoods is a legitimate good-point set.
    """
    T0, T1 = Q.horizon
    pts = merge_breakpoints(V.M.interior_breaks(), Q.modulus.interior_breaks())
    raw = [(max(T0, b - 0.5 * eps), min(T1, b + 0.5 * eps)) for b in pts]
    merged: list[tuple[float, float]] = []
    for lo, hi in sorted(raw):
        if merged and lo <= merged[-1][1] + 1e-12:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return tuple(merged)


def _in_bad(bad_set, t: float) -> tuple[bool, float]:
    """Whether t lies in the bad set; if so also the enclosing interval end."""
    for lo, hi in bad_set:
        if lo - 1e-12 <= t < hi - 1e-12:
            return True, hi
    return False, math.inf


def _next_bad_start(bad_set, t: float) -> float:
    starts = [lo for lo, hi in bad_set if lo > t + 1e-12]
    return min(starts) if starts else math.inf


def usc_construct(V: VelocitySet, Q: ConstraintTube, mu0: DiscreteMeasure,
                  eps: float, bad_set=None,
                  policy: StepPolicy | None = None,
                  h_floor_factor: float = 1e-6,
                  geodesic_nodes: int = 4,
                  diag_resolution: int = 8, coarse: int = 4,
                  validate: bool = True) -> UscTriple:
    """Greedy left-to-right builder of an approximate-solution triple.

    From the current time, either append a geodesic interval through the
    glued plan (bad times, where the tube's modulus carries the curve) or a
    flowed interval whose selection comes from the integral probe at radius
    eps, halving the step until the endpoint defect cap
    b * exp(int_0^b M) * eps is met.  Halving past h_floor_factor * T raises
    ConstructionError naming the blocking time.
    """
    T0, T1 = Q.horizon
    consts = constants_for(first_moment(mu0), V.M, Q.modulus, T1)
    if not 0.0 < eps < consts.eps0:
        raise ViabilityError(
            f"eps must lie in (0, eps0) = (0, {consts.eps0}); got {eps}")
    if bad_set is None:
        bad_set = default_bad_set(V, Q, eps)
    bad_set = tuple((float(lo), float(hi)) for lo, hi in bad_set)
    d0, _ = tube_dist(Q, T0, mu0)
    if d0 > 1e-6 * (1.0 + first_moment(mu0)):
        raise ViabilityError(f"mu0 is off the tube at t={T0} by {d0}")

    policy = policy or StepPolicy()
    h_floor = h_floor_factor * (T1 - T0)
    times = [T0]
    measures = [mu0]
    intervals: list[IntervalRecord] = []
    tau = T0

    while tau < T1 - 1e-12:
        mu_cur = measures[-1]
        bad, bad_end = _in_bad(bad_set, tau)
        if bad:
            sigma = min(bad_end, tau + eps, T1)
            _, w_tau = tube_dist(Q, tau, mu_cur)
            _, w_sig = tube_dist(Q, sigma, w_tau)
            alpha = w1_exact(mu_cur, w_tau)[1]
            beta = w1_exact(w_tau, w_sig)[1]
            target = glue_combine(alpha, beta)
            glen, gamma = w1_exact(mu_cur, target)
            mq_total = Q.modulus.integral(tau, sigma)
            for j in range(1, geodesic_nodes + 1):
                t_j = tau + (sigma - tau) * j / geodesic_nodes
                if mq_total > 1e-15:
                    s_j = Q.modulus.integral(tau, t_j) / mq_total
                else:
                    s_j = (t_j - tau) / (sigma - tau)
                times.append(t_j)
                measures.append(interpolate(gamma, s_j))
            intervals.append(IntervalRecord(tau, sigma, "bad",
                                            BadSelection(glen, gamma)))
            tau = sigma
            continue

        h_cap = min(eps, T1 - tau, _next_bad_start(bad_set, tau) - tau)
        _, w_tau = tube_dist(Q, tau, mu_cur)
        h = h_cap
        accepted = None
        while h >= h_floor:
            probe = integral_probe(V, Q, tau, w_tau, r=eps, grid=[h],
                                   diag_resolution=diag_resolution,
                                   coarse=coarse, accept_below=0.25 * eps)
            seg = flow_solve(probe.selection, mu_cur, tau, tau + h, policy)
            b = tau + h
            cap = b * math.exp(V.M.integral(T0, b)) * eps
            defect, _ = tube_dist(Q, b, seg.terminal)
            if defect <= cap:
                accepted = (h, probe, seg)
                break
            h *= 0.5
        if accepted is None:
            raise ConstructionError(tau, "endpoint-defect halving exhausted")
        h, probe, seg = accepted
        times.extend(seg.times[1:].tolist())
        measures.extend(seg.measures[1:])
        intervals.append(IntervalRecord(
            tau, tau + h, "good",
            GoodSelection(probe.lam_pieces, probe.shift, probe.stats_used,
                          probe.selection)))
        tau = tau + h

    triple = UscTriple(T1, intervals, MeasurePath(np.array(times), measures),
                       eps, consts.c_t, consts.r_t, bad_set)
    if validate:
        report = check_triple_properties(triple, V, Q, mu0)
        if not report.ok:
            raise ConstructionError(
                T1, "triple property validation failed: " + "; ".join(report.messages[:4]))
    return triple


# --- triple property validation and feasibility estimates --------------------------------

@dataclass
class TripleCheckReport:
    groups: dict[str, bool]
    messages: list[str]
    worst_slack: dict[str, float]

    @property
    def ok(self) -> bool:
        return all(self.groups.values())


def check_triple_properties(triple: UscTriple, V: VelocitySet, Q: ConstraintTube,
             mu0: DiscreteMeasure, tol: float = 1e-6) -> TripleCheckReport:
    """Validate the four property groups of an approximate-solution triple."""
    groups = {"i": True, "ii": True, "iii": True, "iv": True}
    messages: list[str] = []
    worst: dict[str, float] = {"i": 0.0, "ii": 0.0, "iii": 0.0, "iv": 0.0}
    T0, T1 = Q.horizon
    eps, c_t, r_t = triple.eps, triple.c_t, triple.r_t
    curve = triple.curve

    def fail(group, msg, slack=0.0):
        groups[group] = False
        messages.append(f"property ({group}): {msg}")
        worst[group] = max(worst[group], slack)

    # (i) widths, disjointness, coverage
    prev_b = T0
    for rec in triple.intervals:
        if rec.b - rec.a > eps + 1e-9:
            fail("i", f"interval [{rec.a}, {rec.b}) wider than eps",
                 rec.b - rec.a - eps)
        if abs(rec.a - prev_b) > 1e-9:
            fail("i", f"gap or overlap at {rec.a}")
        prev_b = rec.b
    if abs(prev_b - triple.tau) > 1e-9:
        fail("i", f"union ends at {prev_b}, expected {triple.tau}")

    # (ii) moment growth, displacement from mu0, endpoint defects
    m1_0 = first_moment(mu0)
    for t, mu in zip(curve.times, curve.measures):
        mi = V.M.integral(T0, float(t))
        m_bound = 2.0 * (m1_0 + mi) * math.exp(2.0 * mi)
        m1 = first_moment(mu)
        if m1 > m_bound + tol * (1.0 + m_bound):
            fail("ii", f"moment {m1} exceeds {m_bound} at t={t}",
                 m1 - m_bound)
    for rec in triple.intervals:
        mi = V.M.integral(T0, rec.b)
        w_bound = 2.0 * (1.0 + c_t) * (1.0 + mi)
        w = w1_exact(mu0, curve.node_at(rec.b))[0]
        if w > w_bound + tol * (1.0 + w_bound):
            fail("ii", f"displacement {w} exceeds {w_bound} at t={rec.b}",
                 w - w_bound)
        cap = rec.b * math.exp(mi) * eps
        defect, _ = tube_dist(Q, rec.b, curve.node_at(rec.b))
        if defect > cap + tol * (1.0 + cap):
            fail("ii", f"endpoint defect {defect} exceeds {cap} at t={rec.b}",
                 defect - cap)

    # (iii) good intervals: selection statistics stay in the r_T eps ball and
    # the curve obeys the inclusion AC bound
    for rec in triple.intervals:
        lo_idx = curve.index_at(rec.a)
        hi_idx = curve.index_at(rec.b)
        nodes = list(range(lo_idx, hi_idx + 1))
        if rec.kind == "good":
            sel: GoodSelection = rec.selection
            for k in nodes:
                mu_t = curve.measures[k]
                stats_t = MeasureStats.of(mu_t)
                gap = max(float(np.linalg.norm(
                    sel.stats_used.barycenter - stats_t.barycenter)),
                    abs(sel.stats_used.first_moment - stats_t.first_moment))
                if gap > r_t * eps + tol:
                    fail("iii", f"selection statistics {gap} beyond "
                                f"r_T eps = {r_t * eps} near t={curve.times[k]}",
                         gap - r_t * eps)
            for k1, k2 in zip(nodes, nodes[1:]):
                w = w1_exact(curve.measures[k1], curve.measures[k2])[0]
                budget = 2.0 * (1.0 + c_t) * V.M.integral(
                    float(curve.times[k1]), float(curve.times[k2]))
                if w > budget + tol * (1.0 + budget):
                    fail("iii", f"AC bound broken on good interval at "
                                f"t={curve.times[k1]}", w - budget)
        else:
            inside = any(lo - 1e-9 <= rec.a and rec.b <= hi + 1e-9
                         for lo, hi in triple.bad_set)
            if not inside:
                fail("iv", f"bad interval [{rec.a}, {rec.b}) leaves the bad set")
            for k1, k2 in zip(nodes, nodes[1:]):
                w = w1_exact(curve.measures[k1], curve.measures[k2])[0]
                budget = Q.modulus.integral(float(curve.times[k1]),
                                            float(curve.times[k2]))
                if w > budget + tol * (1.0 + budget):
                    fail("iv", f"modulus bound broken on bad interval at "
                               f"t={curve.times[k1]}", w - budget)
    return TripleCheckReport(groups, messages, worst)


def corollary_feasibility_check(triple: UscTriple, V: VelocitySet,
                                Q: ConstraintTube, times=None,
                                tol: float = 1e-6):
    """Global feasibility bound for admissible triples, per diagnostic time.

    defect(t) <= 2 int_{t-eps}^t max{2(1+c_T) M, M_Q} + t exp(int_0^t M) eps.
    Returns rows (t, defect, bound) and a pass flag.
    """
    T0 = Q.horizon[0]
    eps, c_t = triple.eps, triple.c_t
    combined = step_max(V.M, Q.modulus, a_scale=2.0 * (1.0 + c_t))
    if times is None:
        times = [rec.b for rec in triple.intervals if rec.b >= T0 + eps]
    rows = []
    ok = True
    for t in times:
        if t < T0 + eps - 1e-12 or t > triple.tau + 1e-12:
            continue
        defect, _ = tube_dist(Q, float(t), triple.curve.at(float(t)))
        bound = (2.0 * combined.integral(t - eps, t)
                 + t * math.exp(V.M.integral(T0, t)) * eps)
        if defect > bound + tol * (1.0 + bound):
            ok = False
        rows.append((float(t), defect, bound))
    return rows, ok


def path_increment_bound(triple: UscTriple, V: VelocitySet,
                         Q: ConstraintTube, s: float, t: float) -> float:
    """Bound 2(1+c_T) int_{E cap [s,t]} M + int_{F cap [s,t]} M_Q with E/F the
    good/bad interval unions."""
    total = 0.0
    for rec in triple.intervals:
        lo, hi = max(s, rec.a), min(t, rec.b)
        if hi <= lo:
            continue
        if rec.kind == "good":
            total += 2.0 * (1.0 + triple.c_t) * V.M.integral(lo, hi)
        else:
            total += Q.modulus.integral(lo, hi)
    return total


# --- USC refinement sequence ------------------------------------------------

@dataclass
class ConvergenceRow:
    n_prev: int
    n: int
    sup_w1: float
    sup_defect_prev: float
    sup_defect: float


def sup_defect(triple: UscTriple, Q: ConstraintTube, grid=None,
               max_nodes: int = 400) -> float:
    """Worst tube distance along the curve, evaluated at curve nodes by
    default so no between-node lookup error enters the measurement."""
    if grid is None:
        stride = max(1, len(triple.curve.measures) // max_nodes)
        idx = list(range(0, len(triple.curve.measures), stride))
        if idx[-1] != len(triple.curve.measures) - 1:
            idx.append(len(triple.curve.measures) - 1)
        return max(tube_dist(Q, float(triple.curve.times[k]),
                             triple.curve.measures[k])[0] for k in idx)
    return max(tube_dist(Q, float(t), triple.curve.at(float(t)))[0]
               for t in grid)


def usc_epsilons(V: VelocitySet, Q: ConstraintTube, mu0: DiscreteMeasure,
                 n_range) -> list[float]:
    """eps_n = min(1 / (r_T n), delta_n) with delta_n the absolute-continuity
    threshold of max{2(1+c_T) M, M_Q} at level 1/n."""
    consts = constants_for(first_moment(mu0), V.M, Q.modulus, Q.horizon[1])
    combined_max = max(2.0 * (1.0 + consts.c_t) * V.M.max_value(),
                       Q.modulus.max_value())
    out = []
    for n in n_range:
        delta_n = (1.0 / n) / combined_max if combined_max > 0 else 1.0 / n
        out.append(min(1.0 / (consts.r_t * n), delta_n))
    return out


def usc_sequence(V: VelocitySet, Q: ConstraintTube, mu0: DiscreteMeasure,
                 n_range, bad_set=None, grid=None,
                 **construct_kwargs) -> tuple[list[UscTriple], list[ConvergenceRow]]:
    """Triples for each n with a refinement table of sup defects and
    curve-to-curve sup distances.  Construction failures propagate."""
    n_range = list(n_range)
    if not n_range:
        raise ViabilityError("n_range must be nonempty")
    eps_list = usc_epsilons(V, Q, mu0, n_range)
    triples = [usc_construct(V, Q, mu0, eps, bad_set=bad_set,
                             **construct_kwargs) for eps in eps_list]
    if grid is None:
        grid = np.linspace(Q.horizon[0], Q.horizon[1], 17)
    defects = [sup_defect(tr, Q, grid) for tr in triples]
    rows = []
    for i in range(1, len(triples)):
        sup_w1 = max(w1_exact(triples[i - 1].curve.at(float(t)),
                              triples[i].curve.at(float(t)))[0]
                     for t in grid)
        rows.append(ConvergenceRow(n_range[i - 1], n_range[i], sup_w1,
                                   defects[i - 1], defects[i]))
    return triples, rows


# --- superdifferentiability counterexample -----------------------------------

def superdiff_counterexample(xi_val: float, zeta_val: float, s0: float,
                             h_grid=None, xbar: float = 0.0
                             ) -> tuple[bool, float]:
    """Scalar witness that W1 admits no superdifferential at Dirac pairs.

    With mu = nu = delta_xbar in 1D, checks the one-sided upper estimate on a
    +-h grid from measured transport distances, and returns the measured
    liminf expression, which equals (xi - zeta)(sign(xi - zeta) - s0).
    """
    if abs(s0) > 1.0:
        raise ViabilityError("the duality selection satisfies |s0| <= 1")
    if h_grid is None:
        h_grid = 0.1 * 0.5 ** np.arange(9)
    mu = dirac(xbar)
    diff = xi_val - zeta_val
    upper_ok = True
    rates = []
    for h in np.asarray(h_grid, dtype=float):
        for hh in (h, -h):
            a = pushforward(mu, lambda pts: pts + hh * xi_val)
            b = pushforward(mu, lambda pts: pts + hh * zeta_val)
            w = w1_exact(a, b)[0]
            rhs = hh * diff * s0 + 2.0 * abs(hh) * abs(diff)
            if w > rhs + 1e-12:
                upper_ok = False
        w_pos = w1_exact(pushforward(mu, lambda pts: pts + h * xi_val),
                         pushforward(mu, lambda pts: pts + h * zeta_val))[0]
        rates.append((w_pos - h * diff * s0) / h)
    return upper_ok, float(min(rates))
