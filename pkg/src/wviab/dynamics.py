"""Characteristic-flow solutions of continuity equations and inclusions.

Measures evolve by transporting their atoms along velocity fields (the flow
representation of continuity-equation solutions).  Atoms are integrated with
classical RK4 on the coupled particle system; when the velocity reads
statistics of the current measure, those statistics are re-evaluated at every
RK stage, so the scheme stays fourth order for the self-consistent dynamics.

Substep control is by Lipschitz budget: each substep dt satisfies
M * dt <= policy.m_budget, well below the 0.1 cap the quadratic
small-time estimates assume, so integrator error sits far under the
O((int M)^2) signals the monitors measure.
"""

from __future__ import annotations

import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import (Constant, ConvexCombo, TimeField, VectorField,
                     concat_time_fields)
from .measures import DiscreteMeasure, MeasureStats, first_moment
from .steps import StepFunction, merge_breakpoints
from .transport import w1_exact

BLOWUP_LIMIT = 1e9
DEFAULT_M_BUDGET = 0.02


class DivergenceError(RuntimeError):
    """Atom positions exceeded the blow-up guard."""


class DynamicsError(ValueError):
    pass


def derived_seed(seed: int, purpose: str) -> int:
    """Documented derivation: seed + CRC32 of the purpose string."""
    return (int(seed) + zlib.crc32(purpose.encode())) % 2 ** 63


def c_t_bound(m1_0: float, m_integral: float) -> float:
    """Global moment bound 2 (M1(mu_0) + int M) exp(2 int M)."""
    return 2.0 * (m1_0 + m_integral) * math.exp(2.0 * m_integral)


@dataclass(frozen=True)
class StepPolicy:
    m_budget: float = DEFAULT_M_BUDGET

    def substeps(self, m_value: float, length: float) -> int:
        if length <= 0:
            return 0
        if m_value <= 0:
            return 1
        return max(1, math.ceil(m_value * length / self.m_budget - 1e-12))


@dataclass(frozen=True)
class Generator:
    """One admissible velocity shape g(t, mu) of a velocity set.

    The measure enters only through its barycenter and first moment, mixed in
    as a constant field: g(t, mu) = (1 - mix) base(t)
    + mix * Constant(bary_gain * bary(mu) + moment_gain * M1(mu) * moment_dir).
    Both statistics are 1-Lipschitz in W1, so the generator's measure
    sensitivity is bounded by mix * (|bary_gain| + |moment_gain|).
    """

    base: TimeField
    mix: float = 0.0
    bary_gain: float = 0.0
    moment_gain: float = 0.0
    moment_dir: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.mix <= 1.0:
            raise DynamicsError("generator mix weight must lie in [0, 1]")
        if self.mix > 0 and self.moment_gain != 0.0 and self.moment_dir is None:
            d = self.base.dim
            object.__setattr__(self, "moment_dir", tuple([1.0] + [0.0] * (d - 1)))

    @property
    def dim(self) -> int:
        return self.base.dim

    def measure_lipschitz(self) -> float:
        return self.mix * (abs(self.bary_gain) + abs(self.moment_gain))

    def required_m(self) -> StepFunction:
        prof = self.base.m_profile()
        coupling = self.measure_lipschitz()
        vals = tuple(max((1.0 - self.mix) * v, coupling) for v in prof.values)
        return StepFunction(prof.breaks, vals)

    def field(self, t: float, stats: MeasureStats) -> VectorField:
        base = self.base.field_at(t)
        if self.mix == 0.0:
            return base
        offset = self.bary_gain * stats.barycenter
        if self.moment_gain != 0.0:
            offset = offset + self.moment_gain * stats.first_moment \
                * np.asarray(self.moment_dir)
        return ConvexCombo((base, Constant(offset)), (1.0 - self.mix, self.mix))


@dataclass(frozen=True)
class VelocitySet:
    """Convex hull of finitely many generators, with declared bound profiles.

    M dominates the sublinearity/Lipschitz budget of every generated field;
    L dominates their W1 sensitivity to the measure argument.  Both are
    verified analytically at construction.
    """

    generators: tuple[Generator, ...]
    M: StepFunction
    L: StepFunction

    def __post_init__(self):
        if not self.generators:
            raise DynamicsError("velocity set needs at least one generator")
        d = self.generators[0].dim
        if any(g.dim != d for g in self.generators):
            raise DynamicsError("generators must share a dimension")
        object.__setattr__(self, "generators", tuple(self.generators))
        for g in self.generators:
            req = g.required_m()
            grid = merge_breakpoints(self.M.breaks, req.breaks)
            for lo, hi in zip(grid, grid[1:]):
                mid = 0.5 * (lo + hi)
                if req(mid) > self.M(mid) + 1e-9:
                    raise DynamicsError(
                        f"declared M profile too small near t={mid}: "
                        f"needs {req(mid)}, declared {self.M(mid)}")
            if g.measure_lipschitz() > self.L.max_value() + 1e-9 \
                    and g.measure_lipschitz() > min(self.L.values) + 1e-9:
                raise DynamicsError("declared L profile below generator coupling")

    @property
    def dim(self) -> int:
        return self.generators[0].dim

    @property
    def k(self) -> int:
        return len(self.generators)

    @property
    def horizon(self) -> tuple[float, float]:
        return self.M.t0, self.M.t1

    def field(self, t: float, stats: MeasureStats, lam) -> VectorField:
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.k,):
            raise DynamicsError(f"weights must have length {self.k}")
        parts = [g.field(t, stats) for g in self.generators]
        if self.k == 1:
            return parts[0]
        return ConvexCombo(tuple(parts), tuple(lam))

    def time_breaks(self) -> list[float]:
        seqs = [self.M.breaks] + [g.base.breaks for g in self.generators]
        return merge_breakpoints(*seqs)


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant simplex weights lambda(t)."""

    breaks: tuple[float, ...]
    weights: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.breaks) < 2 or len(self.weights) != len(self.breaks) - 1:
            raise DynamicsError("schedule needs one weight vector per piece")
        for w in self.weights:
            arr = np.asarray(w, dtype=float)
            if np.any(arr < -1e-12) or abs(arr.sum() - 1.0) > 1e-9:
                raise DynamicsError("schedule weights must lie on the simplex")
        object.__setattr__(self, "breaks", tuple(float(t) for t in self.breaks))
        object.__setattr__(self, "weights",
                           tuple(tuple(float(x) for x in w) for w in self.weights))

    @classmethod
    def constant(cls, lam, t0: float, t1: float) -> "Schedule":
        return cls((t0, t1), (tuple(np.asarray(lam, dtype=float)),))

    def covers(self, tau: float, t_end: float) -> bool:
        return self.breaks[0] <= tau + 1e-12 and self.breaks[-1] >= t_end - 1e-12

    def weights_at(self, t: float) -> np.ndarray:
        import bisect
        k = bisect.bisect_right(self.breaks, t) - 1
        k = min(max(k, 0), len(self.weights) - 1)
        return np.asarray(self.weights[k])


@dataclass
class Trajectory:
    """Discrete-time record of an evolving measure.

    Nodes are every integrator substep boundary; `selection` records the
    concrete velocity field applied on each substep.
    """

    times: np.ndarray
    measures: list[DiscreteMeasure]
    selection: TimeField
    m_profile: StepFunction

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def terminal(self) -> DiscreteMeasure:
        return self.measures[-1]

    def index_at(self, t: float, tol: float = 1e-9) -> int:
        k = int(np.searchsorted(self.times, t + tol) - 1)
        return min(max(k, 0), len(self.measures) - 1)

    def at(self, t: float) -> DiscreteMeasure:
        """Measure at the last node <= t (nodes are substep-dense)."""
        return self.measures[self.index_at(t)]

    def node_at(self, t: float, tol: float = 1e-9) -> DiscreteMeasure:
        k = self.index_at(t, tol)
        if abs(self.times[k] - t) > tol:
            raise DynamicsError(f"{t} is not a trajectory node")
        return self.measures[k]


def _rk4_run(x0: np.ndarray, rhs, t_lo: float, t_hi: float, k_steps: int):
    """Classical RK4 on the coupled atom system; returns substep snapshots."""
    out_times, out_states = [], []
    x = x0
    dt = (t_hi - t_lo) / k_steps
    for s in range(k_steps):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.max(np.abs(x)) > BLOWUP_LIMIT:
            raise DivergenceError(
                f"atom positions exceeded {BLOWUP_LIMIT:g} near t={t_lo + (s + 1) * dt}")
        out_times.append(t_lo + (s + 1) * dt)
        out_states.append(x)
    return out_times, out_states


def _split_interval(tau: float, t_end: float, breaks, forced=()):
    pts = merge_breakpoints([tau, t_end], [b for b in breaks if tau < b < t_end],
                            [b for b in forced if tau < b < t_end])
    return list(zip(pts, pts[1:]))


def flow_solve(tf: TimeField, mu0: DiscreteMeasure, tau: float, t_end: float,
               policy: StepPolicy | None = None, forced_breaks=()) -> Trajectory:
    """Transport mu0 along a fixed Caratheodory field from tau to t_end."""
    if t_end <= tau:
        raise DynamicsError("need tau < t_end")
    if tau < tf.t0 - 1e-9 or t_end > tf.t1 + 1e-9:
        raise DynamicsError("solve window leaves the field's working interval")
    policy = policy or StepPolicy()
    times = [tau]
    states = [np.array(mu0.points)]
    sel_pieces = []
    for lo, hi in _split_interval(tau, t_end, tf.breaks, forced_breaks):
        f = tf.field_at(lo)
        m_val = max(f.lip_bound, f.sublinear_bound)
        k = policy.substeps(m_val, hi - lo)
        ts, xs = _rk4_run(states[-1], lambda x: f(x), lo, hi, k)
        times.extend(ts)
        states.extend(xs)
        sel_pieces.append((lo, hi, f))
    measures = [mu0] + [DiscreteMeasure(x, mu0.weights) for x in states[1:]]
    return Trajectory(np.array(times), measures,
                      concat_time_fields(sel_pieces), tf.m_profile())


def inclusion_solve(V: VelocitySet, schedule: Schedule, mu0: DiscreteMeasure,
                    tau: float, t_end: float, policy: StepPolicy | None = None,
                    forced_breaks=()) -> Trajectory:
    """Integrate one velocity selection of the inclusion.

    On each substep the applied field is the schedule's convex combination of
    generators, with measure statistics read from the evolving state at every
    RK stage.  The recorded selection freezes each substep's field at the
    substep-start statistics.
    """
    if t_end <= tau:
        raise DynamicsError("need tau < t_end")
    if not schedule.covers(tau, t_end):
        raise DynamicsError("schedule does not cover the solve window")
    policy = policy or StepPolicy()
    weights = np.array(mu0.weights)
    times = [tau]
    states = [np.array(mu0.points)]
    sel_pieces = []
    breaks = merge_breakpoints(V.time_breaks(), schedule.breaks)
    for lo, hi in _split_interval(tau, t_end, breaks, forced_breaks):
        lam = schedule.weights_at(lo)
        m_val = V.M(lo)
        k = policy.substeps(m_val, hi - lo)
        dt = (hi - lo) / k
        for s in range(k):
            s_lo = lo + s * dt
            s_hi = lo + (s + 1) * dt

            def rhs(x):
                stats = MeasureStats.of_arrays(x, weights)
                return V.field(s_lo, stats, lam)(x)

            ts, xs = _rk4_run(states[-1], rhs, s_lo, s_hi, 1)
            start_stats = MeasureStats.of_arrays(states[-1], weights)
            sel_pieces.append((s_lo, s_hi, V.field(s_lo, start_stats, lam)))
            times.extend(ts)
            states.extend(xs)
    measures = [mu0] + [DiscreteMeasure(x, weights) for x in states[1:]]
    return Trajectory(np.array(times), measures,
                      concat_time_fields(sel_pieces), V.M)


def random_schedule(V: VelocitySet, tau: float, t_end: float, seed: int,
                    pieces: int = 4) -> Schedule:
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.uniform(tau, t_end, size=pieces - 1)) if pieces > 1 else []
    breaks = [tau] + [float(c) for c in cuts] + [t_end]
    # drop degenerate pieces from coincident cuts
    clean = [breaks[0]]
    for b in breaks[1:]:
        if b - clean[-1] > 1e-9:
            clean.append(b)
    if clean[-1] < t_end:
        clean[-1] = t_end
    lam = [tuple(rng.dirichlet(np.ones(V.k))) for _ in range(len(clean) - 1)]
    return Schedule(tuple(clean), tuple(lam))


def _thread_count() -> int:
    raw = os.environ.get("WVIAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def reachable_trajectories(V: VelocitySet, mu0: DiscreteMeasure, tau: float,
                           t_end: float, N: int, seed: int,
                           pieces: int = 4, policy: StepPolicy | None = None,
                           forced_breaks=()) -> list[Trajectory]:
    """N inclusion solves under independent random schedules.

    Per-sample seeds are seed + index, so results are reproducible and
    independent of execution order even when run on a thread pool.
    """
    if N < 1:
        raise DynamicsError("need at least one sample")

    def run(i: int) -> Trajectory:
        sched = random_schedule(V, tau, t_end, seed + i, pieces)
        return inclusion_solve(V, sched, mu0, tau, t_end, policy, forced_breaks)

    workers = _thread_count()
    if workers == 1 or N == 1:
        return [run(i) for i in range(N)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(N)))


def reachable_sample(V: VelocitySet, mu0: DiscreteMeasure, tau: float,
                     t_end: float, N: int, seed: int, pieces: int = 4,
                     policy: StepPolicy | None = None) -> list[DiscreteMeasure]:
    """Terminal measures of N randomly scheduled inclusion solutions."""
    return [tr.terminal
            for tr in reachable_trajectories(V, mu0, tau, t_end, N, seed,
                                             pieces, policy)]


@dataclass
class MonitorRow:
    t: float
    moment: float
    moment_bound: float
    w1_increment: float
    increment_budget: float


@dataclass
class MonitorReport:
    rows: list[MonitorRow]
    c_t: float
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_csv(self) -> str:
        lines = ["t,moment,w1_increment,budget"]
        for r in self.rows:
            lines.append(",".join(format(v, ".17g") for v in
                                  (r.t, r.moment, r.w1_increment,
                                   r.increment_budget)))
        return "\n".join(lines) + "\n"


def estimate_monitor(traj: Trajectory, V: VelocitySet,
                     mu0_moment: float, tol_scale: float = 1e-6) -> MonitorReport:
    """Check the moment bound and the W1 increment budget node by node.

    The moment bound is the global constant c_T computed from the initial
    moment and the full-horizon integral of M; the adjacent-node W1 increments
    are checked against (1 + 2 c_T) int M.  Tolerance scales with each bound.
    """
    t0, t1 = V.horizon
    c_t = c_t_bound(mu0_moment, V.M.integral(t0, t1))
    rows: list[MonitorRow] = []
    violations: list[str] = []
    prev = None
    for k, (t, mu) in enumerate(zip(traj.times, traj.measures)):
        m1 = first_moment(mu)
        inc = 0.0
        budget = 0.0
        if prev is not None:
            inc = w1_exact(prev[1], mu)[0]
            budget = (1.0 + 2.0 * c_t) * V.M.integral(prev[0], t)
            if inc > budget + tol_scale * (1.0 + budget):
                violations.append(
                    f"W1 increment {inc} exceeds budget {budget} at t={t}")
        if m1 > c_t + tol_scale * (1.0 + c_t):
            violations.append(f"moment {m1} exceeds c_T={c_t} at t={t}")
        rows.append(MonitorRow(float(t), m1, c_t, inc, budget))
        prev = (t, mu)
    return MonitorReport(rows, c_t, violations)


def second_order_defect(tf: TimeField, mu0: DiscreteMeasure, tau: float,
                        h: float, policy: StepPolicy | None = None
                        ) -> tuple[float, float]:
    """Distance between the true flow and one time-averaged Euler push.

    Returns (lhs, bound) with lhs = W1(mu(tau+h), (Id + int_tau^{tau+h} v)# mu0)
    and bound = (1 + C_T)(1 + M1(mu0)) (int_tau^{tau+h} M)^2, where C_T is the
    flow sublinearity constant exp(int M) over the field's working interval.
    """
    if h <= 0:
        raise DynamicsError("need h > 0")
    traj = flow_solve(tf, mu0, tau, tau + h, policy)
    avg = tf.time_average(tau, h)
    from .measures import pushforward
    pushed = pushforward(mu0, lambda pts: pts + h * avg(pts))
    lhs = w1_exact(traj.terminal, pushed)[0]
    m_prof = tf.m_profile()
    c_flow = math.exp(m_prof.integral(tf.t0, tf.t1))
    c = (1.0 + c_flow) * (1.0 + first_moment(mu0))
    bound = c * m_prof.integral(tau, tau + h) ** 2
    return lhs, bound
