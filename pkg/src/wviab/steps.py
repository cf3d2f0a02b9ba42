"""Piecewise-constant functions of time.

All time-dependent coefficients in this package (velocity bound profiles,
constraint moduli, tube radii and caps, schedules) are step functions on a
working interval.  Keeping them piecewise constant makes every time integral
exact, which matters because the quantities they bound are asserted at tight
tolerances.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function on [breaks[0], breaks[-1]].

    ``values[k]`` is the value on the half-open piece [breaks[k], breaks[k+1]);
    the final endpoint evaluates to the last value.
    """

    breaks: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.breaks) < 2:
            raise ValueError("step function needs at least two breakpoints")
        if len(self.values) != len(self.breaks) - 1:
            raise ValueError("need exactly one value per piece")
        for a, b in zip(self.breaks, self.breaks[1:]):
            if not b > a:
                raise ValueError("breakpoints must be strictly increasing")

    @classmethod
    def constant(cls, value: float, t0: float, t1: float) -> "StepFunction":
        return cls((float(t0), float(t1)), (float(value),))

    @property
    def t0(self) -> float:
        return self.breaks[0]

    @property
    def t1(self) -> float:
        return self.breaks[-1]

    def _piece(self, t: float) -> int:
        if t < self.breaks[0] - 1e-12 or t > self.breaks[-1] + 1e-12:
            raise ValueError(f"time {t} outside working interval "
                             f"[{self.breaks[0]}, {self.breaks[-1]}]")
        k = bisect.bisect_right(self.breaks, t) - 1
        return min(max(k, 0), len(self.values) - 1)

    def __call__(self, t: float) -> float:
        return self.values[self._piece(t)]

    def integral(self, s: float, t: float) -> float:
        """Exact integral over [s, t] (signed if s > t)."""
        if t < s:
            return -self.integral(t, s)
        lo, hi = self._piece(s), self._piece(t)
        if lo == hi:
            return self.values[lo] * (t - s)
        total = self.values[lo] * (self.breaks[lo + 1] - s)
        for k in range(lo + 1, hi):
            total += self.values[k] * (self.breaks[k + 1] - self.breaks[k])
        total += self.values[hi] * (t - self.breaks[hi])
        return total

    def max_value(self) -> float:
        return max(self.values)

    def interior_breaks(self) -> tuple[float, ...]:
        return self.breaks[1:-1]

    def restricted_max(self, s: float, t: float) -> float:
        """Max value attained on [s, t]."""
        if t < s:
            s, t = t, s
        lo, hi = self._piece(s), self._piece(t)
        return max(self.values[lo:hi + 1])


def merge_breakpoints(*seqs: tuple[float, ...] | list[float],
                      tol: float = 1e-12) -> list[float]:
    """Sorted union of breakpoint sequences, deduplicated within tol."""
    pts = sorted(p for seq in seqs for p in seq)
    out: list[float] = []
    for p in pts:
        if not out or p - out[-1] > tol:
            out.append(p)
    return out


def step_max(a: StepFunction, b: StepFunction,
             a_scale: float = 1.0, b_scale: float = 1.0) -> StepFunction:
    """Pointwise max(a_scale * a, b_scale * b) on the overlap of the domains."""
    lo = max(a.t0, b.t0)
    hi = min(a.t1, b.t1)
    if hi <= lo:
        raise ValueError("step functions have disjoint domains")
    breaks = [p for p in merge_breakpoints(a.breaks, b.breaks) if lo <= p <= hi]
    if breaks[0] > lo:
        breaks.insert(0, lo)
    if breaks[-1] < hi:
        breaks.append(hi)
    vals = []
    for s, t in zip(breaks, breaks[1:]):
        mid = 0.5 * (s + t)
        vals.append(max(a_scale * a(mid), b_scale * b(mid)))
    return StepFunction(tuple(breaks), tuple(vals))
