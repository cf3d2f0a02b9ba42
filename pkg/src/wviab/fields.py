"""Vector fields with analytic Lipschitz and sublinearity bounds.

The field universe is a closed finite algebra: affine maps, constants, a
bounded smooth radial saturator, and convex combinations of those.  Every
node carries exact bound metadata (`lip_bound`, `sublinear_bound`), so the
quantitative hypotheses the dynamics relies on are known constants rather
than estimates.  Time dependence enters only through piecewise-constant
schedules of such fields, which keeps time averages exact.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .steps import StepFunction

WEIGHT_TOL = 1e-12


class FieldError(ValueError):
    pass


class VectorField:
    """Base class; concrete nodes implement `_eval` on an (n, d) array."""

    dim: int
    lip_bound: float
    sublinear_bound: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        if pts.shape[1] != self.dim:
            raise FieldError(f"field of dim {self.dim} evaluated at dim {pts.shape[1]}")
        out = self._eval(pts)
        if not np.all(np.isfinite(out)):
            raise FieldError("field evaluation produced non-finite values")
        return out[0] if single else out

    def _eval(self, pts: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError


@dataclass(frozen=True)
class Affine(VectorField):
    """v(x) = A x + b; lip = ||A||_2, sublinearity max(||A||_2, |b|)."""

    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        b = np.atleast_1d(np.asarray(self.offset, dtype=float))
        if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
            raise FieldError("affine field needs square matrix and matching offset")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "offset", b)
        op_norm = float(np.linalg.norm(A, 2))
        object.__setattr__(self, "dim", b.shape[0])
        object.__setattr__(self, "lip_bound", op_norm)
        object.__setattr__(self, "sublinear_bound",
                           max(op_norm, float(np.linalg.norm(b))))

    def _eval(self, pts):
        return pts @ self.matrix.T + self.offset


@dataclass(frozen=True)
class Constant(VectorField):
    value: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.value, dtype=float))
        c.setflags(write=False)
        object.__setattr__(self, "value", c)
        object.__setattr__(self, "dim", c.shape[0])
        object.__setattr__(self, "lip_bound", 0.0)
        object.__setattr__(self, "sublinear_bound", float(np.linalg.norm(c)))

    def _eval(self, pts):
        return np.broadcast_to(self.value, pts.shape).copy()


@dataclass(frozen=True)
class SaturatedRadial(VectorField):
    """v(x) = amplitude * x / sqrt(scale^2 + |x|^2): bounded, smooth.

    |v| <= |amplitude| everywhere and Lip(v) <= |amplitude| / scale.
    """

    amplitude: float
    scale: float
    dim: int

    def __post_init__(self):
        if self.scale <= 0:
            raise FieldError("saturated radial field needs scale > 0")
        object.__setattr__(self, "lip_bound", abs(self.amplitude) / self.scale)
        object.__setattr__(self, "sublinear_bound", abs(self.amplitude))

    def _eval(self, pts):
        denom = np.sqrt(self.scale ** 2 + np.sum(pts ** 2, axis=1, keepdims=True))
        return self.amplitude * pts / denom


@dataclass(frozen=True)
class ConvexCombo(VectorField):
    children: tuple[VectorField, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.children or len(self.children) != len(self.weights):
            raise FieldError("combo needs matching nonempty children and weights")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise FieldError("combo weights must lie on the simplex")
        d = self.children[0].dim
        if any(ch.dim != d for ch in self.children):
            raise FieldError("combo children must share a dimension")
        object.__setattr__(self, "children", tuple(self.children))
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "dim", d)
        object.__setattr__(self, "lip_bound",
                           float(sum(l * ch.lip_bound
                                     for l, ch in zip(w, self.children))))
        object.__setattr__(self, "sublinear_bound",
                           float(sum(l * ch.sublinear_bound
                                     for l, ch in zip(w, self.children))))

    def _eval(self, pts):
        out = np.zeros_like(pts)
        for lam, child in zip(self.weights, self.children):
            if lam != 0.0:
                out += lam * child(pts)
        return out


def convex_combine(fields, weights) -> VectorField:
    """Pointwise convex combination; bounds combine linearly."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise FieldError("weights must lie on the simplex")
    return ConvexCombo(tuple(fields), tuple(w))


def zero_field(dim: int) -> Constant:
    return Constant(np.zeros(dim))


def d_sup_probe(f: VectorField, g: VectorField, probes: np.ndarray) -> float:
    """Max |f - g| over a probe set: a certified lower bound on d_sup(f, g)."""
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    if pts.shape[0] == 0:
        raise FieldError("probe set must be nonempty")
    return float(np.max(np.linalg.norm(f(pts) - g(pts), axis=1)))


def probe_lipschitz(f: VectorField, pairs: np.ndarray) -> float:
    """Max difference quotient over probe point pairs (2k, d) array."""
    pts = np.atleast_2d(np.asarray(pairs, dtype=float))
    a, b = pts[0::2], pts[1::2]
    gaps = np.linalg.norm(a - b, axis=1)
    keep = gaps > 1e-12
    if not keep.any():
        return 0.0
    vals = np.linalg.norm(f(a[keep]) - f(b[keep]), axis=1)
    return float(np.max(vals / gaps[keep]))


def probe_sublinearity(f: VectorField, probes: np.ndarray) -> float:
    """Max |f(x)| / (1 + |x|) over a probe set."""
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    return float(np.max(np.linalg.norm(f(pts), axis=1)
                        / (1.0 + np.linalg.norm(pts, axis=1))))


@dataclass(frozen=True)
class TimeField:
    """Piecewise-constant-in-time vector field on a working interval.

    `fields[k]` applies on [breaks[k], breaks[k+1]); the right endpoint of the
    working interval evaluates to the last piece.
    """

    breaks: tuple[float, ...]
    fields: tuple[VectorField, ...]

    def __post_init__(self):
        if len(self.breaks) < 2 or len(self.fields) != len(self.breaks) - 1:
            raise FieldError("time field needs one field per interval piece")
        for a, b in zip(self.breaks, self.breaks[1:]):
            if not b > a:
                raise FieldError("time breakpoints must be strictly increasing")
        d = self.fields[0].dim
        if any(f.dim != d for f in self.fields):
            raise FieldError("all pieces must share a dimension")
        object.__setattr__(self, "breaks", tuple(float(t) for t in self.breaks))
        object.__setattr__(self, "fields", tuple(self.fields))

    @classmethod
    def constant(cls, field: VectorField, t0: float, t1: float) -> "TimeField":
        return cls((t0, t1), (field,))

    @property
    def t0(self) -> float:
        return self.breaks[0]

    @property
    def t1(self) -> float:
        return self.breaks[-1]

    @property
    def dim(self) -> int:
        return self.fields[0].dim

    def _piece(self, t: float) -> int:
        if t < self.t0 - 1e-12 or t > self.t1 + 1e-12:
            raise FieldError(f"time {t} outside working interval [{self.t0}, {self.t1}]")
        k = bisect.bisect_right(self.breaks, t) - 1
        return min(max(k, 0), len(self.fields) - 1)

    def field_at(self, t: float) -> VectorField:
        return self.fields[self._piece(t)]

    def m_profile(self) -> StepFunction:
        """Per-piece max(Lipschitz, sublinearity) bound as a step function."""
        return StepFunction(self.breaks,
                            tuple(max(f.lip_bound, f.sublinear_bound)
                                  for f in self.fields))

    def time_average(self, tau: float, h: float) -> VectorField:
        """(1/h) * integral of the field over [tau, tau + h], exactly.

        Pieces are constant in time, so the average is the convex combination
        with weights equal to overlap fractions.
        """
        if h <= 0:
            raise FieldError("averaging window must have h > 0")
        if tau < self.t0 - 1e-12 or tau + h > self.t1 + 1e-9:
            raise FieldError("averaging window leaves the working interval")
        end = tau + h
        parts: list[tuple[VectorField, float]] = []
        for k, f in enumerate(self.fields):
            lo = max(tau, self.breaks[k])
            hi = min(end, self.breaks[k + 1])
            if hi > lo + 0.0:
                parts.append((f, (hi - lo) / h))
        if len(parts) == 1:
            return parts[0][0]
        fields, weights = zip(*parts)
        w = np.asarray(weights)
        return ConvexCombo(tuple(fields), tuple(w / w.sum()))


def concat_time_fields(pieces: list[tuple[float, float, VectorField]]) -> TimeField:
    """Assemble contiguous (start, end, field) pieces into a TimeField."""
    if not pieces:
        raise FieldError("no pieces to assemble")
    breaks = [pieces[0][0]]
    fields = []
    for lo, hi, f in pieces:
        if abs(lo - breaks[-1]) > 1e-9:
            raise FieldError("pieces must be contiguous")
        breaks.append(hi)
        fields.append(f)
    return TimeField(tuple(breaks), tuple(fields))


def probe_grid(dim: int, radius: float = 3.0, per_axis: int = 5,
               rng=None, extra: int = 32) -> np.ndarray:
    """Deterministic lattice plus optional random probes for bound checks."""
    axes = [np.linspace(-radius, radius, per_axis)] * dim
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    if rng is not None and extra > 0:
        mesh = np.vstack([mesh, rng.uniform(-radius, radius, size=(extra, dim))])
    return mesh
