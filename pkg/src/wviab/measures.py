"""Discrete probability measures on R^d.

A measure is a weighted particle cloud: finitely many atoms with strictly
positive weights summing to one.  Atom order is part of the value and is never
changed by any operation here; coupling code downstream relies on stable atom
indices.
"""

from __future__ import annotations

import io
from typing import Callable

import numpy as np

WEIGHT_SUM_TOL = 1e-12
# constructor silently renormalizes drift up to this, rejects beyond
WEIGHT_DRIFT_TOL = 1e-9


class MeasureError(ValueError):
    """Invalid measure construction or operation."""


class DiscreteMeasure:
    """Finitely supported probability measure with positive atom weights."""

    __slots__ = ("points", "weights")

    def __init__(self, points, weights):
        pts = np.array(points, dtype=float)
        w = np.array(weights, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise MeasureError("points must be a nonempty (n, d) array")
        if w.ndim != 1 or w.shape[0] != pts.shape[0]:
            raise MeasureError("weights must match the number of atoms")
        if not np.all(np.isfinite(pts)):
            raise MeasureError("atom coordinates must be finite")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise MeasureError("weights must be finite and strictly positive")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_DRIFT_TOL:
            raise MeasureError(
                f"weights sum to {total!r}; drift exceeds {WEIGHT_DRIFT_TOL}")
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            w = w / total
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteMeasure is immutable")

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __repr__(self):
        return f"DiscreteMeasure(n={self.n_atoms}, d={self.dim})"

    def allclose(self, other: "DiscreteMeasure", tol: float = 1e-12) -> bool:
        """Atom-by-atom equality (same order), within tol."""
        return (self.n_atoms == other.n_atoms and self.dim == other.dim
                and np.allclose(self.points, other.points, atol=tol, rtol=0.0)
                and np.allclose(self.weights, other.weights, atol=tol, rtol=0.0))


def dirac(x) -> DiscreteMeasure:
    return DiscreteMeasure([np.atleast_1d(np.asarray(x, dtype=float))], [1.0])


def first_moment(mu: DiscreteMeasure) -> float:
    """Weighted mean Euclidean norm of the atoms."""
    return float(np.dot(mu.weights, np.linalg.norm(mu.points, axis=1)))


def barycenter(mu: DiscreteMeasure) -> np.ndarray:
    return mu.weights @ mu.points


def pushforward(mu: DiscreteMeasure,
                f: Callable[[np.ndarray], np.ndarray]) -> DiscreteMeasure:
    """Image measure under a point map.

    The map receives the full (n, d) atom array and must return the mapped
    (n, d) array.  Weights carry over unchanged; coincident images are kept
    as distinct atoms.
    """
    imgs = np.asarray(f(np.array(mu.points)), dtype=float)
    if imgs.shape != mu.points.shape:
        raise MeasureError(f"point map returned shape {imgs.shape}, "
                           f"expected {mu.points.shape}")
    if not np.all(np.isfinite(imgs)):
        raise MeasureError("point map produced non-finite coordinates")
    return DiscreteMeasure(imgs, mu.weights)


def translate(mu: DiscreteMeasure, c) -> DiscreteMeasure:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return pushforward(mu, lambda pts: pts + c)


def scale(mu: DiscreteMeasure, factor: float) -> DiscreteMeasure:
    return pushforward(mu, lambda pts: factor * pts)


class MeasureStats:
    """The two statistics velocity generators may read from a measure.

    Both are 1-Lipschitz as maps (P_1, W_1) -> R^d resp. R, which is what
    keeps measure-coupled generators inside the declared Lipschitz budget.
    """

    __slots__ = ("barycenter", "first_moment")

    def __init__(self, bary: np.ndarray, m1: float):
        self.barycenter = np.asarray(bary, dtype=float)
        self.first_moment = float(m1)

    @classmethod
    def of(cls, mu: DiscreteMeasure) -> "MeasureStats":
        return cls(barycenter(mu), first_moment(mu))

    @classmethod
    def of_arrays(cls, points: np.ndarray, weights: np.ndarray) -> "MeasureStats":
        return cls(weights @ points,
                   float(np.dot(weights, np.linalg.norm(points, axis=1))))

    def shifted(self, bary_shift=None, m1_shift: float = 0.0) -> "MeasureStats":
        b = self.barycenter if bary_shift is None else self.barycenter + bary_shift
        return MeasureStats(b, max(self.first_moment + m1_shift, 0.0))


# --- CSV serialization: header `w,x1,...,xd`, one atom per row -------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def to_csv(mu: DiscreteMeasure) -> str:
    header = "w," + ",".join(f"x{i + 1}" for i in range(mu.dim))
    lines = [header]
    for w, p in zip(mu.weights, mu.points):
        lines.append(",".join([_fmt(w)] + [_fmt(c) for c in p]))
    return "\n".join(lines) + "\n"


def from_csv(text: str) -> DiscreteMeasure:
    rows = [ln.strip() for ln in io.StringIO(text) if ln.strip()]
    if not rows:
        raise MeasureError("empty measure CSV")
    header = rows[0].split(",")
    if header[0] != "w" or any(h != f"x{i + 1}" for i, h in enumerate(header[1:])):
        raise MeasureError(f"bad measure CSV header: {rows[0]!r}")
    d = len(header) - 1
    weights, points = [], []
    for ln in rows[1:]:
        cells = ln.split(",")
        if len(cells) != d + 1:
            raise MeasureError(f"measure CSV row has {len(cells)} cells, expected {d + 1}")
        weights.append(float(cells[0]))
        points.append([float(c) for c in cells[1:]])
    return DiscreteMeasure(points, weights)


def save_csv(mu: DiscreteMeasure, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_csv(mu))


def load_csv(path) -> DiscreteMeasure:
    with open(path) as fh:
        return from_csv(fh.read())
