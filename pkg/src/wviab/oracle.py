"""Independent brute-force references for the transport solver.

Everything here is deliberately naive: sorting, full enumeration, graph
traversal.  These routines never call the production solver, so agreement
between the two is meaningful evidence.  They are intended for tests and the
``verify`` CLI path, not for production-size inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .measures import DiscreteMeasure


def w1_1d_quantile(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Exact 1D cost via quantile matching of the sorted atoms."""
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError("quantile oracle requires dimension 1")
    ia = np.argsort(mu.points[:, 0], kind="stable")
    ib = np.argsort(nu.points[:, 0], kind="stable")
    xa, wa = mu.points[ia, 0], mu.weights[ia]
    xb, wb = nu.points[ib, 0], nu.weights[ib]
    i = j = 0
    ra, rb = wa[0], wb[0]
    cost = 0.0
    while True:
        m = min(ra, rb)
        cost += m * abs(xa[i] - xb[j])
        ra -= m
        rb -= m
        if ra <= 1e-17:
            i += 1
            if i == len(xa):
                break
            ra = wa[i]
        if rb <= 1e-17:
            j += 1
            if j == len(xb):
                break
            rb = wb[j]
    return cost


def w1_permutation(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Min over all assignments; uniform weights, equal counts, n <= 6 only."""
    n = mu.n_atoms
    if n != nu.n_atoms:
        raise ValueError("permutation oracle requires equal atom counts")
    if n > 6:
        raise ValueError("permutation oracle limited to n <= 6")
    uniform = np.full(n, 1.0 / n)
    if (not np.allclose(mu.weights, uniform, atol=1e-12)
            or not np.allclose(nu.weights, uniform, atol=1e-12)):
        raise ValueError("permutation oracle requires uniform weights")
    best = math.inf
    for perm in permutations(range(n)):
        cost = sum(np.linalg.norm(mu.points[i] - nu.points[p])
                   for i, p in enumerate(perm)) / n
        best = min(best, cost)
    return best


@dataclass
class Certificate:
    """Dual potentials recovered from a plan's support graph.

    ``max_violation`` aggregates the worst feasibility excess
    u_i + v_j - |x_i - y_j| over all pairs and the worst tightness gap on
    support pairs.  ``complete`` is False when the support graph is
    disconnected (potentials only determined per component).
    """

    u: np.ndarray
    v: np.ndarray
    max_violation: float
    complete: bool

    def ok(self, tol: float = 1e-8) -> bool:
        return self.complete and self.max_violation <= tol


def certify_plan(mu: DiscreteMeasure, nu: DiscreteMeasure, plan,
                 support_tol: float = 1e-12) -> Certificate:
    """Check a feasible plan for optimality by complementary slackness.

    Potentials are propagated along a BFS forest of the support graph with
    u_i + v_j = c_ij forced on tree edges; an optimal plan admits such
    potentials that are also feasible on every pair.
    """
    n, m = mu.n_atoms, nu.n_atoms
    C = np.linalg.norm(mu.points[:, None, :] - nu.points[None, :, :], axis=2)
    gamma = np.zeros((n, m))
    for i, j, mass in zip(plan.source_idx, plan.target_idx, plan.mass):
        gamma[i, j] += mass
    support = gamma > support_tol

    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    complete = True
    for start in range(n):
        if not np.isnan(u[start]):
            continue
        if start > 0:
            complete = False
        u[start] = 0.0
        queue = [("u", start)]
        while queue:
            side, k = queue.pop()
            if side == "u":
                for j in np.nonzero(support[k])[0]:
                    if np.isnan(v[j]):
                        v[j] = C[k, j] - u[k]
                        queue.append(("v", j))
            else:
                for i in np.nonzero(support[:, k])[0]:
                    if np.isnan(u[i]):
                        u[i] = C[i, k] - v[k]
                        queue.append(("u", i))
    if np.isnan(v).any():
        complete = False
        v = np.where(np.isnan(v), 0.0, v)
    u = np.where(np.isnan(u), 0.0, u)

    feas_excess = float(np.max(u[:, None] + v[None, :] - C))
    if support.any():
        tight_gap = float(np.max(np.abs((u[:, None] + v[None, :] - C)[support])))
    else:
        tight_gap = 0.0
    return Certificate(u=u, v=v,
                       max_violation=max(feas_excess, tight_gap),
                       complete=complete)


def loglog_slope(pairs) -> float:
    """Least-squares slope of log(value) against log(h)."""
    pts = [(float(h), float(val)) for h, val in pairs]
    if len(pts) < 3:
        raise ValueError("need at least 3 points for a slope estimate")
    if any(h <= 0 or val <= 0 for h, val in pts):
        raise ValueError("log-log slope requires positive pairs")
    logs = np.log(np.array(pts))
    A = np.stack([logs[:, 0], np.ones(len(pts))], axis=1)
    slope, _ = np.linalg.lstsq(A, logs[:, 1], rcond=None)[0]
    return float(slope)
