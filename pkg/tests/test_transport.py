import numpy as np
import pytest

from wviab.fields import Affine
from wviab.measures import DiscreteMeasure, dirac, first_moment, pushforward
from wviab.oracle import certify_plan, w1_1d_quantile
from wviab.transport import (TransportError, dist_to_finite_set,
                             glue_combine, identity_plan, interpolate,
                             w1_exact)

from conftest import random_measure


def test_two_diracs():
    cost, plan = w1_exact(dirac([0.0]), dirac([1.0]))
    assert cost == 1.0
    assert len(plan.mass) == 1 and plan.mass[0] == 1.0


def test_split_to_dirac_unique_coupling():
    # the only feasible coupling sends each half atom to the target
    mu = DiscreteMeasure([[0.0], [2.0]], [0.5, 0.5])
    cost, plan = w1_exact(mu, dirac([1.0]))
    assert abs(cost - 1.0) <= 1e-12
    assert np.allclose(sorted(plan.mass), [0.5, 0.5])


def test_dimension_mismatch():
    with pytest.raises(TransportError):
        w1_exact(dirac([0.0]), dirac([0.0, 0.0]))


def test_plan_invariants(rng):
    mu = random_measure(rng, 12, 2)
    nu = random_measure(rng, 9, 2)
    cost, plan = w1_exact(mu, nu)
    assert np.max(np.abs(plan.row_sums() - mu.weights)) <= 1e-9
    assert np.max(np.abs(plan.col_sums() - nu.weights)) <= 1e-9
    assert abs(plan.recompute_cost() - cost) <= 1e-9
    assert np.all(plan.mass >= 0)


def test_symmetry_and_triangle(rng):
    for _ in range(25):
        mu = random_measure(rng, 6, 2)
        nu = random_measure(rng, 5, 2)
        sig = random_measure(rng, 7, 2)
        ab = w1_exact(mu, nu)[0]
        assert abs(ab - w1_exact(nu, mu)[0]) <= 1e-9
        assert w1_exact(mu, sig)[0] <= ab + w1_exact(nu, sig)[0] + 1e-9


def test_pushforward_displacement_bound(rng):
    # W1(xi# mu, zeta# mu) <= sum_i w_i |xi(x_i) - zeta(x_i)|
    for _ in range(25):
        mu = random_measure(rng, 8, 2)
        xi = Affine(rng.normal(size=(2, 2)) * 0.4, rng.normal(size=2))
        zeta = Affine(rng.normal(size=(2, 2)) * 0.4, rng.normal(size=2))
        lhs = w1_exact(pushforward(mu, xi), pushforward(mu, zeta))[0]
        rhs = float(np.dot(mu.weights,
                           np.linalg.norm(xi(np.asarray(mu.points))
                                          - zeta(np.asarray(mu.points)), axis=1)))
        assert lhs <= rhs + 1e-9


def test_lipschitz_pushforward_contraction(rng):
    for _ in range(25):
        mu = random_measure(rng, 7, 2)
        nu = random_measure(rng, 6, 2)
        phi = Affine(rng.normal(size=(2, 2)) * 0.5, rng.normal(size=2))
        lhs = w1_exact(pushforward(mu, phi), pushforward(nu, phi))[0]
        assert lhs <= phi.lip_bound * w1_exact(mu, nu)[0] + 1e-9


def test_dual_pairing_bound(rng):
    # |int phi d(mu - nu)| <= Lip(phi) W1(mu, nu)
    for _ in range(25):
        mu = random_measure(rng, 8, 2)
        nu = random_measure(rng, 5, 2)
        phi = Affine(rng.normal(size=(2, 2)) * 0.6, rng.normal(size=2))
        pairing = (mu.weights @ phi(np.asarray(mu.points))
                   - nu.weights @ phi(np.asarray(nu.points)))
        assert np.linalg.norm(pairing) <= \
            phi.lip_bound * w1_exact(mu, nu)[0] + 1e-9


def test_quantile_cross_check(rng):
    for _ in range(50):
        mu = random_measure(rng, int(rng.integers(1, 64)), 1)
        nu = random_measure(rng, int(rng.integers(1, 64)), 1)
        assert abs(w1_exact(mu, nu)[0] - w1_1d_quantile(mu, nu)) <= 1e-8


def test_returned_plans_certified(rng):
    for _ in range(20):
        mu = random_measure(rng, int(rng.integers(2, 12)), 2)
        nu = random_measure(rng, int(rng.integers(2, 12)), 2)
        _, plan = w1_exact(mu, nu)
        assert certify_plan(mu, nu, plan).max_violation <= 1e-8


def test_dist_to_finite_set(rng):
    mu = random_measure(rng, 6, 1)
    cands = [random_measure(rng, 5, 1) for _ in range(10)]
    cands.insert(3, mu)
    val, idx = dist_to_finite_set(mu, cands)
    assert val <= 1e-12 and idx == 3

    val, idx = dist_to_finite_set(dirac([0.0]), [dirac([1.0]), dirac([3.0])])
    assert val == 1.0 and idx == 0

    exhaustive = [w1_exact(mu, c)[0] for c in cands]
    val, idx = dist_to_finite_set(mu, cands)
    assert abs(val - min(exhaustive)) <= 1e-12
    with pytest.raises(TransportError):
        dist_to_finite_set(mu, [])


def test_interpolate_endpoints_and_midpoint(rng):
    mu = random_measure(rng, 6, 2)
    nu = random_measure(rng, 5, 2)
    _, plan = w1_exact(mu, nu)
    assert w1_exact(interpolate(plan, 0.0), mu)[0] <= 1e-10
    assert w1_exact(interpolate(plan, 1.0), nu)[0] <= 1e-10
    _, dplan = w1_exact(dirac([0.0]), dirac([2.0]))
    mid = interpolate(dplan, 0.5)
    assert np.allclose(mid.points, [[1.0]])
    with pytest.raises(TransportError):
        interpolate(plan, 1.5)


def test_interpolate_is_geodesic(rng):
    mu = random_measure(rng, 6, 2)
    nu = random_measure(rng, 6, 2)
    cost, plan = w1_exact(mu, nu)
    for s, t in [(0.0, 1.0), (0.2, 0.7), (0.5, 0.55)]:
        gap = w1_exact(interpolate(plan, s), interpolate(plan, t))[0]
        assert gap <= abs(s - t) * cost + 1e-9


def test_glue_single_atoms():
    a, b, c = dirac([1.0]), dirac([4.0]), dirac([6.0])
    alpha = w1_exact(a, b)[1]
    beta = w1_exact(b, c)[1]
    out = glue_combine(alpha, beta)
    # x + z - y = 1 + 6 - 4
    assert np.allclose(out.points, [[3.0]]) and out.weights[0] == 1.0


def test_glue_identity_left(rng):
    m = random_measure(rng, 5, 1)
    sig = random_measure(rng, 4, 1)
    beta = w1_exact(m, sig)[1]
    out = glue_combine(identity_plan(m), beta)
    assert w1_exact(out, sig)[0] <= 1e-10


def test_glue_mass_split_against_triple_sum():
    mu = DiscreteMeasure([[0.0]], [1.0])
    mid = DiscreteMeasure([[-1.0], [2.0]], [0.5, 0.5])
    sig = DiscreteMeasure([[-2.0], [3.0]], [0.5, 0.5])
    alpha = w1_exact(mu, mid)[1]
    beta = w1_exact(mid, sig)[1]
    out = glue_combine(alpha, beta)
    assert abs(out.weights.sum() - 1.0) <= 1e-12

    # explicit triple-sum oracle over eta(x,y,z) = alpha(x,y) beta(y,z)/m(y)
    a = np.zeros((1, 2))
    for i, j, m in zip(alpha.source_idx, alpha.target_idx, alpha.mass):
        a[i, j] += m
    b = np.zeros((2, 2))
    for j, k, m in zip(beta.source_idx, beta.target_idx, beta.mass):
        b[j, k] += m
    total, moment = 0.0, 0.0
    for i in range(1):
        for j in range(2):
            for k in range(2):
                w = a[i, j] * b[j, k] / mid.weights[j] if mid.weights[j] else 0.0
                pos = mu.points[i, 0] + sig.points[k, 0] - mid.points[j, 0]
                total += w
                moment += w * abs(pos)
    assert abs(total - 1.0) <= 1e-12
    assert abs(first_moment(out) - moment) <= 1e-12


def test_glue_middle_mismatch():
    a, b, c = dirac([1.0]), dirac([4.0]), dirac([6.0])
    alpha = w1_exact(a, b)[1]
    beta = w1_exact(dirac([4.1]), c)[1]
    with pytest.raises(TransportError):
        glue_combine(alpha, beta)


def test_plan_csv():
    _, plan = w1_exact(dirac([0.0]), dirac([1.0]))
    assert plan.to_csv().splitlines()[0] == "i,j,mass"
