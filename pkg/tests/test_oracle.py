import numpy as np
import pytest

from wviab.measures import DiscreteMeasure, dirac
from wviab.oracle import (certify_plan, loglog_slope, w1_1d_quantile,
                          w1_permutation)
from wviab.transport import TransportPlan, w1_exact

from conftest import random_measure


def test_quantile_diracs():
    assert w1_1d_quantile(dirac([0.0]), dirac([1.0])) == 1.0


def test_quantile_two_atom_matching():
    mu = DiscreteMeasure([[0.0], [2.0]], [0.5, 0.5])
    nu = DiscreteMeasure([[1.0], [3.0]], [0.5, 0.5])
    # sorted matching 0->1, 2->3
    assert abs(w1_1d_quantile(mu, nu) - 1.0) <= 1e-12


def test_quantile_dimension_guard():
    with pytest.raises(ValueError):
        w1_1d_quantile(dirac([0.0, 0.0]), dirac([1.0, 1.0]))


def test_quantile_agrees_with_solver(rng):
    for _ in range(200):
        mu = random_measure(rng, int(rng.integers(1, 20)), 1)
        nu = random_measure(rng, int(rng.integers(1, 20)), 1)
        assert abs(w1_exact(mu, nu)[0] - w1_1d_quantile(mu, nu)) <= 1e-8


def test_permutation_single_atom():
    assert abs(w1_permutation(dirac([1.0, 1.0]), dirac([4.0, 5.0])) - 5.0) < 1e-12


def test_permutation_matches_solver(rng):
    for _ in range(100):
        n = int(rng.integers(1, 7))
        d = int(rng.integers(1, 4))
        mu = DiscreteMeasure(rng.normal(size=(n, d)), np.full(n, 1.0 / n))
        nu = DiscreteMeasure(rng.normal(size=(n, d)), np.full(n, 1.0 / n))
        assert abs(w1_exact(mu, nu)[0] - w1_permutation(mu, nu)) <= 1e-9


def test_permutation_preconditions(rng):
    mu = DiscreteMeasure(rng.normal(size=(7, 1)), np.full(7, 1.0 / 7))
    with pytest.raises(ValueError):
        w1_permutation(mu, mu)
    uneven = DiscreteMeasure([[0.0], [1.0]], [0.3, 0.7])
    with pytest.raises(ValueError):
        w1_permutation(uneven, uneven)


def test_certificate_on_optimal_plans(rng):
    for _ in range(25):
        mu = random_measure(rng, int(rng.integers(2, 10)), 2)
        nu = random_measure(rng, int(rng.integers(2, 10)), 2)
        _, plan = w1_exact(mu, nu)
        cert = certify_plan(mu, nu, plan)
        assert cert.max_violation <= 1e-8


def test_certificate_flags_swapped_assignment():
    mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    nu = DiscreteMeasure([[0.1], [1.1]], [0.5, 0.5])
    bad = TransportPlan(mu, nu, np.array([0, 1]), np.array([1, 0]),
                        np.array([0.5, 0.5]), 1.0)
    assert certify_plan(mu, nu, bad).max_violation > 1e-3


def test_certificate_dirac_pair():
    mu, nu = dirac([0.0]), dirac([3.0])
    _, plan = w1_exact(mu, nu)
    cert = certify_plan(mu, nu, plan)
    assert cert.complete and cert.max_violation == 0.0


def test_certificate_partial_on_disconnected_support():
    # block-diagonal plan: two components, potentials per component
    mu = DiscreteMeasure([[0.0], [10.0]], [0.5, 0.5])
    nu = DiscreteMeasure([[1.0], [11.0]], [0.5, 0.5])
    _, plan = w1_exact(mu, nu)
    cert = certify_plan(mu, nu, plan)
    assert not cert.complete
    assert cert.max_violation <= 1e-8  # still feasible per component


def test_loglog_slope_powers():
    hs = [0.1 * 2.0 ** -k for k in range(5)]
    assert abs(loglog_slope([(h, h * h) for h in hs]) - 2.0) <= 1e-9
    assert abs(loglog_slope([(h, h) for h in hs]) - 1.0) <= 1e-9


def test_loglog_slope_guards():
    with pytest.raises(ValueError):
        loglog_slope([(0.1, 1.0), (0.05, 0.5)])
    with pytest.raises(ValueError):
        loglog_slope([(0.1, 1.0), (0.05, 0.5), (0.025, -0.1)])
