import numpy as np
import pytest

from wviab.fields import (Affine, Constant, ConvexCombo, FieldError,
                          SaturatedRadial, TimeField, convex_combine,
                          d_sup_probe, probe_grid, probe_lipschitz,
                          probe_sublinearity, zero_field)


def test_eval_affine_identity():
    f = Affine(np.eye(2), np.zeros(2))
    x = np.array([1.5, -2.0])
    assert np.allclose(f(x), x)


def test_eval_constant():
    c = Constant(np.array([2.0, -1.0]))
    assert np.allclose(c(np.array([9.0, 9.0])), [2.0, -1.0])
    assert np.allclose(c(np.zeros((4, 2)))[3], [2.0, -1.0])


def test_eval_combo_matches_direct_average(rng):
    f = Affine(rng.normal(size=(2, 2)), rng.normal(size=2))
    g = SaturatedRadial(1.3, 0.8, 2)
    combo = convex_combine([f, g], [0.5, 0.5])
    pts = rng.normal(size=(40, 2))
    assert np.max(np.abs(combo(pts) - 0.5 * (f(pts) + g(pts)))) <= 1e-12


def test_combo_weighted_sum_invariant(rng):
    fields = [Affine(rng.normal(size=(2, 2)), rng.normal(size=2))
              for _ in range(3)]
    lam = np.array([0.2, 0.3, 0.5])
    combo = convex_combine(fields, lam)
    pts = rng.normal(size=(25, 2))
    direct = sum(l * f(pts) for l, f in zip(lam, fields))
    assert np.max(np.abs(combo(pts) - direct)) <= 1e-12


def test_dimension_guard():
    f = Affine(np.eye(2), np.zeros(2))
    with pytest.raises(FieldError):
        f(np.array([1.0]))


def test_convex_combine_validation():
    f = Constant(np.array([1.0]))
    with pytest.raises(FieldError):
        convex_combine([f, f], [0.6, 0.6])
    with pytest.raises(FieldError):
        convex_combine([f, f], [-0.1, 1.1])


def test_convex_combine_unit_vector_and_idempotence(rng):
    f = Affine(rng.normal(size=(2, 2)), rng.normal(size=2))
    g = Constant(rng.normal(size=2))
    pts = rng.normal(size=(30, 2))
    e1 = convex_combine([f, g], [1.0, 0.0])
    assert np.max(np.abs(e1(pts) - f(pts))) <= 1e-12
    same = convex_combine([f, f], [0.5, 0.5])
    assert np.max(np.abs(same(pts) - f(pts))) <= 1e-12


def test_bound_metadata_dominates_probes(rng):
    fields = [
        Affine(rng.normal(size=(2, 2)), rng.normal(size=2)),
        Constant(rng.normal(size=2)),
        SaturatedRadial(2.0, 0.5, 2),
        convex_combine([SaturatedRadial(1.0, 1.0, 2),
                        Affine(0.3 * np.eye(2), np.ones(2))], [0.25, 0.75]),
    ]
    probes = probe_grid(2, radius=4.0, rng=rng, extra=64)
    pairs = rng.normal(size=(200, 2)) * 3.0
    for f in fields:
        assert probe_lipschitz(f, pairs) <= f.lip_bound + 1e-9
        assert probe_sublinearity(f, probes) <= f.sublinear_bound + 1e-9


def test_combo_lipschitz_probe_bound(rng):
    f = Affine(rng.normal(size=(2, 2)), np.zeros(2))
    g = SaturatedRadial(1.5, 0.7, 2)
    lam = [0.3, 0.7]
    combo = convex_combine([f, g], lam)
    pairs = rng.normal(size=(200, 2)) * 3.0
    budget = lam[0] * f.lip_bound + lam[1] * g.lip_bound
    assert probe_lipschitz(combo, pairs) <= budget + 1e-9


def test_d_sup_probe(rng):
    probes = rng.normal(size=(50, 2))
    f = Constant(np.array([3.0, 4.0]))
    z = zero_field(2)
    assert d_sup_probe(f, f, probes) == 0.0
    assert abs(d_sup_probe(f, z, probes) - 5.0) <= 1e-12
    # affine pair: closed-form max over the probe grid
    a = Affine(np.array([[1.0, 0.0], [0.0, -1.0]]), np.zeros(2))
    b = Affine(np.array([[0.0, 1.0], [1.0, 0.0]]), np.ones(2))
    direct = max(np.linalg.norm(a(p) - b(p)) for p in probes)
    assert abs(d_sup_probe(a, b, probes) - direct) <= 1e-12
    with pytest.raises(FieldError):
        d_sup_probe(f, z, np.empty((0, 2)))


def test_d_sup_probe_triangle(rng):
    probes = rng.normal(size=(30, 2))
    f = Affine(rng.normal(size=(2, 2)), rng.normal(size=2))
    g = SaturatedRadial(1.0, 1.0, 2)
    h = Constant(rng.normal(size=2))
    assert d_sup_probe(f, g, probes) <= \
        d_sup_probe(f, h, probes) + d_sup_probe(h, g, probes) + 1e-12


def test_time_field_lookup_and_average():
    f, g = Constant(np.array([1.0])), Constant(np.array([3.0]))
    tf = TimeField((0.0, 1.0, 2.0), (f, g))
    assert tf.field_at(0.5) is f
    assert tf.field_at(1.0) is g
    assert tf.field_at(2.0) is g

    const = TimeField.constant(f, 0.0, 1.0)
    assert const.time_average(0.2, 0.5) is f

    halves = tf.time_average(0.5, 1.0)
    assert isinstance(halves, ConvexCombo)
    assert np.allclose(halves.weights, [0.5, 0.5])


def test_time_average_quarter_three_quarter_weights():
    f, g = Constant(np.array([2.0])), Constant(np.array([-2.0]))
    tf = TimeField((0.0, 1.0, 4.0), (f, g))
    avg = tf.time_average(0.0, 4.0)
    assert np.allclose(avg.weights, [0.25, 0.75])
    # direct quadrature on probes
    ts = np.linspace(0.0, 4.0, 4001)
    vals = np.array([tf.field_at(min(t, 3.999))(np.array([0.7]))[0] for t in ts])
    quad = np.trapezoid(vals, ts) / 4.0
    assert abs(avg(np.array([0.7]))[0] - quad) <= 1e-3


def test_time_average_refinement_invariance():
    f = Affine(np.array([[0.4]]), np.array([0.1]))
    coarse = TimeField((0.0, 1.0), (f,))
    fine = TimeField((0.0, 0.37, 1.0), (f, f))
    x = np.array([1.234])
    a1 = coarse.time_average(0.1, 0.8)(x)
    a2 = fine.time_average(0.1, 0.8)(x)
    assert np.max(np.abs(a1 - a2)) <= 1e-15


def test_time_average_guards():
    tf = TimeField.constant(Constant(np.array([1.0])), 0.0, 1.0)
    with pytest.raises(FieldError):
        tf.time_average(0.5, 0.0)
    with pytest.raises(FieldError):
        tf.time_average(0.5, 1.0)


def test_saturated_radial_needs_positive_scale():
    with pytest.raises(FieldError):
        SaturatedRadial(1.0, 0.0, 2)
