import numpy as np
import pytest

import hychain as hc
from hychain.metric import TestFunctionFamily


def test_family_enumeration_starts_at_unit_box(family1):
    a, b = family1.supports[0]
    assert (a, b) == (0.0, 1.0) and family1.directions[0] == 0
    assert np.isclose(family1.l1_norms[0], 1.0)


def test_du_identical_is_zero(family1):
    u = hc.ControlFunction.from_steps([0.0, 1.0, 2.0], [[0.3], [0.5]])
    assert hc.du_distance(u, u, family1, 8) == 0.0


def test_du_equal_ae_different_representation(family1):
    u = hc.ControlFunction.constant([0.0], (0.0, 1.0))
    v = hc.ControlFunction.from_steps([-3.0, 0.5, 4.0], [[0.0], [0.0]])
    assert hc.du_distance(u, v, family1, 8) == 0.0


def test_du_single_term_hand_value(family1):
    # first member is 1_[0,1): s_1 = 1, term = (1/2) * 1/(1+1) = 0.25
    u = hc.ControlFunction.constant([1.0], (0.0, 1.0))
    v = hc.ControlFunction.constant([0.0], (0.0, 1.0))
    assert np.isclose(hc.du_distance(u, v, family1, 1), 0.25)


def test_du_bounded_below_one(family1):
    u = hc.ControlFunction.constant([1.0], (-8.0, 8.0))
    v = hc.ControlFunction.constant([-1.0], (-8.0, 8.0))
    d = hc.du_distance(u, v, family1, len(family1))
    assert 0.0 < d < 1.0


def test_du_symmetry_and_triangle(family1):
    rng = np.random.default_rng(0)
    r = hc.ControlRange([0.0], [1.0])
    for _ in range(20):
        u = hc.random_piecewise(r, (-2.0, 2.0), 0.5, rng)
        v = hc.random_piecewise(r, (-2.0, 2.0), 0.5, rng)
        w = hc.random_piecewise(r, (-2.0, 2.0), 0.5, rng)
        duv = hc.du_distance(u, v, family1, 16)
        assert duv == hc.du_distance(v, u, family1, 16)
        assert duv <= hc.du_distance(u, w, family1, 16) \
            + hc.du_distance(w, v, family1, 16) + 1e-12


def test_du_truncation_monotone(family1):
    rng = np.random.default_rng(1)
    r = hc.ControlRange([0.0], [1.0])
    u = hc.random_piecewise(r, (-2.0, 2.0), 0.5, rng)
    v = hc.random_piecewise(r, (-2.0, 2.0), 0.5, rng)
    vals = [hc.du_distance(u, v, family1, N) for N in (4, 8, 16, 32)]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
    # increase never exceeds the reported tail bound of the smaller N
    for N, (a, b) in zip((4, 8, 16), zip(vals, vals[1:])):
        assert b - a <= 2.0 ** (-N) + 1e-15


def test_tail_N_examples():
    assert hc.tail_N_for_epsilon(0.1) == 5
    assert hc.tail_N_for_epsilon(0.5) == 3
    assert hc.tail_N_for_epsilon(1 - 1e-9) == 2
    with pytest.raises(hc.InputRejectedError):
        hc.tail_N_for_epsilon(1.0)
    with pytest.raises(hc.InputRejectedError):
        hc.tail_N_for_epsilon(0.0)


def test_delta_formula_instances():
    # synthetic family with max L1 norm 2 among the first N(0.1) = 5 members
    sup = np.array([[0.0, 2.0]] * 6)
    fam2 = TestFunctionFamily(1, 8.0, sup, np.zeros(6, dtype=int),
                              sup[:, 1] - sup[:, 0])
    assert np.isclose(hc.delta_for_epsilon(0.1, fam2), 0.025)
    sup1 = np.array([[0.0, 1.0]] * 6)
    fam1 = TestFunctionFamily(1, 8.0, sup1, np.zeros(6, dtype=int),
                              sup1[:, 1] - sup1[:, 0])
    assert np.isclose(hc.delta_for_epsilon(0.1, fam1), 0.05)
    # doubling c(eps) halves delta
    assert np.isclose(hc.delta_for_epsilon(0.1, fam1) / 2,
                      hc.delta_for_epsilon(0.1, fam2))


def test_sup_shift_single_sample_equals_du(family1):
    rng = np.random.default_rng(2)
    r = hc.ControlRange([0.0], [1.0])
    u = hc.random_piecewise(r, (-2.0, 2.0), 0.5, rng)
    v = hc.random_piecewise(r, (-2.0, 2.0), 0.5, rng)
    d0 = hc.sup_shift_distance(u, v, family1, 8, [0.0])
    assert d0 == hc.du_distance(u, v, family1, 8)
    assert hc.sup_shift_distance(u, u, family1, 8, [-2.0, 0.0, 3.0]) == 0.0


def test_shift_bound_property(family1):
    """Pairs within delta(eps) in sup norm stay below eps at every shift."""
    rng = np.random.default_rng(3)
    r = hc.ControlRange([0.0], [1.0])
    t_grid = np.linspace(-6.0, 6.0, 13)
    for eps in (0.5, 0.1, 0.02):
        delta = hc.delta_for_epsilon(eps, family1)
        N = hc.tail_N_for_epsilon(eps)
        for _ in range(25):
            u = hc.random_piecewise(r, (-4.0, 4.0), 0.5, rng)
            bump = rng.uniform(-1, 1, size=u.values.shape)
            bump *= 0.98 * delta / np.max(np.abs(bump))
            v = hc.ControlFunction(u.knots, np.clip(u.values + bump, r.lo, r.hi),
                                   u.offset)
            assert hc.sup_norm_distance(u, v) < delta
            assert hc.sup_shift_distance(u, v, family1, N, t_grid) < eps


def test_du_dimension_mismatch(family1):
    u2 = hc.ControlFunction.constant([0.0, 0.0])
    with pytest.raises(hc.InputRejectedError):
        hc.du_distance(u2, u2, family1, 4)
