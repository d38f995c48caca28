import numpy as np
import pytest

import hychain as hc
from hychain.controls import _union_cells


def test_range_effective_box_and_shrink():
    r = hc.ControlRange([0.0], [1.0])
    assert r.lo[0] == -1.0 and r.hi[0] == 1.0
    half = hc.shrink_control_range(r, 0.5)
    assert half.lo[0] == -0.5 and half.hi[0] == 0.5
    same = hc.shrink_control_range(r, 1.0)
    assert same.lo[0] == -1.0 and same.hi[0] == 1.0
    r2 = hc.ControlRange([1.0], [1.0])
    q = hc.shrink_control_range(r2, 0.25)
    assert np.isclose(q.lo[0], 0.75) and np.isclose(q.hi[0], 1.25)


def test_range_validation():
    with pytest.raises(hc.InputRejectedError):
        hc.ControlRange([0.0], [0.0])
    with pytest.raises(hc.InputRejectedError):
        hc.ControlRange([0.0], [1.0], rho=0.0)
    with pytest.raises(hc.InputRejectedError):
        hc.shrink_control_range(hc.ControlRange([0.0], [1.0]), 1.5)


def test_range_vertices_and_contains():
    r = hc.ControlRange([0.0, 0.0], [1.0, 2.0])
    vs = r.vertices()
    assert vs.shape == (4, 2)
    assert r.contains(vs)
    assert not r.contains([0.0, 2.5])
    assert np.isclose(r.diameter, 2 * np.hypot(1.0, 2.0))


def test_control_eval_right_continuous():
    u = hc.ControlFunction.from_steps([0.0, 1.0, 2.0], [[1.0], [2.0]])
    assert u(np.array([0.5]))[0, 0] == 1.0
    assert u(np.array([1.0]))[0, 0] == 2.0      # right-continuous at the switch
    assert u(np.array([-5.0]))[0, 0] == 1.0     # constant extension left
    assert u(np.array([7.0]))[0, 0] == 2.0      # constant extension right


def test_shift_is_exact_relabeling():
    u = hc.ControlFunction.from_steps([0.0, 3.0, 5.0], [[1.0], [2.0]])
    s = hc.shift(u, 2.0)
    assert s.breakpoints[1] == 1.0              # knot at 3 relabeled to 1
    assert hc.functionally_equal(hc.shift(u, 0.0), u)
    # group property and round trip, exactly
    rt = hc.shift(hc.shift(u, 1.0), -1.0)
    assert np.array_equal(rt.breakpoints, u.breakpoints)
    assert rt.offset == u.offset
    ab = hc.shift(hc.shift(u, 0.3), 0.4)
    assert hc.functionally_equal(ab, hc.shift(u, 0.3 + 0.4))


def test_shift_no_value_drift():
    rng = np.random.default_rng(0)
    u = hc.random_piecewise(hc.ControlRange([0.0], [1.0]), (-2.0, 2.0), 0.5, rng)
    v = u
    for t in [0.1, -0.7, 3.0, -2.4]:
        v = hc.shift(v, t)
    v = hc.shift(v, -(0.1 - 0.7 + 3.0 - 2.4))
    assert np.array_equal(v.values, u.values)


def test_convex_combination_endpoints_and_midpoint():
    r = hc.ControlRange([0.5], [0.5])
    u = hc.ControlFunction.constant([0.0], (0.0, 2.0))
    v = hc.ControlFunction.from_steps([0.0, 1.0, 2.0], [[1.0], [1.0]])
    assert hc.functionally_equal(hc.convex_combination(u, v, 0.0), u)
    assert hc.functionally_equal(hc.convex_combination(u, v, 1.0), v)
    mid = hc.convex_combination(u, v, 0.5)
    assert np.allclose(mid(np.array([0.3, 1.7])), 0.5)


def test_convex_combination_sup_norm_bound():
    rng = np.random.default_rng(1)
    r = hc.ControlRange([0.0, 0.0], [1.0, 1.0])
    u = hc.random_piecewise(r, (0.0, 4.0), 0.5, rng)
    v = hc.random_piecewise(r, (0.0, 4.0), 0.5, rng)
    for t1, t2 in [(0.0, 0.3), (0.3, 0.7), (0.2, 1.0)]:
        wa = hc.convex_combination(u, v, t1)
        wb = hc.convex_combination(u, v, t2)
        assert hc.sup_norm_distance(wa, wb) <= abs(t2 - t1) * r.diameter + 1e-12


def test_sup_norm_distance_exact():
    u = hc.ControlFunction.from_steps([0.0, 1.0], [[1.0, 0.0]])
    v = hc.ControlFunction.from_steps([0.5, 1.5], [[0.0, 1.0]])
    assert np.isclose(hc.sup_norm_distance(u, v), np.sqrt(2.0))


def test_union_cells_cover_both_windows():
    u = hc.ControlFunction.from_steps([0.0, 1.0], [[1.0]])
    v = hc.ControlFunction.from_steps([-1.0, 2.0], [[0.0]])
    edges, mids = _union_cells(u, v)
    assert edges[0] == -1.0 and edges[-1] == 2.0


def test_random_piecewise_in_range_and_aligned():
    rng = np.random.default_rng(2)
    r = hc.ControlRange([0.0], [1.0], rho=0.5)
    u = hc.random_piecewise(r, (-3.0, 3.0), 0.25, rng)
    assert r.contains(u.values)
    assert np.allclose(np.diff(u.breakpoints), 0.25)


def test_control_validation():
    with pytest.raises(hc.InputRejectedError):
        hc.ControlFunction(np.array([0.0, 0.0]), np.array([[1.0]]))
    with pytest.raises(hc.InputRejectedError):
        hc.ControlFunction(np.array([0.0, 1.0]), np.array([[1.0], [2.0]]))
