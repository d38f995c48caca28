import numpy as np
import pytest

import hychain as hc

from conftest import bounded_orbit_point


def test_transport_identity(saddle_sys, saddle_Q):
    u = hc.ControlFunction.constant([0.0, 0.0])
    y = hc.fiber_transport(saddle_sys, saddle_Q, u, u, [0.0, 0.0], window_K=16,
                           step=1e-2)
    assert np.linalg.norm(y) < 1e-12


def test_transport_to_constant_control(saddle_sys, saddle_Q):
    u = hc.ControlFunction.constant([0.0, 0.0])
    v = hc.ControlFunction.constant([1.0, 1.0])
    y = hc.fiber_transport(saddle_sys, saddle_Q, u, v, [0.0, 0.0], window_K=20,
                           step=1e-2)
    assert np.max(np.abs(y - [-1.0, 1.0])) < 1e-3


def test_transport_scalar(scalar_sys, scalar_Q):
    u = hc.ControlFunction.constant([0.0])
    v = hc.ControlFunction.constant([0.6])
    y = hc.fiber_transport(scalar_sys, scalar_Q, u, v, [0.0], window_K=20,
                           step=1e-2)
    assert abs(y[0] + 0.6) < 1e-4


def test_transport_matches_bounded_orbit_oracle(saddle_sys, saddle_Q):
    rng = np.random.default_rng(4)
    u = hc.ControlFunction.constant([0.0, 0.0])
    for _ in range(3):
        v = hc.random_piecewise(saddle_sys.control_range, (-24.0, 24.0), 0.5, rng)
        y = hc.fiber_transport(saddle_sys, saddle_Q, u, v, [0.0, 0.0],
                               window_K=20, step=1e-2)
        assert np.linalg.norm(y - bounded_orbit_point(v)) < 1e-3


def test_transport_inverse_property(saddle_sys, saddle_Q):
    rng = np.random.default_rng(5)
    u = hc.ControlFunction.constant([0.0, 0.0])
    v = hc.random_piecewise(saddle_sys.control_range, (-24.0, 24.0), 0.5, rng)
    y = hc.fiber_transport(saddle_sys, saddle_Q, u, v, [0.0, 0.0], window_K=20,
                           step=1e-2)
    back = hc.fiber_transport(saddle_sys, saddle_Q, v, u, y, window_K=20,
                              step=1e-2)
    assert np.linalg.norm(back) < 1e-6


def test_transport_window_stability(saddle_sys, saddle_Q):
    u = hc.ControlFunction.constant([0.0, 0.0])
    v = hc.ControlFunction.constant([0.8, -0.5])
    ys = {K: hc.fiber_transport(saddle_sys, saddle_Q, u, v, [0.0, 0.0],
                                window_K=K, step=1e-2) for K in (4, 8, 16)}
    d1 = np.linalg.norm(ys[4] - ys[8])
    d2 = np.linalg.norm(ys[8] - ys[16])
    assert d2 <= 0.05 * d1 or d2 < 1e-12      # e^{-4} decay with margin


def test_transport_metric_guard(saddle_sys, saddle_Q, family2):
    u = hc.ControlFunction.constant([0.0, 0.0])
    v = hc.ControlFunction.constant([1.0, 1.0])
    with pytest.raises(hc.InputRejectedError):
        hc.fiber_transport(saddle_sys, saddle_Q, u, v, [0.0, 0.0], window_K=12,
                           step=1e-2, metric_guard=(family2, 0.05, [0.0]))


def test_homotopy_identity(saddle_sys, saddle_Q, family2):
    u = hc.ControlFunction.constant([0.0, 0.0])
    pt, path = hc.homotopy_transport(saddle_sys, saddle_Q, u, u, [0.0, 0.0],
                                     family=family2, window_K=16, step=1e-2)
    assert len(path) == 2 and np.linalg.norm(pt) < 1e-12


def test_homotopy_matches_endpoint_and_leg_invariance(saddle_sys, saddle_Q, family2):
    u = hc.ControlFunction.constant([0.0, 0.0])
    v = hc.ControlFunction.constant([1.0, 1.0])
    pts = {}
    legs = {}
    for eps_step in (0.9, 0.5, 0.25):
        pt, path = hc.homotopy_transport(saddle_sys, saddle_Q, u, v, [0.0, 0.0],
                                         eps_step=eps_step, family=family2,
                                         window_K=20, step=1e-2)
        pts[eps_step] = pt
        legs[eps_step] = len(path) - 1
    assert legs[0.9] >= 2 and legs[0.25] > legs[0.9]
    vals = list(pts.values())
    for a in vals:
        assert np.max(np.abs(a - [-1.0, 1.0])) < 1e-3
        for b in vals:
            assert np.linalg.norm(a - b) < 1e-6


def test_homotopy_matches_direct_transport(saddle_sys, saddle_Q, family2):
    rng = np.random.default_rng(6)
    u = hc.ControlFunction.constant([0.0, 0.0])
    v = hc.random_piecewise(saddle_sys.control_range, (-24.0, 24.0), 0.5, rng)
    direct = hc.fiber_transport(saddle_sys, saddle_Q, u, v, [0.0, 0.0],
                                window_K=20, step=1e-2)
    via_path, _ = hc.homotopy_transport(saddle_sys, saddle_Q, u, v, [0.0, 0.0],
                                        family=family2, window_K=20, step=1e-2)
    assert np.linalg.norm(direct - via_path) < 1e-6


def test_graph_verify_report(saddle_sys, saddle_Q, family2):
    rep = hc.graph_verify(
        saddle_sys, saddle_Q, [0.0, 0.0], n_controls=6, seed=7, family=family2,
        window_K=20, eps_step=0.8, piece=0.5, control_window=24.0, step=0.02,
        fiber_kwargs={"T_f": 12.0, "target_res": 4e-4, "seeds_per_axis": 15,
                      "step": 0.05, "inflate": 1.15, "rate_hint": 1.0},
        continuity_samples=8, roundtrip_samples=2)
    assert not rep.hypothesis_failed
    assert rep.singleton_rate == 1.0
    assert rep.max_discrepancy < 1e-3
    assert rep.roundtrip_max < 1e-6
    assert rep.failures == []
    assert len(rep.points) == 6
    for pair in rep.continuity_pairs:
        assert pair["du"] >= 0 and pair["dx"] >= 0
    # cross-check each transported point against the closed-form orbit
    for j, pt in enumerate(rep.points):
        v = hc.random_piecewise(saddle_sys.control_range, (-24.0, 24.0), 0.5,
                                np.random.default_rng([7, j]))
        assert np.linalg.norm(np.asarray(pt) - bounded_orbit_point(v)) < 1e-3


def test_graph_verify_hypothesis_gate(saddle_sys, saddle_Q):
    """A two-equilibria frozen field must be reported, not silently accepted."""
    import dataclasses

    bistable = hc.make_system("saddle2d")
    f0 = bistable.f0

    def f0_cubic(x):
        out = np.array(f0(x), dtype=float, copy=True)
        out[..., 0] = x[..., 0] - x[..., 0] ** 3   # three equilibria on the axis
        return out

    def j0_cubic(x):
        J = np.zeros(np.shape(x)[:-1] + (2, 2))
        J[..., 0, 0] = 1 - 3 * x[..., 0] ** 2
        J[..., 1, 1] = -1.0
        return J

    cubic = dataclasses.replace(bistable, f0=f0_cubic, jac0=j0_cubic)
    rep = hc.graph_verify(cubic, saddle_Q, [0.0, 0.0], n_controls=2, seed=0)
    assert rep.hypothesis_failed
    assert "equilibria" in rep.note
