import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

import hychain as hc
from hychain.chains import ChainControlSet
from hychain.systems import ControlAffineSystem

from conftest import bounded_orbit_point


def brute_force_scalar_chain_hull(a=1.0, h=0.01, T=0.5, eps=0.02):
    """Independent oracle: eps-jump recurrence of the closed-form map
    x -> x e^{aT} + u (e^{aT} - 1)/a on a fine 1-d grid, with the same
    forward/backward viability pruning semantics."""
    lo, hi = -2.0, 2.0
    n = int(round((hi - lo) / h))
    centers = lo + (np.arange(n) + 0.5) * h
    g = np.exp(a * T)
    controls = [-1.0, 1.0, 0.0]
    fw, bw = [], []
    for u in controls:
        fw.append(centers * g + u * (g - 1) / a)
        bw.append(centers / g - u * (1 - 1 / g) / a)
    src, dst = [], []
    for e in fw:
        for j in range(n):
            hits = np.nonzero(np.abs(e[j] - centers) < eps)[0]
            src.extend([j] * hits.size)
            dst.extend(hits.tolist())
    A = csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    _, labels = connected_components(A, directed=True, connection="strong")
    sizes = np.bincount(labels)
    member = labels == np.argmax(sizes)
    tol = h / 2
    while True:
        keep = member.copy()
        mcenters = centers[member]
        for j in np.nonzero(member)[0]:
            ok_f = any(np.min(np.abs(e[j] - mcenters)) <= tol + h / 2 for e in fw)
            ok_b = any(np.min(np.abs(e[j] - mcenters)) <= tol + h / 2 for e in bw)
            if not (ok_f and ok_b):
                keep[j] = False
        if np.array_equal(keep, member):
            break
        member = keep
        mcenters = centers[member]
    return centers[member].min() - h / 2, centers[member].max() + h / 2


def test_scalar_chain_set_matches_brute_force(scalar_Q):
    lo, hi = brute_force_scalar_chain_hull()
    assert abs(scalar_Q.hull_lo[0] - lo) <= 0.02 + 1e-9
    assert abs(scalar_Q.hull_hi[0] - hi) <= 0.02 + 1e-9
    # and the analytic answer [-1, 1] within 2h
    assert abs(scalar_Q.hull_lo[0] + 1.0) <= 0.02 + 1e-9
    assert abs(scalar_Q.hull_hi[0] - 1.0) <= 0.02 + 1e-9


def test_scalar_single_set(scalar_graph):
    sets = hc.chain_control_sets(scalar_graph)
    assert len(sets) == 1


def test_saddle_chain_set(saddle_Q):
    for i in range(2):
        assert abs(saddle_Q.hull_lo[i] + 1.0) <= 2 * 0.02 + 1e-9
        assert abs(saddle_Q.hull_hi[i] - 1.0) <= 2 * 0.02 + 1e-9


def test_refinement_monotonicity(scalar_sys):
    hulls = []
    for h in (0.04, 0.02, 0.01):
        grid = hc.make_grid(scalar_sys.domain, h)
        g = hc.build_transition_graph(scalar_sys, grid, T=0.5, eps=2 * h,
                                      samples_per_cell=1, controls_per_cell=5,
                                      seed=0, step=0.01)
        Q = hc.chain_control_sets(g)[0]
        hulls.append((h, float(Q.hull_lo[0]), float(Q.hull_hi[0])))
    for (h1, lo1, hi1), (h2, lo2, hi2) in zip(hulls, hulls[1:]):
        assert max(abs(lo1 - lo2), abs(hi1 - hi2)) <= 2 * h1 + 1e-9


def test_witness_replay(scalar_sys, scalar_graph):
    eps = scalar_graph.params["eps"]
    T = scalar_graph.params["T"]
    rng = np.random.default_rng(0)
    picks = rng.choice(scalar_graph.n_edges, size=50, replace=False)
    for e in picks:
        x_w, u_w = scalar_graph.witness(int(e))
        u = hc.ControlFunction.constant(u_w)
        end = hc.flow(scalar_sys, x_w, u, T, scalar_graph.params["step"])
        center = scalar_graph.grid.centers(np.array([scalar_graph.edges_dst[e]]))[0]
        assert np.linalg.norm(end - center) < eps


def test_scc_maximality_spot_check(scalar_graph, scalar_Q):
    member = scalar_Q.member_mask()
    n = scalar_graph.n_cells
    A = csr_matrix((np.ones(scalar_graph.n_edges),
                    (scalar_graph.edges_src, scalar_graph.edges_dst)), shape=(n, n))
    At = A.T.tocsr()
    boundary = [c for c in range(n)
                if not member[c] and any(0 <= c + d < n and member[c + d] for d in (-1, 1))]
    rng = np.random.default_rng(1)
    for c in rng.choice(boundary, size=min(10, len(boundary)), replace=False):
        fwd = breadth_first_order(A, int(c), return_predecessors=False)
        back = breadth_first_order(At, int(c), return_predecessors=False)
        reaches = bool(member[fwd].any())
        reached = bool(member[back].any())
        assert not (reaches and reached)


def test_graph_preconditions(scalar_sys, scalar_grid):
    with pytest.raises(hc.InputRejectedError):
        hc.build_transition_graph(scalar_sys, scalar_grid, T=-1.0, eps=0.02)
    with pytest.raises(hc.InputRejectedError):
        hc.build_transition_graph(scalar_sys, scalar_grid, T=0.5, eps=0.001)


def _zero_system():
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    zjac = lambda x: np.zeros(np.shape(x)[:-1] + (1, 1))
    return ControlAffineSystem(
        name="null", f0=zero, fields=(zero,), jac0=zjac, jacs=(zjac,),
        domain=hc.BoxDomain([-1.0], [1.0]), control_range=hc.ControlRange([0.0], [1.0]))


def test_zero_dynamics_self_edges_and_report():
    sys = _zero_system()
    grid = hc.make_grid(sys.domain, 0.25)
    g = hc.build_transition_graph(sys, grid, T=0.5, eps=0.25, seed=0, step=0.05)
    assert g.degenerate
    self_edges = np.sum(g.edges_src == g.edges_dst)
    assert self_edges == grid.n_cells          # every cell loops to itself
    with pytest.raises(hc.InputRejectedError):
        hc.chain_control_sets(g)


def test_one_cell_grid(scalar_sys):
    grid = hc.make_grid(hc.BoxDomain([-0.05], [0.05]), 0.1)
    assert grid.n_cells == 1
    g = hc.build_transition_graph(scalar_sys, grid, T=0.5, eps=0.11, seed=0, step=0.01)
    # center 0 with u=0 stays at 0 -> self edge present
    assert np.any((g.edges_src == 0) & (g.edges_dst == 0))


def test_equilibria_examples(scalar_sys, saddle_sys, scalar_grid, saddle_grid):
    eq = hc.equilibria(scalar_sys, [0.3], scalar_grid)
    assert len(eq) == 1 and abs(eq[0].point[0] + 0.3) < 1e-9
    assert np.isclose(eq[0].eigenvalues.real[0], 1.0)
    eq2 = hc.equilibria(saddle_sys, [0.0, 0.0], saddle_grid)
    assert len(eq2) == 1 and np.allclose(eq2[0].point, [0.0, 0.0], atol=1e-9)
    assert sorted(np.round(eq2[0].eigenvalues.real, 6)) == [-1.0, 1.0]
    assert eq2[0].hyperbolic
    eq3 = hc.equilibria(hc.make_system("scalar_affine", {"a": 1.0}), [1.0],
                        scalar_grid)
    assert len(eq3) == 1 and abs(eq3[0].point[0] + 1.0) < 1e-9


def test_fiber_constant_controls(saddle_sys, saddle_Q, scalar_sys, scalar_Q):
    f = hc.fiber(saddle_sys, saddle_Q, hc.ControlFunction.constant([0.0, 0.0]),
                 T_f=14.0, target_res=5e-5, step=0.02)
    assert len(f) == 1 and np.max(np.abs(f.points[0])) < 1e-4
    f2 = hc.fiber(saddle_sys, saddle_Q, hc.ControlFunction.constant([1.0, 1.0]),
                  T_f=14.0, target_res=2e-4, step=0.02)
    assert len(f2) == 1 and np.max(np.abs(f2.points[0] - [-1.0, 1.0])) < 1e-3
    f3 = hc.fiber(scalar_sys, scalar_Q, hc.ControlFunction.constant([0.7]),
                  T_f=14.0, target_res=5e-5, step=0.01)
    assert len(f3) == 1 and abs(f3.points[0, 0] + 0.7) < 1e-4


def test_fiber_random_control_matches_bounded_orbit(saddle_sys, saddle_Q):
    rng = np.random.default_rng(9)
    v = hc.random_piecewise(saddle_sys.control_range, (-24.0, 24.0), 0.5, rng)
    f = hc.fiber(saddle_sys, saddle_Q, v, T_f=12.0, target_res=2e-4, step=0.025)
    expect = bounded_orbit_point(v)
    assert len(f) == 1 and np.linalg.norm(f.points[0] - expect) < 1e-3


def test_fiber_matches_equilibria_for_constant_u(scalar_sys, scalar_Q, scalar_grid):
    u0 = [0.4]
    eq = hc.equilibria(scalar_sys, u0, scalar_grid)
    inside = [e for e in eq if scalar_Q.region_contains(e.point[None, :])[0]]
    f = hc.fiber(scalar_sys, scalar_Q, hc.ControlFunction.constant(u0),
                 T_f=14.0, target_res=5e-5, step=0.01)
    assert len(f) == len(inside) == 1
    assert np.linalg.norm(f.points[0] - inside[0].point) < 1e-4


def test_fiber_containment_by_construction(saddle_sys, saddle_Q):
    rng = np.random.default_rng(10)
    v = hc.random_piecewise(saddle_sys.control_range, (-24.0, 24.0), 0.5, rng)
    f = hc.fiber(saddle_sys, saddle_Q, v, T_f=12.0, target_res=4e-4, step=0.025,
                 inflate=1.15)
    assert np.all(saddle_Q.region_contains(f.points, 1.15))


def test_isolated_check_saddle(saddle_sys, saddle_Q):
    rep = hc.isolated_check(saddle_sys, saddle_Q, [1.1], T_probe=20.0,
                            samples=60, seed=0, step=0.02)
    assert rep.largest_clean_factor == 1.1
    assert rep.counterexamples[1.1] == []


def test_isolated_check_scalar(scalar_sys, scalar_Q):
    rep = hc.isolated_check(scalar_sys, scalar_Q, [1.1], T_probe=20.0,
                            samples=60, seed=0, step=0.01)
    assert rep.largest_clean_factor == 1.1


def test_isolated_check_zero_dynamics():
    sys = _zero_system()
    grid = hc.make_grid(sys.domain, 0.05)
    cells = np.arange(10, 30)    # the sub-box [-0.5, 0.5) as the candidate set
    Q = ChainControlSet(cells=cells, hull_lo=np.array([-0.5]),
                        hull_hi=np.array([0.5]), params={}, grid=grid)
    rep = hc.isolated_check(sys, Q, [1.2, 1.5], T_probe=5.0, samples=40,
                            seed=0, step=0.05)
    assert rep.largest_clean_factor is None
    assert all(len(v) > 0 for v in rep.counterexamples.values())
