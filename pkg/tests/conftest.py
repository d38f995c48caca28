"""Shared fixtures: catalog systems, small chain control sets, oracles."""

import numpy as np
import pytest

import hychain as hc


@pytest.fixture(scope="session")
def scalar_sys():
    return hc.make_system("scalar_affine", {"a": 1.0})


@pytest.fixture(scope="session")
def saddle_sys():
    return hc.make_system("saddle2d", {"a": 1.0, "b": 1.0})


@pytest.fixture(scope="session")
def torus_sys():
    return hc.make_system("torus_shear")


@pytest.fixture(scope="session")
def scalar_grid(scalar_sys):
    return hc.make_grid(scalar_sys.domain, 0.01)


@pytest.fixture(scope="session")
def scalar_graph(scalar_sys, scalar_grid):
    return hc.build_transition_graph(scalar_sys, scalar_grid, T=0.5, eps=0.02,
                                     samples_per_cell=1, controls_per_cell=5,
                                     seed=0, step=0.01)


@pytest.fixture(scope="session")
def scalar_Q(scalar_graph):
    return hc.chain_control_sets(scalar_graph)[0]


@pytest.fixture(scope="session")
def saddle_grid(saddle_sys):
    return hc.make_grid(saddle_sys.domain, 0.02)


@pytest.fixture(scope="session")
def saddle_graph(saddle_sys, saddle_grid):
    return hc.build_transition_graph(saddle_sys, saddle_grid, T=0.5, eps=0.04,
                                     samples_per_cell=1, controls_per_cell=5,
                                     seed=0, step=0.01)


@pytest.fixture(scope="session")
def saddle_Q(saddle_graph):
    return hc.chain_control_sets(saddle_graph)[0]


@pytest.fixture(scope="session")
def family1():
    return hc.make_test_family(1, depth=32)


@pytest.fixture(scope="session")
def family2():
    return hc.make_test_family(2, depth=32)


# -- closed-form oracles -------------------------------------------------------


def scalar_affine_flow(t, x, c, a=1.0):
    """phi(t, x) for x' = a x + c, constant c."""
    if a == 0:
        return x + c * t
    return (x + c / a) * np.exp(a * t) - c / a


def bounded_orbit_point(v: "hc.ControlFunction", a=1.0, b=1.0):
    """The unique bounded-orbit initial point of the saddle under control v.

    x(0) = -int_0^inf e^{-a s} v1(s) ds  (expanding axis),
    y(0) = +int_{-inf}^0 e^{b s} v2(s) ds (contracting axis);
    exact finite sums for piecewise-constant v with constant extension.
    """
    edges = v.knots - v.offset

    def forward_integral(comp, rate):
        ts = np.concatenate([[0.0], edges[edges > 0]])
        total = 0.0
        for i in range(len(ts)):
            t0 = ts[i]
            t1 = ts[i + 1] if i + 1 < len(ts) else np.inf
            val = v(np.array([t0]))[0, comp]
            upper = 0.0 if np.isinf(t1) else np.exp(-rate * t1)
            total += val * (np.exp(-rate * t0) - upper) / rate
        return total

    def backward_integral(comp, rate):
        ts = np.concatenate([edges[edges < 0], [0.0]])
        total = 0.0
        for i in range(len(ts)):
            t1 = ts[len(ts) - 1 - i]
            t0 = ts[len(ts) - 2 - i] if i + 1 < len(ts) else -np.inf
            val = v(np.array([t1 - 1e-9]))[0, comp]
            lower = 0.0 if np.isinf(t0) else np.exp(rate * t0)
            total += val * (np.exp(rate * t1) - lower) / rate
        return total

    return np.array([-forward_integral(0, a), backward_integral(1, b)])


@pytest.fixture(scope="session")
def oracles():
    return {"scalar_flow": scalar_affine_flow, "bounded_orbit": bounded_orbit_point}
