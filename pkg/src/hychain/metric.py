"""Series metric on control space and the uniform shift bound.

The metric pairs control differences against an enumerated family of
indicator test functions with dyadic supports; every integral is an exact
finite sum because both factors are piecewise constant.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .controls import ControlFunction
from .errors import InputRejectedError


@dataclass(frozen=True)
class TestFunctionFamily:
    """Enumerated indicator test functions e_j * 1_[a, b).

    Generation g contributes intervals of length 2^-g tiling [-span, span),
    ordered center-out (0, -1, 1, -2, ...), with the coordinate direction as
    the innermost loop.  The first member is always 1_[0, 1) e_1.
    """

    __test__ = False  # not a pytest class

    dim_m: int
    span: float
    supports: np.ndarray      # (depth, 2) interval [a, b)
    directions: np.ndarray    # (depth,) coordinate index
    l1_norms: np.ndarray      # (depth,) = b - a

    def __len__(self) -> int:
        return self.supports.shape[0]

    @property
    def config_hash(self) -> str:
        key = f"boxfamily:m={self.dim_m}:span={self.span!r}:depth={len(self)}"
        return hashlib.sha256(key.encode()).hexdigest()[:12]


def make_test_family(dim_m: int, depth: int, span: float = 8.0) -> TestFunctionFamily:
    if dim_m < 1 or depth < 1 or span <= 0:
        raise InputRejectedError("family needs dim_m >= 1, depth >= 1, span > 0")
    supports, directions = [], []
    g = 0
    while len(supports) < depth:
        length = 2.0 ** (-g)
        n_side = int(round(span / length))
        positions = [0]
        for p in range(1, n_side + 1):
            positions.extend([-p, p] if p < n_side else [-p])
        for p in positions:
            a = p * length
            for j in range(dim_m):
                supports.append((a, a + length))
                directions.append(j)
                if len(supports) == depth:
                    break
            if len(supports) == depth:
                break
        g += 1
    supports = np.asarray(supports, dtype=float)
    directions = np.asarray(directions, dtype=int)
    return TestFunctionFamily(dim_m, float(span), supports, directions,
                              supports[:, 1] - supports[:, 0])


@dataclass(frozen=True)
class MetricConfig:
    truncation_N: int

    def __post_init__(self):
        if self.truncation_N < 1:
            raise InputRejectedError("truncation_N must be >= 1")

    @property
    def tail_bound(self) -> float:
        """Exact tail of the series weights: sum_{n > N} 2^-n = 2^-N."""
        return 2.0 ** (-self.truncation_N)


def _pair_integral(u: ControlFunction, v: ControlFunction, a: float, b: float, j: int) -> float:
    """Exact integral of (u_j - v_j) over [a, b)."""
    edges = np.union1d(u.knots - u.offset, v.knots - v.offset)
    edges = np.concatenate([[a], edges[(edges > a) & (edges < b)], [b]])
    mids = 0.5 * (edges[:-1] + edges[1:])
    diff = u(mids)[:, j] - v(mids)[:, j]
    return float(np.sum(diff * np.diff(edges)))


def du_distance(u: ControlFunction, v: ControlFunction,
                family: TestFunctionFamily, N: int) -> float:
    """Truncated series metric sum_{n<=N} 2^-n s_n / (1 + s_n), with
    s_n = |integral of <u - v, x_n>|.  The value lies in [0, 1)."""
    if u.dim != family.dim_m or v.dim != family.dim_m:
        raise InputRejectedError("control dimension does not match the test family")
    if N < 1:
        raise InputRejectedError("N must be >= 1")
    if N > len(family):
        raise InputRejectedError(f"truncation N={N} exceeds family depth {len(family)}")
    total = 0.0
    for n in range(N):
        a, b = family.supports[n]
        s = abs(_pair_integral(u, v, a, b, int(family.directions[n])))
        total += 2.0 ** (-(n + 1)) * s / (1.0 + s)
    return total


def tail_N_for_epsilon(eps: float) -> int:
    """Smallest N with 2^-N < eps / 2."""
    if not (0.0 < eps < 1.0):
        raise InputRejectedError(f"eps must lie in (0, 1), got {eps}")
    N = 1
    while 2.0 ** (-N) >= eps / 2.0:
        N += 1
    return N


def delta_for_epsilon(eps: float, family: TestFunctionFamily) -> float:
    """Sup-norm radius guaranteeing shift distances below eps.

    delta = eps / (2 c(eps)) with c(eps) the largest L1 norm among the first
    N(eps) test functions; then |u - v|_inf < delta forces every truncated
    shift distance below eps (each series term is bounded by delta * c(eps)).
    """
    N = tail_N_for_epsilon(eps)
    if N > len(family):
        raise InputRejectedError(f"family depth {len(family)} too small for eps={eps}")
    c_eps = float(np.max(family.l1_norms[:N]))
    return eps / (2.0 * c_eps)


def sup_shift_distance(u: ControlFunction, v: ControlFunction,
                       family: TestFunctionFamily, N: int, t_samples) -> float:
    """Sampled max over t of du(shift(u, t), shift(v, t)); a lower bound for
    the true sup over all t (the grid is configurable, never certified)."""
    t_samples = np.atleast_1d(np.asarray(t_samples, dtype=float))
    if t_samples.size == 0:
        raise InputRejectedError("t_samples must be nonempty")
    return max(du_distance(u.shift(t), v.shift(t), family, N) for t in t_samples)
