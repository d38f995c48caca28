"""Control-affine systems, state domains, and fixed-step trajectory/tangent integration.

The integrator is a classical 4th-order one-step method with substeps aligned
to control breakpoints.  Backward time is realized by integrating the negated
vector fields under the time-reversed control.  Batched drivers advance many
states at once and are the workhorse behind the grid, fiber and shadowing
computations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import ControlFunction, ControlRange
from .errors import EscapeError, InputRejectedError

DEFAULT_STEP = 1e-3

# -- state domains -----------------------------------------------------------


@dataclass(frozen=True)
class BoxDomain:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float)).copy()
        if lo.shape != hi.shape or not np.all(hi > lo):
            raise InputRejectedError("box domain needs lo < hi componentwise")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def periodic(self) -> bool:
        return False

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def wrap(self, x):
        return x

    def diff(self, a, b):
        return np.asarray(a, dtype=float) - np.asarray(b, dtype=float)

    def distance(self, a, b):
        return np.linalg.norm(self.diff(a, b), axis=-1)

    def inflate(self, factor: float) -> "BoxDomain":
        c = 0.5 * (self.lo + self.hi)
        h = 0.5 * (self.hi - self.lo)
        return BoxDomain(c - factor * h, c + factor * h)

    def sample(self, rng, k: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(k, self.dim))


@dataclass(frozen=True)
class TorusDomain:
    periods: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.periods, dtype=float)).copy()
        if not np.all(p > 0):
            raise InputRejectedError("torus periods must be positive")
        p.setflags(write=False)
        object.__setattr__(self, "periods", p)

    @property
    def dim(self) -> int:
        return self.periods.shape[0]

    @property
    def periodic(self) -> bool:
        return True

    @property
    def lo(self) -> np.ndarray:
        return np.zeros(self.dim)

    @property
    def hi(self) -> np.ndarray:
        return self.periods.copy()

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1], dtype=bool) if x.ndim > 1 else np.bool_(True)

    def wrap(self, x):
        return np.mod(x, self.periods)

    def diff(self, a, b):
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        d = np.mod(d + 0.5 * self.periods, self.periods) - 0.5 * self.periods
        return d

    def distance(self, a, b):
        return np.linalg.norm(self.diff(a, b), axis=-1)

    def inflate(self, factor: float) -> "TorusDomain":
        return self

    def sample(self, rng, k: int) -> np.ndarray:
        return rng.uniform(0.0, self.periods, size=(k, self.dim))


# -- the system --------------------------------------------------------------


@dataclass(frozen=True)
class ControlAffineSystem:
    """Drift + control vector fields with Jacobians, x' = f0(x) + sum u_i f_i(x).

    Field callables must accept arrays of shape (..., n) and return the same;
    Jacobian callables return (..., n, n).
    """

    name: str
    f0: callable
    fields: tuple
    jac0: callable
    jacs: tuple
    domain: object
    control_range: ControlRange

    @property
    def dim_n(self) -> int:
        return self.domain.dim

    @property
    def dim_m(self) -> int:
        return self.control_range.dim

    def rhs(self, x, u_val):
        x = np.asarray(x, dtype=float)
        u_val = np.asarray(u_val, dtype=float)
        out = self.f0(x).astype(float, copy=True)
        for i, f in enumerate(self.fields):
            out += u_val[i] * f(x)
        return out

    def rhs_many(self, X, U):
        """Batched right-hand side: X (N, n), U (N, m) -> (N, n)."""
        out = self.f0(X).astype(float, copy=True)
        for i, f in enumerate(self.fields):
            out += U[:, i, None] * f(X)
        return out

    def jac(self, x, u_val):
        J = self.jac0(x).astype(float, copy=True)
        for i, jf in enumerate(self.jacs):
            J += u_val[i] * jf(x)
        return J

    def jac_many(self, X, U):
        """Batched Jacobian of the rhs in x: (N, n), (N, m) -> (N, n, n)."""
        J = self.jac0(X).astype(float, copy=True)
        for i, jf in enumerate(self.jacs):
            J += U[:, i, None, None] * jf(X)
        return J

    def check_jacobians(self, rng, n_samples: int = 20, fd_eps: float = 1e-6) -> float:
        """Max relative error of the Jacobians versus central differences."""
        X = self.domain.sample(rng, n_samples)
        U = self.control_range.sample(rng, n_samples)
        worst = 0.0
        for x, u in zip(X, U):
            J = self.jac(x, u)
            Jfd = np.empty_like(J)
            for j in range(self.dim_n):
                e = np.zeros(self.dim_n)
                e[j] = fd_eps
                Jfd[:, j] = (self.rhs(x + e, u) - self.rhs(x - e, u)) / (2 * fd_eps)
            scale = max(1.0, float(np.max(np.abs(J))))
            worst = max(worst, float(np.max(np.abs(J - Jfd))) / scale)
        return worst


def reversed_system(sys: ControlAffineSystem) -> ControlAffineSystem:
    """Same system with negated vector fields (for backward-time integration)."""
    neg = lambda g: (lambda x, _g=g: -_g(x))
    return ControlAffineSystem(
        name=sys.name + "~rev",
        f0=neg(sys.f0),
        fields=tuple(neg(f) for f in sys.fields),
        jac0=neg(sys.jac0),
        jacs=tuple(neg(j) for j in sys.jacs),
        domain=sys.domain,
        control_range=sys.control_range,
    )


def eval_rhs(sys: ControlAffineSystem, x, u_val) -> np.ndarray:
    """f0(x) + sum_i u_i f_i(x), with domain and range membership enforced."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u_val = np.atleast_1d(np.asarray(u_val, dtype=float))
    if not bool(np.all(sys.domain.contains(x, tol=1e-12))):
        raise InputRejectedError(f"state {x} outside the domain")
    if not sys.control_range.contains(u_val):
        raise InputRejectedError(f"control value {u_val} outside the effective range")
    return sys.rhs(x, u_val)


# -- trajectories -------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    control: ControlFunction

    @property
    def end_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def end_time(self) -> float:
        return float(self.times[-1])


def _rk4_segment(sys, x, u_val, h):
    k1 = sys.rhs(x, u_val)
    k2 = sys.rhs(x + 0.5 * h * k1, u_val)
    k3 = sys.rhs(x + 0.5 * h * k2, u_val)
    k4 = sys.rhs(x + h * k3, u_val)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_segment_tangent(sys, x, W, u_val, h):
    k1 = sys.rhs(x, u_val)
    K1 = sys.jac(x, u_val) @ W
    x2 = x + 0.5 * h * k1
    k2 = sys.rhs(x2, u_val)
    K2 = sys.jac(x2, u_val) @ (W + 0.5 * h * K1)
    x3 = x + 0.5 * h * k2
    k3 = sys.rhs(x3, u_val)
    K3 = sys.jac(x3, u_val) @ (W + 0.5 * h * K2)
    x4 = x + h * k3
    k4 = sys.rhs(x4, u_val)
    K4 = sys.jac(x4, u_val) @ (W + h * K3)
    return (
        x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4),
        W + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4),
    )


def _substeps(u: ControlFunction, ta: float, tb: float):
    """Substep edges of [ta, tb] that never straddle a control breakpoint."""
    bps = u.breakpoints
    inner = bps[(bps > ta + 1e-15) & (bps < tb - 1e-15)]
    return np.concatenate([[ta], inner, [tb]])


def integrate(sys, x0, u: ControlFunction, t0: float, t1: float,
              step: float = DEFAULT_STEP, guard=None) -> Trajectory:
    """Sample the controlled trajectory on the step grid from t0 to t1.

    Requires t0 <= t1; use :func:`flow` for backward time.  On box domains the
    trajectory is aborted with :class:`EscapeError` once it leaves the 2x
    inflated safety box (``guard`` overrides that region, guard=False disables).
    """
    if t1 < t0:
        raise InputRejectedError("integrate requires t0 <= t1; use flow() for backward time")
    if step <= 0:
        raise InputRejectedError("step must be positive")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if guard is None:
        guard = sys.domain.inflate(2.0) if not sys.domain.periodic else False
    n_out = int(np.ceil((t1 - t0) / step - 1e-12)) if t1 > t0 else 0
    times = [t0]
    states = [x.copy()]
    t = t0
    for i in range(n_out):
        tb = min(t0 + (i + 1) * step, t1)
        edges = _substeps(u, t, tb)
        for a, b in zip(edges[:-1], edges[1:]):
            x = _rk4_segment(sys, x, u(a), b - a)
            x = sys.domain.wrap(x)
            if guard is not False and not bool(np.all(guard.contains(x))):
                raise EscapeError(f"trajectory escaped the safety box at t={b:.6g}",
                                  exit_time=float(b), state=x.copy())
        t = tb
        times.append(t)
        states.append(x.copy())
    return Trajectory(np.asarray(times), np.asarray(states), u)


def flow(sys, x0, u: ControlFunction, t: float, step: float = DEFAULT_STEP, guard=None) -> np.ndarray:
    """phi(t, x0, u) for either sign of t (backward via time reversal)."""
    if t == 0:
        return np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if t > 0:
        return integrate(sys, x0, u, 0.0, t, step, guard=guard).end_state
    rsys = reversed_system(sys)
    ru = u.reversed_time()
    return integrate(rsys, x0, ru, 0.0, -t, step, guard=guard).end_state


def variational_flow(sys, x0, u: ControlFunction, t: float,
                     step: float = DEFAULT_STEP) -> np.ndarray:
    """The state derivative d(phi_t)(x0) via the joint state+tangent system."""
    n = sys.dim_n
    if t == 0:
        return np.eye(n)
    if t < 0:
        return _variational_forward(reversed_system(sys), x0, u.reversed_time(), -t, step)
    return _variational_forward(sys, x0, u, t, step)


def _variational_forward(sys, x0, u, T, step):
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    W = np.eye(sys.dim_n)
    n_out = int(np.ceil(T / step - 1e-12))
    t = 0.0
    for i in range(n_out):
        tb = min((i + 1) * step, T)
        edges = _substeps(u, t, tb)
        for a, b in zip(edges[:-1], edges[1:]):
            x, W = _rk4_segment_tangent(sys, x, W, u(a), b - a)
            x = sys.domain.wrap(x)
        t = tb
    return W


# -- batched drivers -----------------------------------------------------------


@dataclass
class BatchFlow:
    states: np.ndarray                 # (N, n) final (or frozen at exit)
    tangents: np.ndarray | None        # (N, n, n) if requested
    exit_times: np.ndarray             # (N,) +inf where never exited
    records: list = field(default_factory=list)   # (t, states, tangents) snapshots


def const_eval(U):
    """Control evaluator for per-row constant values U of shape (N, m)."""
    U = np.asarray(U, dtype=float)
    return lambda s: U


def shifted_eval(u: ControlFunction, offsets):
    """Control evaluator for a shared control at per-row local clocks.

    Row i sees u(offsets[i] + s).  Breakpoint alignment across rows requires
    offsets and breakpoints commensurate with the step grid (integers or
    multiples of the piece length); this is how all callers generate controls.
    """
    offsets = np.asarray(offsets, dtype=float)
    return lambda s: u(offsets + s)


def flow_batch(sys, X0, u_eval, T: float, step: float, *, tangent: bool = False,
               contain=None, record_at=(), overflow: float = 1e9) -> BatchFlow:
    """Advance N states over [0, T] with per-row control values u_eval(s).

    Rows leaving the ``contain`` region (a mask callback) or overflowing are
    frozen at their exit state; the first offending grid time is recorded in
    ``exit_times``.  Snapshots at ``record_at`` times (multiples of step) are
    appended to ``records``.
    """
    X = np.atleast_2d(np.asarray(X0, dtype=float)).copy()
    N, n = X.shape
    W = np.tile(np.eye(n), (N, 1, 1)) if tangent else None
    exit_times = np.full(N, np.inf)
    active = np.ones(N, dtype=bool)
    record_at = sorted(float(r) for r in record_at)
    rec_iter = iter(record_at)
    next_rec = next(rec_iter, None)
    records = []

    n_steps = int(np.ceil(T / step - 1e-12)) if T > 0 else 0
    t = 0.0
    if next_rec is not None and next_rec <= 1e-12:
        records.append((0.0, X.copy(), None if W is None else W.copy()))
        next_rec = next(rec_iter, None)
    for i in range(n_steps):
        tb = min((i + 1) * step, T)
        h = tb - t
        idx = np.nonzero(active)[0]
        if idx.size:
            U = np.asarray(u_eval(t), dtype=float)
            Ua = U[idx] if U.shape[0] == N else U
            xa = X[idx]
            if tangent:
                wa = W[idx]
                k1 = sys.rhs_many(xa, Ua)
                K1 = sys.jac_many(xa, Ua) @ wa
                x2 = xa + 0.5 * h * k1
                k2 = sys.rhs_many(x2, Ua)
                K2 = sys.jac_many(x2, Ua) @ (wa + 0.5 * h * K1)
                x3 = xa + 0.5 * h * k2
                k3 = sys.rhs_many(x3, Ua)
                K3 = sys.jac_many(x3, Ua) @ (wa + 0.5 * h * K2)
                x4 = xa + h * k3
                k4 = sys.rhs_many(x4, Ua)
                K4 = sys.jac_many(x4, Ua) @ (wa + h * K3)
                xa = xa + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                W[idx] = wa + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
            else:
                k1 = sys.rhs_many(xa, Ua)
                k2 = sys.rhs_many(xa + 0.5 * h * k1, Ua)
                k3 = sys.rhs_many(xa + 0.5 * h * k2, Ua)
                k4 = sys.rhs_many(xa + h * k3, Ua)
                xa = xa + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            xa = sys.domain.wrap(xa)
            X[idx] = xa
            bad = ~np.all(np.isfinite(xa), axis=1) | (np.max(np.abs(xa), axis=1) > overflow)
            if contain is not None:
                bad |= ~np.asarray(contain(xa), dtype=bool)
            if np.any(bad):
                gone = idx[bad]
                exit_times[gone] = tb
                active[gone] = False
        t = tb
        if next_rec is not None and t >= next_rec - 1e-9:
            records.append((t, X.copy(), None if W is None else W.copy()))
            next_rec = next(rec_iter, None)
    return BatchFlow(states=X, tangents=W, exit_times=exit_times, records=records)


# -- system catalog -------------------------------------------------------------


def _const_field(vec):
    vec = np.asarray(vec, dtype=float)

    def f(x):
        return np.broadcast_to(vec, np.shape(x))

    return f


def _zero_jac(n):
    def j(x):
        shape = np.shape(x)[:-1] + (n, n)
        return np.zeros(shape)

    return j


def _const_jac(mat):
    mat = np.asarray(mat, dtype=float)

    def j(x):
        return np.broadcast_to(mat, np.shape(x)[:-1] + mat.shape)

    return j


CATALOG = ("scalar_affine", "saddle2d", "torus_shear")


def make_system(system_id: str, params=None, domain=None, control_range=None) -> ControlAffineSystem:
    """Build a catalog system.

    scalar_affine: x' = a x + u on a box (default [-2, 2], U = [-1, 1]).
    saddle2d:      x' = a x + u1, y' = -b y + u2 on a box (default [-2, 2]^2).
    torus_shear:   x1' = a + u1, x2' = b sin(2 pi x1) + u2 on the unit 2-torus.
    """
    params = dict(params or {})
    if system_id == "scalar_affine":
        a = float(params.pop("a", 1.0))
        if params:
            raise InputRejectedError(f"unknown scalar_affine parameters: {sorted(params)}")
        dom = domain or BoxDomain([-2.0], [2.0])
        rng_ = control_range or ControlRange([0.0], [1.0])
        return ControlAffineSystem(
            name=f"scalar_affine(a={a:g})",
            f0=lambda x: a * x,
            fields=(_const_field([1.0]),),
            jac0=_const_jac([[a]]),
            jacs=(_zero_jac(1),),
            domain=dom,
            control_range=rng_,
        )
    if system_id == "saddle2d":
        a = float(params.pop("a", 1.0))
        b = float(params.pop("b", 1.0))
        if params:
            raise InputRejectedError(f"unknown saddle2d parameters: {sorted(params)}")
        dom = domain or BoxDomain([-2.0, -2.0], [2.0, 2.0])
        rng_ = control_range or ControlRange([0.0, 0.0], [1.0, 1.0])

        def f0(x):
            out = np.empty_like(np.asarray(x, dtype=float))
            out[..., 0] = a * x[..., 0]
            out[..., 1] = -b * x[..., 1]
            return out

        return ControlAffineSystem(
            name=f"saddle2d(a={a:g},b={b:g})",
            f0=f0,
            fields=(_const_field([1.0, 0.0]), _const_field([0.0, 1.0])),
            jac0=_const_jac([[a, 0.0], [0.0, -b]]),
            jacs=(_zero_jac(2), _zero_jac(2)),
            domain=dom,
            control_range=rng_,
        )
    if system_id == "torus_shear":
        a = float(params.pop("a", 0.3))
        b = float(params.pop("b", 0.15))
        if params:
            raise InputRejectedError(f"unknown torus_shear parameters: {sorted(params)}")
        dom = domain or TorusDomain([1.0, 1.0])
        rng_ = control_range or ControlRange([0.0, 0.0], [0.2, 0.2])

        def f0(x):
            out = np.empty_like(np.asarray(x, dtype=float))
            out[..., 0] = a
            out[..., 1] = b * np.sin(2 * np.pi * x[..., 0])
            return out

        def j0(x):
            shape = np.shape(x)[:-1] + (2, 2)
            J = np.zeros(shape)
            J[..., 1, 0] = 2 * np.pi * b * np.cos(2 * np.pi * x[..., 0])
            return J

        return ControlAffineSystem(
            name=f"torus_shear(a={a:g},b={b:g})",
            f0=f0,
            fields=(_const_field([1.0, 0.0]), _const_field([0.0, 1.0])),
            jac0=j0,
            jacs=(_zero_jac(2), _zero_jac(2)),
            domain=dom,
            control_range=rng_,
        )
    raise InputRejectedError(f"unknown system id {system_id!r}; catalog: {CATALOG}")
