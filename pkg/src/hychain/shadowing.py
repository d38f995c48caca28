"""Constructive shadowing for the time-1 skew-product map and fiber transport.

A finite pseudo-orbit window [-K, K] is corrected by a Newton iteration on
the orbit-defect system with hyperbolic boundary closure: the unstable
component of the correction is pinned at +K and the stable component at -K.
The linearized system is solved blockwise in splitting coordinates (one
backward substitution for the unstable part, one forward for the stable
part), never as a monolithic solve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .chains import ChainControlSet, equilibria, fiber
from .controls import ControlFunction, functionally_equal, random_piecewise, sup_norm_distance
from .errors import InputRejectedError, NewtonStagnationError, ToolkitError
from .metric import delta_for_epsilon, du_distance, make_test_family, tail_N_for_epsilon
from .splitting import WindowFrames, window_frames_from_steps
from .systems import ControlAffineSystem, flow_batch, shifted_eval
from .util import parallel_map

log = logging.getLogger(__name__)

DEFAULT_WINDOW_K = 20
DEFAULT_ORBIT_TOL = 1e-10
DEFAULT_SHADOW_STEP = 1e-2


# -- pseudo-orbits ---------------------------------------------------------------


@dataclass(frozen=True)
class PseudoOrbit:
    """Window [-K, K] of states over the base sequence theta^k(base_control).

    ``controls``, when given, overrides the implicit exact shifts and is only
    there so coherence violations can be represented (and rejected).
    """

    base_control: ControlFunction
    states: np.ndarray
    window: int
    alpha: float
    controls: tuple | None = None

    @property
    def length(self) -> int:
        return 2 * self.window + 1

    def control_at(self, k: int) -> ControlFunction:
        if self.controls is not None:
            return self.controls[k + self.window]
        return self.base_control.shift(float(k))


def _window_step(sys, base_control, states, step, tangent=False):
    """One time-1 skew-product step applied to every window index but the last."""
    K = (states.shape[0] - 1) // 2
    ks = np.arange(-K, K, dtype=float)
    return flow_batch(sys, states[:-1], shifted_eval(base_control, ks), 1.0, step,
                      tangent=tangent)


def _jumps(sys, pseudo_states, base_control, step):
    res = _window_step(sys, base_control, pseudo_states, step)
    return sys.domain.distance(res.states, pseudo_states[1:])


def make_pseudo_orbit(sys, base_control: ControlFunction, states, step: float = DEFAULT_SHADOW_STEP,
                      controls=None) -> PseudoOrbit:
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[0] < 3 or states.shape[0] % 2 == 0:
        raise InputRejectedError("states must have odd length 2K+1 >= 3")
    K = (states.shape[0] - 1) // 2
    alpha = float(np.max(_jumps(sys, states, base_control, step)))
    return PseudoOrbit(base_control=base_control, states=states, window=K,
                       alpha=alpha, controls=tuple(controls) if controls else None)


def pseudo_from_orbit(sys, u: ControlFunction, x, K: int,
                      step: float = DEFAULT_SHADOW_STEP) -> PseudoOrbit:
    """Exact-orbit window through (u, x): states phi(k, x, u), k in [-K, K]."""
    from .systems import reversed_system

    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.shape[0]
    states = np.empty((2 * K + 1, n))
    states[K] = x
    rec = flow_batch(sys, x[None, :], shifted_eval(u, np.zeros(1)), float(K), step,
                     record_at=[float(j) for j in range(1, K + 1)])
    for t, S, _ in rec.records:
        states[K + int(round(t))] = S[0]
    ru = u.reversed_time()
    rec = flow_batch(reversed_system(sys), x[None, :], shifted_eval(ru, np.zeros(1)),
                     float(K), step, record_at=[float(j) for j in range(1, K + 1)])
    for t, S, _ in rec.records:
        states[K - int(round(t))] = S[0]
    return make_pseudo_orbit(sys, u, states, step)


def _check_coherence(pseudo: PseudoOrbit) -> None:
    if pseudo.controls is None:
        return
    if len(pseudo.controls) != pseudo.length:
        raise InputRejectedError("explicit control sequence length must be 2K+1")
    for k in range(len(pseudo.controls) - 1):
        if not functionally_equal(pseudo.controls[k].shift(1.0), pseudo.controls[k + 1]):
            raise InputRejectedError(
                f"base sequence incoherent at index {k - pseudo.window}: "
                "controls must be exact unit shifts of each other")


def is_pseudo_orbit(sys, pseudo: PseudoOrbit, alpha: float,
                    step: float = DEFAULT_SHADOW_STEP) -> bool:
    """True iff all recomputed jumps are < alpha; an incoherent base sequence
    is rejected as invalid input (distinct from returning False)."""
    if pseudo.window < 1:
        raise InputRejectedError("window must be >= 1")
    _check_coherence(pseudo)
    return bool(np.max(_jumps(sys, pseudo.states, pseudo.base_control, step)) < alpha)


# -- the shadowing solver ----------------------------------------------------------


@dataclass
class ShadowResult:
    pseudo: PseudoOrbit
    states: np.ndarray
    beta: float
    residual: float
    newton_iters: int
    window_short: bool
    frames: WindowFrames | None = None

    @property
    def y0(self) -> np.ndarray:
        return self.states[self.pseudo.window]


def _hyperbolic_correction(A, R, D, frames: WindowFrames) -> np.ndarray:
    """Solve A_k d_k - d_{k+1} = -R_k blockwise in splitting coordinates.

    The boundary closure is anchored to the pseudo-orbit through the current
    deviations D = Y - X: the correction drives the unstable coordinate of
    the deviation to zero at the right end, and the stable coordinate at the
    left end, which makes the converged orbit independent of the Newton
    seed."""
    L = A.shape[0] + 1
    n = A.shape[1]
    kp = frames.k_plus
    km = n - kp
    a = np.zeros((L, kp))
    b = np.zeros((L, km))
    if kp:
        QpK = np.eye(n) - frames.P[L - 1]
        a[L - 1] = -(frames.B_plus[L - 1].T @ (QpK @ D[L - 1]))
        for k in range(L - 2, -1, -1):
            Qp = np.eye(n) - frames.P[k + 1]
            M = frames.B_plus[k + 1].T @ (Qp @ A[k] @ frames.B_plus[k])
            rt = frames.B_plus[k + 1].T @ (Qp @ R[k])
            a[k] = np.linalg.solve(M, a[k + 1] - rt)
    if km:
        b[0] = -(frames.B_minus[0].T @ (frames.P[0] @ D[0]))
        for k in range(L - 1):
            N = frames.B_minus[k + 1].T @ (frames.P[k + 1] @ A[k] @ frames.B_minus[k])
            st = frames.B_minus[k + 1].T @ (frames.P[k + 1] @ R[k])
            b[k + 1] = N @ b[k] + st
    delta = np.zeros((L, n))
    for k in range(L):
        if kp:
            delta[k] += frames.B_plus[k] @ a[k]
        if km:
            delta[k] += frames.B_minus[k] @ b[k]
    return delta


def shadow(sys: ControlAffineSystem, pseudo: PseudoOrbit, splittings: WindowFrames | None = None,
           orbit_tol: float = DEFAULT_ORBIT_TOL, max_iters: int = 30,
           step: float = DEFAULT_SHADOW_STEP, gap_tol: float = 0.1,
           frame_seed: int = 13, initial_guess=None) -> ShadowResult:
    """Newton-correct the pseudo-orbit into a genuine orbit of the time-1 map.

    Splitting frames default to QR filtrations of the window's own one-step
    tangents.  Raises :class:`NewtonStagnationError` with the defect trace if
    the residual does not reach orbit_tol.
    """
    _check_coherence(pseudo)
    X = pseudo.states
    Y = X.copy() if initial_guess is None else np.asarray(initial_guess, dtype=float).copy()
    if Y.shape != X.shape:
        raise InputRejectedError("initial_guess must match the pseudo-orbit shape")
    frames = splittings
    trace = []
    iters = 0
    while True:
        res = _window_step(sys, pseudo.base_control, Y, step, tangent=True)
        R = -sys.domain.diff(Y[1:], res.states)          # phi(1, y_k) - y_{k+1}
        residual = float(np.max(np.linalg.norm(R, axis=1)))
        trace.append(residual)
        if residual <= orbit_tol:
            break
        if iters >= max_iters:
            raise NewtonStagnationError(
                f"shadowing Newton stalled at residual {residual:.3e} "
                f"(orbit_tol {orbit_tol:.3e})", defect_trace=trace)
        if frames is None:
            frames = window_frames_from_steps(res.tangents, gap_tol=gap_tol,
                                              frame_seed=frame_seed)
        D = sys.domain.diff(Y, X)
        Y = sys.domain.wrap(Y + _hyperbolic_correction(res.tangents, R, D, frames))
        iters += 1
    if frames is None:
        frames = window_frames_from_steps(res.tangents, gap_tol=gap_tol,
                                          frame_seed=frame_seed)
    beta = float(np.max(sys.domain.distance(Y, X)))
    window_short = bool(math.exp(-frames.lambda_min * pseudo.window) > 1e-2)
    if window_short:
        log.warning("shadow window K=%d short for rate %.3g: boundary effects "
                    "may dominate", pseudo.window, frames.lambda_min)
    return ShadowResult(pseudo=pseudo, states=Y, beta=beta, residual=residual,
                        newton_iters=iters, window_short=window_short, frames=frames)


def uniqueness_check(sys, pseudo: PseudoOrbit, result_a: ShadowResult,
                     result_b: ShadowResult, beta0: float,
                     merge_tol: float = 1e-7) -> bool:
    """Oracle that two shadow runs of the same pseudo-orbit found one orbit."""
    if result_a.pseudo is not pseudo or result_b.pseudo is not pseudo:
        if not (np.array_equal(result_a.pseudo.states, pseudo.states)
                and np.array_equal(result_b.pseudo.states, pseudo.states)):
            raise InputRejectedError("both results must shadow the given pseudo-orbit")
    if not (result_a.beta < beta0 and result_b.beta < beta0):
        raise InputRejectedError("both results must have beta < beta0")
    gap = float(np.max(sys.domain.distance(result_a.states, result_b.states)))
    return gap <= merge_tol


# -- fiber transport -----------------------------------------------------------------


def fiber_transport(sys: ControlAffineSystem, Q: ChainControlSet, u: ControlFunction,
                    v: ControlFunction, x, window_K: int = DEFAULT_WINDOW_K,
                    orbit_tol: float = DEFAULT_ORBIT_TOL, max_iters: int = 30,
                    step: float = DEFAULT_SHADOW_STEP, inflate: float = 1.15,
                    metric_guard=None, details: bool = False, source_states=None):
    """Transport x in fiber(u) to the corresponding point of fiber(v).

    The u-orbit of x, re-driven by v, is an alpha-pseudo-orbit of the time-1
    map; its shadow orbit starts at the transported point.  The shadow orbit
    is probed for containment in the inflated hull of Q (a failure is logged
    as an isolation warning, not raised).  ``metric_guard=(family, eps,
    t_samples)`` additionally enforces the sampled sup-shift-distance
    precondition.  ``source_states`` short-circuits the u-orbit integration
    when the caller already holds the window orbit through x.
    """
    if metric_guard is not None:
        family, eps, t_samples = metric_guard
        from .metric import sup_shift_distance

        N = tail_N_for_epsilon(eps)
        d = sup_shift_distance(u, v, family, N, t_samples)
        if d >= eps:
            raise InputRejectedError(
                f"sampled sup shift distance {d:.3g} exceeds the required bound {eps:.3g}")
    if source_states is None:
        source_states = pseudo_from_orbit(sys, u, x, window_K, step).states
    else:
        source_states = np.asarray(source_states, dtype=float)
        if not np.allclose(source_states[(source_states.shape[0] - 1) // 2],
                           np.atleast_1d(x), atol=1e-9):
            raise InputRejectedError("source_states must be a window orbit through x")
    pseudo = make_pseudo_orbit(sys, v, source_states, step)
    result = shadow(sys, pseudo, orbit_tol=orbit_tol, max_iters=max_iters, step=step)
    if not bool(np.all(Q.region_contains(result.states, inflate))):
        log.warning("fiber_transport: shadow orbit leaves the inflated hull "
                    "(isolation violation?)")
    return (result.y0, result) if details else result.y0


@dataclass
class TransportLeg:
    tau: float
    point: np.ndarray
    alpha: float
    beta: float


def homotopy_transport(sys: ControlAffineSystem, Q: ChainControlSet, u: ControlFunction,
                       v: ControlFunction, x, eps_step: float = 0.8, family=None,
                       **transport_kwargs):
    """Transport along the convex control path w_tau = (1-tau) u + tau v.

    [0, 1] is partitioned so consecutive path controls are closer than
    delta(eps_step) in sup norm (their distance is at most the tau increment
    times the range diameter), then the fiber map is applied leg by leg.
    Returns the endpoint and the per-leg path record.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    family = family if family is not None else make_test_family(u.dim, depth=32)
    delta = delta_for_epsilon(eps_step, family)
    dist = sup_norm_distance(u, v)
    n_legs = max(1, int(np.ceil(dist / delta - 1e-12)))
    taus = np.linspace(0.0, 1.0, n_legs + 1)
    from .controls import convex_combination

    current = x
    carried_orbit = None
    path = [TransportLeg(tau=0.0, point=current.copy(), alpha=0.0, beta=0.0)]
    for i in range(n_legs):
        w_a = convex_combination(u, v, float(taus[i]))
        w_b = convex_combination(u, v, float(taus[i + 1]))
        try:
            current, res = fiber_transport(sys, Q, w_a, w_b, current, details=True,
                                           source_states=carried_orbit, **transport_kwargs)
        except ToolkitError as err:
            err.partial_path = path
            raise
        carried_orbit = res.states        # the w_b-orbit through the new point
        path.append(TransportLeg(tau=float(taus[i + 1]), point=current.copy(),
                                 alpha=res.pseudo.alpha, beta=res.beta))
    return current, path


# -- graph verification ------------------------------------------------------------------


@dataclass
class GraphVerifyReport:
    hypothesis_failed: bool
    singleton_rate: float
    max_discrepancy: float
    roundtrip_max: float
    continuity_pairs: list
    failures: list
    points: list
    n_controls: int
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "hypothesis_failed": self.hypothesis_failed,
            "singleton_rate": self.singleton_rate,
            "max_discrepancy": self.max_discrepancy,
            "roundtrip_max": self.roundtrip_max,
            "continuity_pairs": self.continuity_pairs,
            "failures": self.failures,
            "points": self.points,
            "n_controls": self.n_controls,
            "note": self.note,
        }


def graph_verify(sys: ControlAffineSystem, Q: ChainControlSet, u0_value,
                 n_controls: int = 100, seed: int = 0, family=None, threads: int = 1,
                 window_K: int = DEFAULT_WINDOW_K, eps_step: float = 0.8,
                 piece: float = 0.5, control_window: float = 24.0,
                 step: float = DEFAULT_SHADOW_STEP, fiber_kwargs=None,
                 continuity_samples: int = 40, roundtrip_samples: int = 5,
                 metric_N: int = 16) -> GraphVerifyReport:
    """Sample random controls and compare the transported fiber point against
    an independent fiber computation; report singleton rate, cross-method
    discrepancy, round trips, and an empirical continuity modulus.

    Requires fiber(u0) to be a singleton for the constant control u0 (checked
    through the frozen-field equilibria); otherwise the report states that
    the hypothesis failed.
    """
    u0_value = np.atleast_1d(np.asarray(u0_value, dtype=float))
    family = family if family is not None else make_test_family(sys.dim_m, depth=32)
    fiber_kwargs = dict(fiber_kwargs or {})

    eqs = equilibria(sys, u0_value, Q.grid)
    member = Q.member_mask()
    inside = [e for e in eqs
              if (c := Q.grid.point_to_cell(e.point)) >= 0 and member[c]]
    if len(inside) != 1:
        return GraphVerifyReport(
            hypothesis_failed=True, singleton_rate=0.0, max_discrepancy=float("inf"),
            roundtrip_max=float("inf"), continuity_pairs=[], failures=[],
            points=[], n_controls=0,
            note=f"fiber of the base constant control has {len(inside)} equilibria "
                 "inside the set; the singleton hypothesis fails")
    x0 = inside[0].point
    u0 = ControlFunction.constant(u0_value, window=(0.0, 1.0))

    controls = [random_piecewise(sys.control_range, (-control_window, control_window),
                                 piece, np.random.default_rng([seed, j]))
                for j in range(n_controls)]

    def run_one(j):
        vj = controls[j]
        out = {"index": j, "error": None}
        try:
            pt, _ = homotopy_transport(sys, Q, u0, vj, x0, eps_step=eps_step,
                                       family=family, window_K=window_K, step=step)
            out["transport_point"] = pt
            fib = fiber(sys, Q, vj, **fiber_kwargs)
            out["fiber_points"] = fib.points
        except ToolkitError as err:
            out["error"] = f"{type(err).__name__}: {err}"
        return out

    results = parallel_map(run_one, range(n_controls), threads=threads)

    failures = [r["error"] for r in results if r["error"]]
    ok = [r for r in results if not r["error"]]
    singletons = sum(1 for r in ok if len(r["fiber_points"]) == 1)
    disc = 0.0
    for r in ok:
        if len(r["fiber_points"]):
            d = float(np.min(np.linalg.norm(r["fiber_points"] - r["transport_point"], axis=1)))
        else:
            d = float("inf")
        disc = max(disc, d)

    rng = np.random.default_rng([seed, 997])
    rt_max = 0.0
    for j in range(min(roundtrip_samples, len(ok))):
        vj = controls[ok[j]["index"]]
        y = fiber_transport(sys, Q, u0, vj, x0, window_K=window_K, step=step)
        back = fiber_transport(sys, Q, vj, u0, y, window_K=window_K, step=step)
        rt_max = max(rt_max, float(np.linalg.norm(back - x0)))

    pairs = []
    if len(ok) >= 2:
        N = min(metric_N, len(family))
        all_pairs = [(i, j) for i in range(len(ok)) for j in range(i + 1, len(ok))]
        rng.shuffle(all_pairs)
        for i, j in all_pairs[:continuity_samples]:
            vi, vj = controls[ok[i]["index"]], controls[ok[j]["index"]]
            pairs.append({
                "du": du_distance(vi, vj, family, N),
                "dx": float(np.linalg.norm(ok[i]["transport_point"] - ok[j]["transport_point"])),
            })

    return GraphVerifyReport(
        hypothesis_failed=False,
        singleton_rate=(singletons / len(ok)) if ok else 0.0,
        max_discrepancy=disc,
        roundtrip_max=rt_max,
        continuity_pairs=pairs,
        failures=failures,
        points=[np.asarray(r["transport_point"]).tolist() for r in ok],
        n_controls=n_controls,
    )
