"""Hyperbolic splittings along lifted trajectories.

Subspaces are estimated with finite-window forward/backward growth
filtrations (tangent propagation with periodic QR re-orthonormalization).
The expanding dimension is the number of positive finite-time exponents; a
near-zero exponent is refused as a center direction rather than guessed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import ControlFunction
from .errors import CenterDirectionError, InputRejectedError
from .systems import ControlAffineSystem, flow, flow_batch, reversed_system, shifted_eval, variational_flow

DEFAULT_WINDOW_T = 10.0
DEFAULT_GAP_TOL = 0.1
DEFAULT_SPLIT_STEP = 1e-2


@dataclass
class HyperbolicSplitting:
    """Estimated splitting E+ (+) E- at one lift point, with rate constants.

    P projects onto E- along E+.  The discrete time-1 constants are tied to
    the continuous ones: C = 1/c, mu = exp(-lambda)."""

    state: np.ndarray
    control: ControlFunction
    E_plus: np.ndarray       # (n, k+), orthonormal columns
    E_minus: np.ndarray      # (n, k-), orthonormal columns
    P: np.ndarray            # (n, n)
    exponents: np.ndarray    # (n,) forward finite-time exponents, descending
    c_est: float = 1.0
    lambda_est: float = 0.0

    @property
    def k_plus(self) -> int:
        return self.E_plus.shape[1]

    @property
    def k_minus(self) -> int:
        return self.E_minus.shape[1]

    @property
    def C_est(self) -> float:
        return 1.0 / self.c_est

    @property
    def mu_est(self) -> float:
        return float(np.exp(-self.lambda_est))


def principal_angle(A: np.ndarray, B: np.ndarray) -> float:
    """Largest principal angle between the column spans of A and B."""
    if A.size == 0 and B.size == 0:
        return 0.0
    if A.shape[1] != B.shape[1]:
        raise InputRejectedError("principal_angle needs equal subspace dimensions")
    Qa, _ = np.linalg.qr(A)
    Qb, _ = np.linalg.qr(B)
    s = np.linalg.svd(Qa.T @ Qb, compute_uv=False)
    return float(np.arccos(np.clip(np.min(s), -1.0, 1.0)))


def _haar_frame(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def _qr_positive(W: np.ndarray):
    Q, R = np.linalg.qr(W)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s, np.abs(np.diag(R))


def _propagate_frame(sys, u, x, total_T, step, frame, qr_every=1.0):
    """Push an orthonormal frame along the trajectory of (u, x) for total_T,
    re-orthonormalizing every qr_every; returns (end state, end frame,
    list of (chunk length, per-column log growth))."""
    chunk_logs = []
    t = 0.0
    X = np.atleast_2d(np.asarray(x, dtype=float))
    while t < total_T - 1e-12:
        chunk = min(qr_every, total_T - t)
        res = flow_batch(sys, X, shifted_eval(u, np.array([t])), chunk, step, tangent=True)
        X = res.states
        frame, diag = _qr_positive(res.tangents[0] @ frame)
        chunk_logs.append((chunk, np.log(diag)))
        t += chunk
    return X[0], frame, chunk_logs


def _exponents_with_warmup(chunk_logs, warm_frac: float = 0.3):
    """Average growth rates, discarding the leading warm-up fraction where the
    frame is still aligning itself to the dominant filtration."""
    skip = int(len(chunk_logs) * warm_frac)
    if len(chunk_logs) - skip < 1:
        skip = max(0, len(chunk_logs) - 1)
    total_t = sum(c for c, _ in chunk_logs[skip:])
    acc = sum((lg for _, lg in chunk_logs[skip:]), start=np.zeros_like(chunk_logs[0][1]))
    return acc / total_t


def estimate_splitting(sys: ControlAffineSystem, u: ControlFunction, x,
                       window_T: float = DEFAULT_WINDOW_T,
                       step: float = DEFAULT_SPLIT_STEP,
                       gap_tol: float = DEFAULT_GAP_TOL,
                       frame_seed: int = 13) -> HyperbolicSplitting:
    """Estimate E+/E- at (u, x) from forward/backward growth filtrations.

    E+ is the dominant subspace of the tangent flow transported from time
    -window_T up to x; E- its analogue under time reversal.  Raises
    :class:`CenterDirectionError` when some finite-time exponent is closer to
    zero than gap_tol.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = sys.dim_n
    frame0 = _haar_frame(n, frame_seed)

    xm = flow(sys, x, u, -window_T, step, guard=False)
    _, frame_f, logs_f = _propagate_frame(sys, u.shift(-window_T), xm, window_T, step, frame0)
    exponents = _exponents_with_warmup(logs_f)
    if not np.all(np.diff(exponents) <= 1e-9):
        order = np.argsort(exponents)[::-1]
        exponents = exponents[order]
        frame_f = frame_f[:, order]
    if float(np.min(np.abs(exponents))) < gap_tol:
        raise CenterDirectionError(
            f"finite-time exponent {exponents} within gap_tol={gap_tol} of zero: "
            "no splitting without a center direction")
    k_plus = int(np.sum(exponents > 0))
    k_minus = n - k_plus
    E_plus = frame_f[:, :k_plus]

    if k_minus > 0:
        xp = flow(sys, x, u, window_T, step, guard=False)
        rsys = reversed_system(sys)
        ru = u.shift(window_T).reversed_time()
        _, frame_b, logs_b = _propagate_frame(rsys, ru, xp, window_T, step, frame0)
        exps_b = _exponents_with_warmup(logs_b)
        order_b = np.argsort(exps_b)[::-1]
        E_minus = frame_b[:, order_b][:, :k_minus]
    else:
        E_minus = np.zeros((n, 0))

    P = _projection_onto_minus(E_plus, E_minus)
    lam = float(np.min(np.abs(exponents)))
    return HyperbolicSplitting(state=x, control=u, E_plus=E_plus, E_minus=E_minus,
                               P=P, exponents=exponents, c_est=1.0, lambda_est=lam)


def _projection_onto_minus(E_plus: np.ndarray, E_minus: np.ndarray) -> np.ndarray:
    n = E_plus.shape[0]
    k_minus = E_minus.shape[1]
    if k_minus == 0:
        return np.zeros((n, n))
    if E_plus.shape[1] == 0:
        return np.eye(n)
    S = np.hstack([E_minus, E_plus])
    D = np.zeros((n, n))
    D[:k_minus, :k_minus] = np.eye(k_minus)
    return S @ D @ np.linalg.inv(S)


@dataclass
class RateFit:
    c_est: float
    lambda_est: float
    violations: list = field(default_factory=list)


def verify_rates(splitting: HyperbolicSplitting, sys: ControlAffineSystem,
                 t_samples, n_vectors: int = 8, step: float = DEFAULT_SPLIT_STEP,
                 seed: int = 0) -> RateFit:
    """Fit the decay/growth constants on sampled times and unit vectors.

    lambda is the least-squares slope of the extreme singular-value curves of
    the tangent flow restricted to E-/E+; c <= 1 is the largest constant for
    which both exponential bounds hold at every sampled time.  Any sampled
    unit vector violating the fitted bounds is reported.
    """
    ts = np.sort(np.unique(np.asarray(t_samples, dtype=float)))
    ts = ts[ts > 0]
    if ts.size < 2:
        raise InputRejectedError("need at least two positive sample times")
    u, x = splitting.control, splitting.state
    res = flow_batch(sys, np.atleast_2d(x), shifted_eval(u, np.array([0.0])),
                     float(ts[-1]), step, tangent=True, record_at=ts)
    Ws = {round(t / step): W[0] for t, _, W in res.records}
    curves_minus, curves_plus = [], []
    for t in ts:
        W = Ws[round(t / step)]
        if splitting.k_minus:
            curves_minus.append(np.linalg.svd(W @ splitting.E_minus, compute_uv=False)[0])
        if splitting.k_plus:
            curves_plus.append(np.linalg.svd(W @ splitting.E_plus, compute_uv=False)[-1])
    lams = []
    if curves_minus:
        lams.append(-np.polyfit(ts, np.log(curves_minus), 1)[0])
    if curves_plus:
        lams.append(np.polyfit(ts, np.log(curves_plus), 1)[0])
    lam = float(min(lams))
    c = 1.0
    for t, g in zip(ts, curves_minus):
        c = min(c, np.exp(-lam * t) / g)
    for t, g in zip(ts, curves_plus):
        c = min(c, g * np.exp(-lam * t))
    c = float(max(c, 1e-300))

    rng = np.random.default_rng(seed)
    violations = []
    tol = 1e-9
    for t in ts:
        W = Ws[round(t / step)]
        for basis, side in ((splitting.E_minus, "minus"), (splitting.E_plus, "plus")):
            k = basis.shape[1]
            if k == 0:
                continue
            coeffs = rng.standard_normal((n_vectors, k))
            coeffs /= np.linalg.norm(coeffs, axis=1, keepdims=True)
            for cvec in coeffs:
                v = basis @ cvec
                growth = float(np.linalg.norm(W @ v))
                if side == "minus" and growth > np.exp(-lam * t) / c * (1 + tol):
                    violations.append({"t": float(t), "side": side, "growth": growth})
                if side == "plus" and growth < c * np.exp(lam * t) * (1 - tol):
                    violations.append({"t": float(t), "side": side, "growth": growth})
    splitting.c_est = c
    splitting.lambda_est = lam
    return RateFit(c_est=c, lambda_est=lam, violations=violations)


def projection_commutation(split_x: HyperbolicSplitting, split_img: HyperbolicSplitting,
                           sys: ControlAffineSystem, u: ControlFunction | None = None,
                           step: float = DEFAULT_SPLIT_STEP) -> float:
    """Operator norm of P(image) dphi_1 - dphi_1 P(x) along one time-1 step."""
    u = u if u is not None else split_x.control
    A = variational_flow(sys, split_x.state, u, 1.0, step)
    return float(np.linalg.norm(split_img.P @ A - A @ split_x.P, ord=2))


def unstable_log_determinant(sys: ControlAffineSystem, u: ControlFunction, x,
                             E_plus: np.ndarray, tau: float,
                             step: float = DEFAULT_SPLIT_STEP,
                             qr_every: float = 1.0) -> float:
    """log |det| of the tangent flow over [0, tau] restricted to E+,
    measured between orthonormal bases at both ends.

    Computed by accumulating QR normalization factors along the trajectory,
    which keeps the product well-conditioned for large tau."""
    if tau < 0:
        raise InputRejectedError("tau must be nonnegative")
    E_plus = np.asarray(E_plus, dtype=float)
    if E_plus.shape[1] == 0 or tau == 0:
        return 0.0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    B = E_plus.copy()
    total = 0.0
    t = 0.0
    X = np.atleast_2d(x)
    while t < tau - 1e-12:
        chunk = min(qr_every, tau - t)
        res = flow_batch(sys, X, shifted_eval(u, np.array([t])), chunk, step, tangent=True)
        X = res.states
        B, diag = _qr_positive(res.tangents[0] @ B)
        total += float(np.sum(np.log(diag)))
        t += chunk
    return total


@dataclass
class WindowFrames:
    """Per-index splitting frames along a finite orbit window."""
    B_plus: list
    B_minus: list
    P: list
    exponents: np.ndarray
    k_plus: int

    @property
    def lambda_min(self) -> float:
        return float(np.min(np.abs(self.exponents)))


def window_frames_from_steps(A: np.ndarray, gap_tol: float = DEFAULT_GAP_TOL,
                             frame_seed: int = 13, end_pad: int = 8) -> WindowFrames:
    """Splitting frames at the L = len(A)+1 points joined by the one-step
    tangent matrices A (A[k] maps point k to point k+1).

    Forward QR filtration of a generic frame yields E+ at every index;
    filtration under the inverse steps yields E-.  So that frames at the
    window ends are already warmed up, the step sequence is extended by
    ``end_pad`` frozen-coefficient copies of the first/last step before
    filtering.
    """
    A = np.asarray(A, dtype=float)
    L = A.shape[0] + 1
    n = A.shape[1]
    pad = max(0, int(end_pad))
    A_ext = np.concatenate([np.repeat(A[:1], pad, axis=0), A,
                            np.repeat(A[-1:], pad, axis=0)], axis=0)
    frame0 = _haar_frame(n, frame_seed)

    fw_ext = [frame0]
    chunk_logs = []
    frame = frame0
    for k in range(A_ext.shape[0]):
        frame, diag = _qr_positive(A_ext[k] @ frame)
        chunk_logs.append((1.0, np.log(diag)))
        fw_ext.append(frame)
    fw = fw_ext[pad:pad + L]
    exponents = _exponents_with_warmup(chunk_logs)
    if not np.all(np.diff(exponents) <= 1e-9):
        order = np.argsort(exponents)[::-1]
        exponents = exponents[order]
        fw = [F[:, order] for F in fw]
    if float(np.min(np.abs(exponents))) < gap_tol:
        raise CenterDirectionError(
            f"window exponents {exponents} within gap_tol={gap_tol} of zero")
    k_plus = int(np.sum(exponents > 0))
    k_minus = n - k_plus

    bw = [None] * L
    if k_minus > 0:
        frame = frame0
        chunk_logs_b = []
        bw_ext = [None] * (A_ext.shape[0] + 1)
        bw_ext[-1] = frame
        for k in range(A_ext.shape[0] - 1, -1, -1):
            frame, diag = _qr_positive(np.linalg.solve(A_ext[k], frame))
            chunk_logs_b.append((1.0, np.log(diag)))
            bw_ext[k] = frame
        bw = bw_ext[pad:pad + L]
        order_b = np.argsort(_exponents_with_warmup(chunk_logs_b))[::-1]
        bw = [F[:, order_b] for F in bw]

    B_plus, B_minus, P = [], [], []
    for k in range(L):
        Bp = fw[k][:, :k_plus]
        Bm = bw[k][:, :k_minus] if k_minus > 0 else np.zeros((n, 0))
        B_plus.append(Bp)
        B_minus.append(Bm)
        P.append(_projection_onto_minus(Bp, Bm))
    return WindowFrames(B_plus=B_plus, B_minus=B_minus, P=P,
                        exponents=exponents, k_plus=k_plus)
