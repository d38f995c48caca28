"""Piecewise-constant admissible controls and box control ranges.

Controls are right-continuous step functions on a finite window, extended by
their first/last value outside the window.  Time shifts are stored as an
offset against the immutable knot array, so shift composition and round trips
are exact (no resampled breakpoints, no floating drift in values).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import InputRejectedError


@dataclass(frozen=True)
class ControlRange:
    """Box control range ``center + rho * [-half_widths, +half_widths]``."""

    center: np.ndarray
    half_widths: np.ndarray
    rho: float = 1.0

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float)).copy()
        h = np.atleast_1d(np.asarray(self.half_widths, dtype=float)).copy()
        if c.ndim != 1 or h.shape != c.shape:
            raise InputRejectedError("center and half_widths must be 1-d arrays of equal length")
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(h)):
            raise InputRejectedError("control range entries must be finite")
        if not np.all(h > 0):
            raise InputRejectedError("half_widths must be strictly positive componentwise")
        if not (0.0 < float(self.rho) <= 1.0):
            raise InputRejectedError(f"rho must lie in (0, 1], got {self.rho}")
        c.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_widths", h)
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.rho * self.half_widths

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.rho * self.half_widths

    @property
    def diameter(self) -> float:
        """Euclidean diameter of the effective box."""
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, values, tol: float = 1e-12) -> bool:
        v = np.atleast_2d(np.asarray(values, dtype=float))
        return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))

    def vertices(self) -> np.ndarray:
        """All corners of the effective box, shape (2^m, m), lexicographic order."""
        m = self.dim
        lo, hi = self.lo, self.hi
        out = np.empty((2**m, m))
        for i in range(2**m):
            for j in range(m):
                out[i, j] = hi[j] if (i >> (m - 1 - j)) & 1 else lo[j]
        return out

    def sample(self, rng, k: int = 1) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(k, self.dim))

    def shrink(self, rho: float) -> "ControlRange":
        if not (0.0 < rho <= 1.0):
            raise InputRejectedError(f"shrink factor must lie in (0, 1], got {rho}")
        return ControlRange(self.center, self.half_widths, self.rho * rho)


def shrink_control_range(control_range: ControlRange, rho: float) -> ControlRange:
    """Scale the effective half-widths by rho about the range center."""
    return control_range.shrink(rho)


@dataclass(frozen=True)
class ControlFunction:
    """Right-continuous piecewise-constant control.

    ``knots`` has K+1 strictly increasing entries and ``values`` K rows; on
    ``[knots[i], knots[i+1])`` the value is ``values[i]``.  Outside the window
    the first/last value extends constantly.  Evaluation happens at
    ``t + offset`` in the base clock, so ``shift`` only changes ``offset``.
    """

    knots: np.ndarray
    values: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float).copy()
        v = np.asarray(self.values, dtype=float).copy()
        if v.ndim == 1:
            v = v[:, None]
        if k.ndim != 1 or k.shape[0] < 2:
            raise InputRejectedError("knots must contain at least two times")
        if not np.all(np.diff(k) > 0):
            raise InputRejectedError("knots must be strictly increasing")
        if v.shape[0] != k.shape[0] - 1:
            raise InputRejectedError("values must have one row per knot interval")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
            raise InputRejectedError("control data must be finite")
        k.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "offset", float(self.offset))

    # -- basic geometry -------------------------------------------------

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def window(self) -> tuple[float, float]:
        return (self.knots[0] - self.offset, self.knots[-1] - self.offset)

    @property
    def breakpoints(self) -> np.ndarray:
        """All knot times in the evaluation clock (window ends included)."""
        return self.knots - self.offset

    def __call__(self, t):
        tt = np.asarray(t, dtype=float)
        scalar = tt.ndim == 0
        idx = np.searchsorted(self.knots, np.atleast_1d(tt) + self.offset, side="right") - 1
        idx = np.clip(idx, 0, self.values.shape[0] - 1)
        out = self.values[idx]
        return out[0] if scalar else out

    # -- constructors ----------------------------------------------------

    @staticmethod
    def constant(value, window=(0.0, 1.0)) -> "ControlFunction":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return ControlFunction(np.array([window[0], window[1]]), v[None, :])

    @staticmethod
    def from_steps(breaks, values) -> "ControlFunction":
        return ControlFunction(np.asarray(breaks, dtype=float), np.asarray(values, dtype=float))

    # -- exact operations --------------------------------------------------

    def shift(self, t: float) -> "ControlFunction":
        """The time shift u(t + .): exact knot relabeling via the offset."""
        return dataclasses.replace(self, offset=self.offset + t)

    def reversed_time(self) -> "ControlFunction":
        """A right-continuous representative of s -> u(-s) (a.e. equal)."""
        eff = self.knots - self.offset
        return ControlFunction(-eff[::-1], self.values[::-1], 0.0)


def shift(u: ControlFunction, t: float) -> ControlFunction:
    return u.shift(t)


def _union_cells(u: ControlFunction, v: ControlFunction):
    """Union knot grid covering both windows, with midpoints for exact lookup."""
    edges = np.union1d(u.knots - u.offset, v.knots - v.offset)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return edges, mids


def convex_combination(u: ControlFunction, v: ControlFunction, tau: float) -> ControlFunction:
    """(1 - tau) u + tau v, piecewise constant on the union of breakpoints."""
    if u.dim != v.dim:
        raise InputRejectedError("controls must share the control dimension")
    if not (0.0 <= tau <= 1.0):
        raise InputRejectedError(f"tau must lie in [0, 1], got {tau}")
    edges, mids = _union_cells(u, v)
    vals = (1.0 - tau) * u(mids) + tau * v(mids)
    return ControlFunction(edges, vals)


def sup_norm_distance(u: ControlFunction, v: ControlFunction) -> float:
    """Exact essential sup of |u(t) - v(t)| (Euclidean norm pointwise)."""
    if u.dim != v.dim:
        raise InputRejectedError("controls must share the control dimension")
    _, mids = _union_cells(u, v)
    # constant extensions beyond the union window are covered by the first
    # and last cells only when the windows coincide; probe both tails too
    lo = min(u.window[0], v.window[0]) - 1.0
    hi = max(u.window[1], v.window[1]) + 1.0
    probes = np.concatenate([[lo], mids, [hi]])
    return float(np.max(np.linalg.norm(u(probes) - v(probes), axis=1)))


def functionally_equal(u: ControlFunction, v: ControlFunction, tol: float = 0.0) -> bool:
    """Equality as functions on all of R (window extensions included)."""
    if u.dim != v.dim:
        return False
    return sup_norm_distance(u, v) <= tol


def random_piecewise(control_range: ControlRange, window, piece: float, rng) -> ControlFunction:
    """Uniformly sampled piecewise-constant control with equal piece lengths.

    Piece boundaries lie on multiples of ``piece`` from the window start, so a
    fixed-step integrator whose step divides ``piece`` never straddles a
    switch.
    """
    t0, t1 = float(window[0]), float(window[1])
    if not (t1 > t0 and piece > 0):
        raise InputRejectedError("window must be nonempty and piece positive")
    n = max(1, int(round((t1 - t0) / piece)))
    edges = t0 + piece * np.arange(n + 1)
    edges[-1] = t0 + piece * n
    vals = control_range.sample(rng, n)
    return ControlFunction(edges, vals)
