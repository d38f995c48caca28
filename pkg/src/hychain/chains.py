"""Chain control sets from cell-graph strong components, fibers, and equilibria.

The transition graph is the standard set-oriented discretization: one fixed
transition time, constant controls per edge, and jump tolerance eps matched
against cell centers.  Because eps-jump recurrence over-approximates true
full-time invariance, the strong components are post-filtered by a
forward/backward viability sweep before they are reported.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .controls import ControlFunction, random_piecewise
from .errors import InputRejectedError
from .systems import (BoxDomain, ControlAffineSystem, const_eval, flow_batch,
                      reversed_system, shifted_eval)

log = logging.getLogger(__name__)


# -- grids --------------------------------------------------------------------


@dataclass(frozen=True)
class StateGrid:
    domain: object
    h: np.ndarray          # actual cell edge lengths per axis
    shape: tuple           # cells per axis

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def lo(self) -> np.ndarray:
        return self.domain.lo

    def centers(self, idx) -> np.ndarray:
        multi = np.stack(np.unravel_index(np.asarray(idx), self.shape), axis=-1)
        return self.lo + (multi + 0.5) * self.h

    def all_centers(self) -> np.ndarray:
        return self.centers(np.arange(self.n_cells))

    def cell_bounds(self, idx):
        multi = np.stack(np.unravel_index(np.asarray(idx), self.shape), axis=-1)
        lo = self.lo + multi * self.h
        return lo, lo + self.h

    def multi_of_points(self, X) -> np.ndarray:
        """Per-axis integer coordinates (not clipped, not wrapped)."""
        return np.floor((np.asarray(X, dtype=float) - self.lo) / self.h).astype(np.int64)

    def flatten_multi(self, multi):
        """Flat indices; wraps on tori, returns -1 for out-of-range boxes."""
        multi = np.asarray(multi)
        shape = np.asarray(self.shape)
        if self.domain.periodic:
            multi = np.mod(multi, shape)
            valid = np.ones(multi.shape[:-1], dtype=bool)
        else:
            valid = np.all((multi >= 0) & (multi < shape), axis=-1)
        flat = np.ravel_multi_index(np.moveaxis(np.clip(multi, 0, shape - 1), -1, 0), self.shape)
        return np.where(valid, flat, -1), valid

    def point_to_cell(self, X):
        flat, _ = self.flatten_multi(self.multi_of_points(X))
        return flat


def make_grid(domain, h) -> StateGrid:
    """Grid with cells tiling the domain exactly; h is adjusted per axis."""
    h = np.broadcast_to(np.atleast_1d(np.asarray(h, dtype=float)), (domain.dim,))
    if not np.all(h > 0):
        raise InputRejectedError("grid resolution must be positive")
    widths = domain.hi - domain.lo
    shape = tuple(int(max(1, round(w / hh))) for w, hh in zip(widths, h))
    actual = widths / np.asarray(shape)
    return StateGrid(domain=domain, h=actual, shape=shape)


# -- transition graph -----------------------------------------------------------


@dataclass
class CellGraph:
    grid: StateGrid
    params: dict
    edges_src: np.ndarray
    edges_dst: np.ndarray
    edge_slot: np.ndarray
    edge_row: np.ndarray
    slot_values: np.ndarray       # (n_slots, m)
    x_samples: np.ndarray         # (R, n) sampled start states
    cell_of_sample: np.ndarray    # (R,)
    fw_end: np.ndarray            # (n_slots, R, n)
    bw_end: np.ndarray            # (n_slots, R, n)
    fw_valid: np.ndarray          # (n_slots, R)
    bw_valid: np.ndarray          # (n_slots, R)
    escape_count: int
    degenerate: bool

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def n_edges(self) -> int:
        return self.edges_src.shape[0]

    def witness(self, edge_index: int):
        """(start state, control value) recorded for an edge."""
        s = int(self.edge_slot[edge_index])
        r = int(self.edge_row[edge_index])
        return self.x_samples[r], self.slot_values[s]


def _control_slots(control_range, controls_per_cell: int, rng) -> np.ndarray:
    """Deterministic vertex + center controls first, random fills after."""
    det = np.vstack([control_range.vertices(), control_range.center[None, :]])
    if controls_per_cell <= det.shape[0]:
        return det[:controls_per_cell]
    extra = control_range.sample(rng, controls_per_cell - det.shape[0])
    return np.vstack([det, extra])


def build_transition_graph(sys: ControlAffineSystem, grid: StateGrid, T: float,
                           eps: float, samples_per_cell: int = 1,
                           controls_per_cell: int = 5, seed: int = 0,
                           step: float = 1e-2) -> CellGraph:
    """Edges i -> j for every sampled (state, constant control) of cell i whose
    time-T endpoint lands within eps of the center of cell j.

    Backward endpoints are recorded alongside for the viability filter.
    Deterministic for a fixed seed.  Requires eps >= max cell edge so jumps
    can bridge adjacent cells.
    """
    if T <= 0:
        raise InputRejectedError("transition time T must be positive")
    if eps < float(np.max(grid.h)) - 1e-12:
        raise InputRejectedError(f"eps={eps} must be >= grid resolution {np.max(grid.h)}")
    rng = np.random.default_rng(seed)
    C = grid.n_cells
    n = grid.dim

    centers = grid.all_centers()
    sample_sets = [centers]
    for _ in range(samples_per_cell - 1):
        sample_sets.append(centers + (rng.random((C, n)) - 0.5) * grid.h)
    X = np.concatenate(sample_sets, axis=0)
    cell_of_sample = np.tile(np.arange(C, dtype=np.int64), samples_per_cell)
    R = X.shape[0]

    slots = _control_slots(sys.control_range, controls_per_cell, rng)
    n_slots = slots.shape[0]

    probe = sys.domain.sample(rng, 8)
    degenerate = max(float(np.max(np.abs(f(probe)))) for f in (sys.f0, *sys.fields)) < 1e-14

    guard = sys.domain.inflate(2.0) if not sys.domain.periodic else None
    contain = (lambda P: guard.contains(P)) if guard is not None else None
    rsys = reversed_system(sys)

    fw_end = np.empty((n_slots, R, n))
    bw_end = np.empty((n_slots, R, n))
    fw_valid = np.empty((n_slots, R), dtype=bool)
    bw_valid = np.empty((n_slots, R), dtype=bool)
    for s in range(n_slots):
        U = np.broadcast_to(slots[s], (R, len(slots[s])))
        res = flow_batch(sys, X, const_eval(U), T, step, contain=contain)
        fw_end[s] = res.states
        fw_valid[s] = np.isinf(res.exit_times)
        res_b = flow_batch(rsys, X, const_eval(U), T, step, contain=contain)
        bw_end[s] = res_b.states
        bw_valid[s] = np.isinf(res_b.exit_times)
    escape_count = int(np.sum(~fw_valid) + np.sum(~bw_valid))

    # edge extraction: all cells whose center lies within eps of an endpoint
    radius = np.maximum(1, np.ceil(eps / grid.h - 0.5).astype(int) + 1)
    offsets = np.array(list(itertools.product(*[range(-r, r + 1) for r in radius])))
    src_parts, dst_parts, slot_parts, row_parts = [], [], [], []
    for s in range(n_slots):
        ok = fw_valid[s]
        pts = fw_end[s][ok]
        rows = np.nonzero(ok)[0]
        base_multi = grid.multi_of_points(pts)
        for off in offsets:
            tgt_flat, valid = grid.flatten_multi(base_multi + off)
            if not np.any(valid):
                continue
            tc = grid.centers(np.where(valid, tgt_flat, 0))
            dist = sys.domain.distance(pts, tc)
            hit = valid & (dist < eps)
            if np.any(hit):
                src_parts.append(cell_of_sample[rows[hit]])
                dst_parts.append(tgt_flat[hit])
                slot_parts.append(np.full(int(hit.sum()), s, dtype=np.int16))
                row_parts.append(rows[hit].astype(np.int64))
    if src_parts:
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
        slot = np.concatenate(slot_parts)
        row = np.concatenate(row_parts)
        key = src * C + dst
        order = np.lexsort((row, slot, key))
        key, src, dst, slot, row = key[order], src[order], dst[order], slot[order], row[order]
        first = np.concatenate([[True], key[1:] != key[:-1]])
        src, dst, slot, row = src[first], dst[first], slot[first], row[first]
    else:
        src = dst = row = np.empty(0, dtype=np.int64)
        slot = np.empty(0, dtype=np.int16)

    return CellGraph(grid=grid,
                     params={"eps": float(eps), "T": float(T), "h": grid.h.tolist(),
                             "samples_per_cell": samples_per_cell,
                             "controls_per_cell": int(n_slots), "seed": seed,
                             "step": float(step)},
                     edges_src=src, edges_dst=dst, edge_slot=slot, edge_row=row,
                     slot_values=slots, x_samples=X, cell_of_sample=cell_of_sample,
                     fw_end=fw_end, bw_end=bw_end, fw_valid=fw_valid, bw_valid=bw_valid,
                     escape_count=escape_count, degenerate=degenerate)


# -- chain control sets ----------------------------------------------------------


@dataclass
class ChainControlSet:
    cells: np.ndarray
    hull_lo: np.ndarray
    hull_hi: np.ndarray
    params: dict
    grid: StateGrid

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def member_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.n_cells, dtype=bool)
        mask[self.cells] = True
        return mask

    @property
    def hull_center(self) -> np.ndarray:
        return 0.5 * (self.hull_lo + self.hull_hi)

    @property
    def hull_half(self) -> np.ndarray:
        return 0.5 * (self.hull_hi - self.hull_lo)

    def region_contains(self, X, inflate: float = 1.0) -> np.ndarray:
        """Membership in the hull box inflated about its center (torus-aware)."""
        d = np.abs(self.grid.domain.diff(X, self.hull_center))
        return np.all(d <= inflate * self.hull_half + 1e-12, axis=-1)


def _close_to_member_rows(grid: StateGrid, pts, member_mask, tol: float):
    """Rows of pts whose distance to the union of member cells is <= tol."""
    base_multi = grid.multi_of_points(pts)
    ok = np.zeros(pts.shape[0], dtype=bool)
    for off in itertools.product(*[(-1, 0, 1)] * grid.dim):
        tgt_flat, valid = grid.flatten_multi(base_multi + np.asarray(off))
        member = valid & member_mask[np.clip(tgt_flat, 0, None)] & (tgt_flat >= 0)
        if not np.any(member):
            continue
        centers = grid.centers(np.where(member, tgt_flat, 0))
        ax_dist = np.maximum(np.abs(grid.domain.diff(pts, centers)) - 0.5 * grid.h, 0.0)
        ok |= member & (np.linalg.norm(ax_dist, axis=-1) <= tol)
    return ok


def _viability_prune(graph: CellGraph, cells: np.ndarray, tol: float) -> np.ndarray:
    """Drop cells with no sampled control whose forward (and, separately,
    backward) time-T endpoint stays within tol of the remaining cell union."""
    member = np.zeros(graph.n_cells, dtype=bool)
    member[cells] = True
    while True:
        rows = np.nonzero(member[graph.cell_of_sample])[0]
        if rows.size == 0:
            return np.empty(0, dtype=np.int64)
        ok_fw = np.zeros(graph.n_cells, dtype=bool)
        ok_bw = np.zeros(graph.n_cells, dtype=bool)
        for s in range(graph.slot_values.shape[0]):
            for ends, valid, acc in ((graph.fw_end, graph.fw_valid, ok_fw),
                                     (graph.bw_end, graph.bw_valid, ok_bw)):
                vrows = rows[valid[s][rows]]
                if vrows.size == 0:
                    continue
                close = _close_to_member_rows(graph.grid, ends[s][vrows], member, tol)
                np.logical_or.at(acc, graph.cell_of_sample[vrows], close)
        keep = member & ok_fw & ok_bw
        if np.array_equal(keep, member):
            return np.nonzero(member)[0].astype(np.int64)
        member = keep


def _strong_components(graph: CellGraph, cells: np.ndarray):
    """Nontrivial strongly connected components of the induced subgraph."""
    if cells.size == 0:
        return []
    local = -np.ones(graph.n_cells, dtype=np.int64)
    local[cells] = np.arange(cells.size)
    es, ed = graph.edges_src, graph.edges_dst
    m = (local[es] >= 0) & (local[ed] >= 0)
    src, dst = local[es[m]], local[ed[m]]
    if src.size == 0:
        return []
    A = csr_matrix((np.ones(src.size, dtype=np.int8), (src, dst)),
                   shape=(cells.size, cells.size))
    _, labels = connected_components(A, directed=True, connection="strong")
    self_loop = np.zeros(cells.size, dtype=bool)
    self_loop[src[src == dst]] = True
    comps = []
    for lab in np.unique(labels):
        idx = np.nonzero(labels == lab)[0]
        if idx.size >= 2 or bool(self_loop[idx].any()):
            comps.append(np.sort(cells[idx]))
    return comps


def _hull_of_cells(grid: StateGrid, cells: np.ndarray):
    lo, hi = grid.cell_bounds(cells)
    return lo.min(axis=0), hi.max(axis=0)


def chain_control_sets(graph: CellGraph, viability_filter: bool = True,
                       viability_tol: float | None = None) -> list[ChainControlSet]:
    """Nontrivial strong components of the cell graph, sorted by size.

    Full-time membership (existence of an orbit staying inside) is certified
    approximately: by cycles through every member cell and, when
    viability_filter is on, by pruning cells that no sampled control can keep
    near the component in one forward or backward transition step.  The prune
    removes the spurious eps-jump bulge of the raw strong components.
    """
    if graph.degenerate:
        raise InputRejectedError(
            "all vector fields vanish on the sampled domain; every cell is trivially "
            "recurrent and the chain decomposition is meaningless")
    tol = float(np.min(graph.grid.h)) / 2.0 if viability_tol is None else float(viability_tol)
    if tol > float(np.min(graph.grid.h)) + 1e-12:
        raise InputRejectedError("viability_tol must not exceed the grid resolution")

    queue = _strong_components(graph, np.arange(graph.n_cells, dtype=np.int64))
    final = []
    while queue:
        comp = queue.pop()
        if viability_filter:
            pruned = _viability_prune(graph, comp, tol)
            if pruned.size == 0:
                continue
            if pruned.size != comp.size:
                queue.extend(_strong_components(graph, pruned))
                continue
        final.append(comp)
    final.sort(key=lambda c: (-c.size, int(c[0])))
    out = []
    for comp in final:
        lo, hi = _hull_of_cells(graph.grid, comp)
        params = dict(graph.params)
        params["viability_filter"] = viability_filter
        params["viability_tol"] = tol if viability_filter else None
        out.append(ChainControlSet(cells=comp, hull_lo=lo, hull_hi=hi,
                                   params=params, grid=graph.grid))
    return out


# -- equilibria -------------------------------------------------------------------


@dataclass
class Equilibrium:
    point: np.ndarray
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    hyperbolic: bool


def equilibria(sys: ControlAffineSystem, u0, grid: StateGrid,
               newton_tol: float = 1e-12, dedupe_tol: float = 1e-6,
               spectral_gap_tol: float = 1e-6, max_iters: int = 60) -> list[Equilibrium]:
    """Zeros of the frozen field f0 + sum u0_i f_i, Newton-seeded from every
    cell center, deduplicated, with eigenvalue data per root."""
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    if not sys.control_range.contains(u0):
        raise InputRejectedError(f"constant control {u0} outside the effective range")
    X = grid.all_centers()
    U = np.broadcast_to(u0, (X.shape[0], u0.shape[0]))
    active = np.ones(X.shape[0], dtype=bool)
    for _ in range(max_iters):
        F = sys.rhs_many(X, U)
        done = np.linalg.norm(F, axis=1) < newton_tol
        if np.all(done | ~active):
            break
        J = sys.jac_many(X, U)
        dets = np.abs(np.linalg.det(J))
        solvable = active & ~done & (dets > 1e-14)
        if not np.any(solvable):
            break
        delta = np.linalg.solve(J[solvable], F[solvable][..., None])[..., 0]
        X[solvable] -= delta
        blown = ~np.all(np.isfinite(X), axis=1) | (np.max(np.abs(X), axis=1) > 1e6)
        active &= ~blown
    F = sys.rhs_many(np.where(np.isfinite(X), X, 0.0), U)
    good = active & (np.linalg.norm(F, axis=1) < max(newton_tol, 1e-9))
    good &= np.asarray(sys.domain.contains(X, tol=1e-9)).reshape(-1)
    roots = X[good]
    log.info("equilibria: %d/%d seeds converged", int(good.sum()), X.shape[0])

    roots = roots[np.lexsort(roots.T[::-1])] if roots.size else roots
    out = []
    for r in roots:
        if any(np.linalg.norm(r - e.point) < dedupe_tol for e in out):
            continue
        J = sys.jac(r, u0)
        eig = np.linalg.eigvals(J)
        out.append(Equilibrium(point=r, jacobian=J, eigenvalues=eig,
                               hyperbolic=bool(np.min(np.abs(eig.real)) >= spectral_gap_tol)))
    return out


# -- fibers ------------------------------------------------------------------------


@dataclass
class LiftFiber:
    control: ControlFunction
    points: np.ndarray          # (P, n)
    horizon: float              # requested cap T_f
    certified_horizon: float    # containment verified over +/- this time
    tol: float                  # spatial resolution of the refinement

    def __len__(self) -> int:
        return self.points.shape[0]


def _expansion_bound(sys: ControlAffineSystem, lo, hi, n_samples: int = 64, seed: int = 0) -> float:
    """Upper bound on instantaneous expansion (both time directions): the
    largest absolute eigenvalue of the symmetrized Jacobian over samples."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(lo, hi, size=(n_samples, len(lo)))
    controls = np.vstack([sys.control_range.vertices(), sys.control_range.center[None, :]])
    worst = 0.0
    for u in controls:
        J = sys.jac_many(X, np.broadcast_to(u, (X.shape[0], len(u))))
        S = 0.5 * (J + np.swapaxes(J, 1, 2))
        worst = max(worst, float(np.max(np.abs(np.linalg.eigvalsh(S)))))
    return max(worst, 1e-6)


def fiber(sys: ControlAffineSystem, Q: ChainControlSet, u: ControlFunction,
          T_f: float = 40.0, grid: StateGrid | None = None, inflate: float = 1.15,
          target_res: float = 1e-4, max_levels: int = 18, rate_hint: float | None = None,
          step: float = 1e-2, seeds_per_axis: int = 15, min_horizon: float = 1.0,
          max_candidates: int = 200000) -> LiftFiber:
    """States whose full forward and backward orbit under u stays in Q
    (inflated by `inflate`), refined by bisection to sub-cell accuracy.

    At refinement level with cell size h the survival horizon is chosen so
    that a candidate within h*sqrt(n)/2 of a true fiber point provably
    survives (deviations grow at most like exp(rate * t)); spurious
    candidates die exponentially fast, which drives the bisection.
    Containment is certified over the final horizon, capped at T_f.
    """
    if inflate <= 1.0 + 1e-9:
        raise InputRejectedError("inflate must exceed 1 to leave a probe margin")
    grid = grid if grid is not None else Q.grid
    n = sys.dim_n
    hull_w = Q.hull_hi - Q.hull_lo
    margin = float(np.min((inflate - 1.0) * 0.5 * hull_w))
    lam_hi = rate_hint if rate_hint is not None else _expansion_bound(sys, Q.hull_lo, Q.hull_hi)

    axes = [Q.hull_lo[i] + (np.arange(seeds_per_axis) + 0.5) * hull_w[i] / seeds_per_axis
            for i in range(n)]
    cand = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    member = Q.member_mask()
    in_q = grid.point_to_cell(cand)
    cand = cand[(in_q >= 0) & member[np.clip(in_q, 0, None)]]
    h_lvl = hull_w / seeds_per_axis

    # A candidate within h*sqrt(n)/2 of a fiber point provably survives the
    # keep horizon below; a deviation can cross the whole region diameter D
    # before it exits, so spurious survivors shrink only to ~h * D / margin
    # and the refinement must continue D/margin beyond the target scale.
    diam = 2.0 * float(np.linalg.norm(inflate * 0.5 * hull_w))
    spread_factor = np.sqrt(n) * diam / (2.0 * margin)

    contain = lambda X: Q.region_contains(X, inflate)
    rsys = reversed_system(sys)
    ru = u.reversed_time()
    T_req = min_horizon
    for level in range(max_levels):
        if cand.shape[0] == 0:
            return LiftFiber(control=u, points=np.empty((0, n)), horizon=T_f,
                             certified_horizon=T_req, tol=float(np.max(h_lvl)))
        if cand.shape[0] > max_candidates:
            raise InputRejectedError(f"fiber refinement exploded to {cand.shape[0]} candidates")
        h_max = float(np.max(h_lvl))
        T_req = float(np.clip(np.log(2.0 * margin / (h_max * np.sqrt(n))) / lam_hi,
                              min_horizon, T_f))
        zeros = np.zeros(cand.shape[0])
        fw = flow_batch(sys, cand, shifted_eval(u, zeros), T_req, step, contain=contain)
        cand = cand[np.isinf(fw.exit_times)]
        if cand.shape[0]:
            zeros = np.zeros(cand.shape[0])
            bw = flow_batch(rsys, cand, shifted_eval(ru, zeros), T_req, step, contain=contain)
            cand = cand[np.isinf(bw.exit_times)]
        if h_max * spread_factor <= target_res or level == max_levels - 1:
            break
        h_lvl = h_lvl / 2.0
        shifts = np.array(list(itertools.product(*[(-0.5, 0.5)] * n))) * h_lvl
        cand = (cand[:, None, :] + shifts[None, :, :]).reshape(-1, n)

    # cluster the surviving cloud around each fiber point
    pts = cand
    cluster_tol = max(6.0 * target_res, 4.0 * float(np.linalg.norm(h_lvl)))
    clusters = []
    for p in pts[np.lexsort(pts.T[::-1])] if pts.size else pts:
        hit = None
        for cl in clusters:
            if any(np.linalg.norm(p - q) < cluster_tol for q in cl):
                hit = cl
                break
        if hit is None:
            clusters.append([p])
        else:
            hit.append(p)
    points = np.array([np.mean(cl, axis=0) for cl in clusters]) if clusters else np.empty((0, n))
    return LiftFiber(control=u, points=points, horizon=T_f,
                     certified_horizon=T_req, tol=float(np.max(h_lvl)))


# -- isolation probe -----------------------------------------------------------------


@dataclass
class IsolationReport:
    factors: list
    counterexamples: dict
    sample_counts: dict
    largest_clean_factor: float | None
    note: str = "heuristic sampling evidence, not a verification"


def isolated_check(sys: ControlAffineSystem, Q: ChainControlSet, inflate_factors,
                   T_probe: float = 20.0, samples: int = 200, seed: int = 0,
                   step: float = 1e-2, controls_per_point: int = 4,
                   piece: float = 0.5) -> IsolationReport:
    """Sample points in (inflated Q) minus Q; any point whose full +/-T_probe
    orbit stays in the inflated region without being near Q is a
    counterexample to isolation at that factor.  A factor counts as clean
    only when it produced both samples and no counterexample."""
    rng = np.random.default_rng(seed)
    grid = Q.grid
    member = Q.member_mask()
    tol = float(np.min(grid.h)) / 2.0
    rsys = reversed_system(sys)
    counterexamples = {}
    sample_counts = {}
    clean = None
    for factor in sorted(float(f) for f in inflate_factors):
        lo = Q.hull_center - factor * Q.hull_half
        hi = Q.hull_center + factor * Q.hull_half
        if not grid.domain.periodic:
            lo = np.maximum(lo, grid.domain.lo)
            hi = np.minimum(hi, grid.domain.hi)
        pts = []
        for _ in range(50 * samples):
            p = rng.uniform(lo, hi)
            if not _close_to_member_rows(grid, p[None, :], member, tol)[0]:
                pts.append(p)
            if len(pts) == samples:
                break
        pts = np.asarray(pts) if pts else np.empty((0, grid.dim))
        sample_counts[factor] = int(pts.shape[0])
        found = []
        contain = lambda X, f=factor: Q.region_contains(X, f)
        for _ in range(controls_per_point):
            if pts.shape[0] == 0:
                break
            u = random_piecewise(sys.control_range, (-T_probe - 1.0, T_probe + 1.0), piece, rng)
            zeros = np.zeros(pts.shape[0])
            fw = flow_batch(sys, pts, shifted_eval(u, zeros), T_probe, step, contain=contain)
            stay = np.isinf(fw.exit_times)
            if np.any(stay):
                bw = flow_batch(rsys, pts[stay], shifted_eval(u.reversed_time(), np.zeros(int(stay.sum()))),
                                T_probe, step, contain=contain)
                both = np.nonzero(stay)[0][np.isinf(bw.exit_times)]
                found.extend(pts[i] for i in both)
        counterexamples[factor] = [p.tolist() for p in found]
        if not found and pts.shape[0] > 0:
            clean = factor if clean is None else max(clean, factor)
    return IsolationReport(factors=sorted(float(f) for f in inflate_factors),
                           counterexamples=counterexamples,
                           sample_counts=sample_counts,
                           largest_clean_factor=clean)
