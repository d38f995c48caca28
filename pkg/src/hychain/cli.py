"""Command-line pipeline: one subcommand per stage, JSON config in, files out.

Exit codes: 0 success, 1 rejected input (config or argument validation),
2 numerical failure (escape, Newton stagnation, center direction).
Reruns with identical config and seed produce byte-identical outputs, and
``--threads 1`` matches ``--threads N``.
"""

from __future__ import annotations

import argparse
import os
import sys as _sys

import numpy as np

from . import __version__
from .chains import (build_transition_graph, chain_control_sets, equilibria,
                     fiber, make_grid)
from .config import build_system, load_config, validate_config
from .controls import ControlFunction, random_piecewise, sup_norm_distance
from .entropy import constant_pool, entropy_sweep, make_admissible_pair
from .errors import (CenterDirectionError, EscapeError, InputRejectedError,
                     NewtonStagnationError, ToolkitError)
from .metric import (delta_for_epsilon, du_distance, make_test_family,
                     sup_shift_distance, tail_N_for_epsilon)
from .shadowing import (fiber_transport, graph_verify, homotopy_transport,
                        make_pseudo_orbit, pseudo_from_orbit, shadow)
from .splitting import estimate_splitting, projection_commutation, verify_rates
from .util import config_hash, dump_json, jsonable


def _report_base(cfg) -> dict:
    return {"config_hash": config_hash(cfg), "version": __version__, "seed": cfg["seed"]}


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _write_cells_csv(path, sets, grid):
    n = grid.dim
    cols = ",".join(f"lo_{i},hi_{i}" for i in range(n))
    with open(path, "w") as fh:
        fh.write(f"set_id,cell_index,{cols}\n")
        for sid, cs in enumerate(sets):
            lo, hi = grid.cell_bounds(cs.cells)
            for idx, l, h in zip(cs.cells, lo, hi):
                row = ",".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(l, h))
                fh.write(f"{sid},{int(idx)},{row}\n")


def _run_chain_stage(cfg, sys, grid):
    graph = build_transition_graph(
        sys, grid, T=cfg["chain"]["T"], eps=cfg["chain"]["eps"],
        samples_per_cell=cfg["chain"]["samples_per_cell"],
        controls_per_cell=cfg["chain"]["controls_per_cell"],
        seed=cfg["seed"], step=cfg["chain"]["step"])
    sets = chain_control_sets(graph, viability_filter=cfg["chain"]["viability_filter"])
    return graph, sets


def _require_sets(sets):
    if not sets:
        raise InputRejectedError("no chain control set found with these parameters")
    return sets[0]


def _base_equilibrium(sys, grid, Q):
    u0 = sys.control_range.center
    eqs = equilibria(sys, u0, grid)
    member = Q.member_mask()
    inside = [e for e in eqs if (c := grid.point_to_cell(e.point)) >= 0 and member[c]]
    if not inside:
        raise InputRejectedError("no equilibrium of the center control inside the set")
    return u0, inside[0].point


def cmd_chain(cfg, out_dir, threads):
    sys, grid = build_system(cfg)
    graph, sets = _run_chain_stage(cfg, sys, grid)
    _write_cells_csv(os.path.join(out_dir, "cells.csv"), sets, grid)
    summary = _report_base(cfg)
    summary.update({
        "params": graph.params,
        "n_sets": len(sets),
        "escape_count": graph.escape_count,
        "sets": [{"cell_count": s.n_cells,
                  "hull_lo": s.hull_lo, "hull_hi": s.hull_hi} for s in sets],
    })
    dump_json(summary, os.path.join(out_dir, "summary.json"))
    hulls = "; ".join(f"[{', '.join(_fmt(v) for v in s.hull_lo)}]-"
                      f"[{', '.join(_fmt(v) for v in s.hull_hi)}]" for s in sets[:3])
    print(f"chain: {len(sets)} set(s), largest {sets[0].n_cells if sets else 0} cells, "
          f"hulls {hulls}")


def cmd_splitting(cfg, out_dir, threads):
    sys, grid = build_system(cfg)
    sp = cfg["splitting"]
    point = np.asarray(sp["point"], dtype=float) if sp["point"] is not None \
        else 0.5 * (sys.domain.lo + sys.domain.hi)
    u_val = np.asarray(sp["control"], dtype=float) if sp["control"] is not None \
        else sys.control_range.center
    u = ControlFunction.constant(u_val, window=(0.0, 1.0))
    split = estimate_splitting(sys, u, point, window_T=sp["window_T"],
                               step=sp["step"], gap_tol=sp["gap_tol"])
    ts = [0.5 * k for k in range(1, 9)]
    rates = verify_rates(split, sys, ts, step=sp["step"])
    from .systems import flow
    img_x = flow(sys, point, u, 1.0, sp["step"])
    split_img = estimate_splitting(sys, u.shift(1.0), img_x, window_T=sp["window_T"],
                                   step=sp["step"], gap_tol=sp["gap_tol"])
    resid = projection_commutation(split, split_img, sys, u, step=sp["step"])
    report = _report_base(cfg)
    report.update({
        "point": point, "control": u_val,
        "exponents": split.exponents,
        "E_plus": split.E_plus, "E_minus": split.E_minus,
        "c": rates.c_est, "lambda": rates.lambda_est,
        "n_rate_violations": len(rates.violations),
        "commutation_residual": resid,
    })
    dump_json(report, os.path.join(out_dir, "report.json"))
    print(f"splitting: k+={split.k_plus}, lambda={rates.lambda_est:.6g}, "
          f"c={rates.c_est:.6g}, commutation residual {resid:.3g}")


def cmd_shadow(cfg, out_dir, threads):
    sys, grid = build_system(cfg)
    sh = cfg["shadow"]
    u0 = sys.control_range.center
    u = ControlFunction.constant(u0, window=(0.0, 1.0))
    eqs = equilibria(sys, u0, grid)
    if not eqs:
        raise InputRejectedError("no equilibrium found to anchor the pseudo-orbit")
    x0 = eqs[0].point
    K = sh["window_K"]
    exact = pseudo_from_orbit(sys, u, x0, K, sh["step"])
    rng = np.random.default_rng([cfg["seed"], 11])
    noise = rng.standard_normal(exact.states.shape)
    noise /= max(1e-300, float(np.max(np.linalg.norm(noise, axis=1))))
    pseudo = make_pseudo_orbit(sys, u, exact.states + sh["alpha"] * noise, sh["step"])
    result = shadow(sys, pseudo, orbit_tol=sh["orbit_tol"],
                    max_iters=sh["max_iters"], step=sh["step"])
    report = _report_base(cfg)
    report.update({
        "window_K": K, "alpha": pseudo.alpha, "beta": result.beta,
        "residual": result.residual, "newton_iters": result.newton_iters,
        "beta_over_alpha": result.beta / pseudo.alpha if pseudo.alpha else 0.0,
        "window_short": result.window_short,
        "y0": result.y0,
    })
    dump_json(report, os.path.join(out_dir, "report.json"))
    print(f"shadow: alpha={pseudo.alpha:.3e} beta={result.beta:.3e} "
          f"residual={result.residual:.2e} iters={result.newton_iters}")


def cmd_transport(cfg, out_dir, threads):
    sys, grid = build_system(cfg)
    tr = cfg["transport"]
    _, sets = _run_chain_stage(cfg, sys, grid)
    Q = _require_sets(sets)
    u0_val, x0 = _base_equilibrium(sys, grid, Q)
    u0 = ControlFunction.constant(u0_val, window=(0.0, 1.0))
    rng = np.random.default_rng([cfg["seed"], 23])
    v = random_piecewise(sys.control_range, (-tr["window_K"] - 4.0, tr["window_K"] + 4.0),
                         cfg["verify"]["piece"], rng)
    y, res = fiber_transport(sys, Q, u0, v, x0, window_K=tr["window_K"],
                             step=tr["step"], inflate=tr["inflate"], details=True)
    back = fiber_transport(sys, Q, v, u0, y, window_K=tr["window_K"],
                           step=tr["step"], inflate=tr["inflate"])
    hy, path = homotopy_transport(sys, Q, u0, v, x0, eps_step=tr["eps_step"],
                                  window_K=tr["window_K"], step=tr["step"],
                                  inflate=tr["inflate"])
    report = _report_base(cfg)
    report.update({
        "point": y, "alpha": res.pseudo.alpha, "beta": res.beta,
        "roundtrip_error": float(np.linalg.norm(back - x0)),
        "homotopy_point": hy, "homotopy_legs": len(path) - 1,
        "homotopy_vs_direct": float(np.linalg.norm(hy - y)),
    })
    dump_json(report, os.path.join(out_dir, "report.json"))
    print(f"transport: y={np.array2string(y, precision=6)} legs={len(path) - 1} "
          f"roundtrip={report['roundtrip_error']:.2e}")


def cmd_graph_verify(cfg, out_dir, threads):
    sys, grid = build_system(cfg)
    gv = cfg["verify"]
    _, sets = _run_chain_stage(cfg, sys, grid)
    Q = _require_sets(sets)
    family = make_test_family(sys.dim_m, cfg["metric"]["family_depth"],
                              cfg["metric"]["span"])
    report = graph_verify(
        sys, Q, sys.control_range.center, n_controls=gv["n_controls"],
        seed=cfg["seed"], family=family, threads=threads,
        window_K=cfg["transport"]["window_K"], eps_step=cfg["transport"]["eps_step"],
        piece=gv["piece"], control_window=gv["control_window"],
        step=cfg["transport"]["step"],
        fiber_kwargs={"T_f": gv["fiber_T"], "target_res": gv["fiber_target_res"],
                      "seeds_per_axis": gv["fiber_seeds_per_axis"],
                      "step": gv["fiber_step"], "inflate": cfg["transport"]["inflate"]},
        continuity_samples=gv["continuity_samples"],
        roundtrip_samples=gv["roundtrip_samples"])
    out = _report_base(cfg)
    out.update(report.to_dict())
    dump_json(out, os.path.join(out_dir, "report.json"))
    print(f"graph-verify: singleton_rate={report.singleton_rate:.3f} "
          f"max_discrepancy={report.max_discrepancy:.3e} "
          f"roundtrip={report.roundtrip_max:.2e} failures={len(report.failures)}")
    return report


def cmd_entropy(cfg, out_dir, threads):
    sys, grid = build_system(cfg)
    en = cfg["entropy"]
    _, sets = _run_chain_stage(cfg, sys, grid)
    Q = _require_sets(sets)
    taus = sorted(float(t) for t in en["taus"])
    pool = constant_pool(sys, en["pool_grid"], window=(0.0, max(taus) + 1.0))
    from .entropy import exit_times, sample_box
    samples = sample_box(en["k_lo"], en["k_hi"], en["k_samples"])
    ets = exit_times(sys, Q, samples, pool, max(taus), en["inflate"], en["step"])
    pair = make_admissible_pair(sys, Q, en["k_lo"], en["k_hi"], en["k_samples"],
                                pool, max(taus), inflate=en["inflate"],
                                step=en["step"], precomputed_exit=ets)
    u0_val, x0 = _base_equilibrium(sys, grid, Q)
    lift_samples = [(ControlFunction.constant(u0_val, (0.0, 1.0)), x0)]
    est = entropy_sweep(sys, pair, taus, pool, lift_samples, step=en["step"],
                        window_T=en["window_T"], precomputed_exit=ets)
    report = _report_base(cfg)
    report.update({
        "taus": est.taus, "r_counts": est.r_counts, "slope": est.slope,
        "residual": est.residual, "formula_value": est.formula_value,
        "samples_used": est.samples_used,
        "direct_vs_formula": abs(est.slope - est.formula_value),
    })
    dump_json(report, os.path.join(out_dir, "report.json"))
    with open(os.path.join(out_dir, "entropy.csv"), "w") as fh:
        fh.write("tau,log_r\n")
        for t, r in zip(est.taus, est.r_counts):
            fh.write(f"{_fmt(t)},{_fmt(np.log(r))}\n")
    print(f"entropy: slope={est.slope:.4f} formula={est.formula_value:.4f} "
          f"counts={est.r_counts}")


def cmd_metric_probe(cfg, out_dir, threads):
    sys, _ = build_system(cfg)
    me = cfg["metric"]
    family = make_test_family(sys.dim_m, me["family_depth"], me["span"])
    eps = me["epsilon"]
    delta = delta_for_epsilon(eps, family)
    N = tail_N_for_epsilon(eps)
    rng = np.random.default_rng([cfg["seed"], 41])
    w = me["control_window"]
    t_samples = me["t_samples"]
    violations = 0
    worst = 0.0
    records = []
    for p in range(me["n_pairs"]):
        u = random_piecewise(sys.control_range, (-w, w), me["piece"], rng)
        bump = rng.uniform(-1.0, 1.0, size=u.values.shape)
        bump *= 0.98 * delta / max(1e-300, float(np.max(np.linalg.norm(bump, axis=1))))
        vals = np.clip(u.values + bump, sys.control_range.lo, sys.control_range.hi)
        v = ControlFunction(u.knots, vals, u.offset)
        d = sup_shift_distance(u, v, family, N, t_samples)
        worst = max(worst, d)
        if d >= eps:
            violations += 1
        if p == 0:
            records = [{"t": float(t), "d": du_distance(u.shift(t), v.shift(t), family, N)}
                       for t in t_samples]
    report = _report_base(cfg)
    report.update({
        "epsilon": eps, "delta": delta, "truncation_N": N,
        "tail_bound": 2.0 ** (-N), "family_hash": family.config_hash,
        "n_pairs": me["n_pairs"], "violations": violations,
        "max_sampled_distance": worst, "records": records,
    })
    dump_json(report, os.path.join(out_dir, "report.json"))
    print(f"metric-probe: eps={eps} delta={delta:.5g} violations={violations}/"
          f"{me['n_pairs']} max={worst:.5g}")


_COMMANDS = {
    "chain": cmd_chain,
    "splitting": cmd_splitting,
    "shadow": cmd_shadow,
    "transport": cmd_transport,
    "graph-verify": cmd_graph_verify,
    "entropy": cmd_entropy,
    "metric-probe": cmd_metric_probe,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hychain",
                                     description="chain control set toolkit pipeline")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--threads", type=int, default=1, help="worker cap for parallel sweeps")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = validate_config({**{k: v for k, v in cfg.items()}, "seed": args.seed})
        out_dir = args.out or cfg["out_dir"]
        os.makedirs(out_dir, exist_ok=True)
        _COMMANDS[args.command](cfg, out_dir, max(1, args.threads))
        return 0
    except InputRejectedError as err:
        print(f"error: {err}", file=_sys.stderr)
        return 1
    except (EscapeError, NewtonStagnationError, CenterDirectionError) as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=_sys.stderr)
        return 2
    except ToolkitError as err:
        print(f"failure: {type(err).__name__}: {err}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
