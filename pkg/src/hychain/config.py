"""Strict JSON run configuration: defaults, range validation, system assembly.

Unknown keys are rejected anywhere in the document; every numeric field is
checked against its documented range at load time.
"""

from __future__ import annotations

import copy
import json

import numpy as np

from .controls import ControlRange
from .errors import InputRejectedError
from .systems import BoxDomain, CATALOG, TorusDomain, make_system
from .chains import make_grid

DEFAULTS = {
    "system": {
        "id": "scalar_affine",
        "params": {},
        "domain": None,
        "range": None,
    },
    "integrator": {"step": 1e-3},
    "grid": {"h": 0.01},
    "chain": {
        "eps": 0.02,
        "T": 0.5,
        "samples_per_cell": 1,
        "controls_per_cell": 5,
        "step": 0.01,
        "viability_filter": True,
    },
    "splitting": {
        "window_T": 10.0,
        "gap_tol": 0.1,
        "step": 0.01,
        "point": None,
        "control": None,
    },
    "shadow": {
        "window_K": 20,
        "orbit_tol": 1e-10,
        "max_iters": 30,
        "step": 0.01,
        "alpha": 1e-3,
    },
    "metric": {
        "family_depth": 32,
        "span": 8.0,
        "truncation_N": 16,
        "t_samples": [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0],
        "epsilon": 0.1,
        "n_pairs": 20,
        "piece": 0.25,
        "control_window": 4.0,
    },
    "transport": {
        "window_K": 20,
        "eps_step": 0.8,
        "inflate": 1.15,
        "step": 0.01,
    },
    "verify": {
        "n_controls": 100,
        "piece": 0.5,
        "control_window": 24.0,
        "continuity_samples": 40,
        "roundtrip_samples": 5,
        "fiber_target_res": 4e-4,
        "fiber_T": 12.0,
        "fiber_seeds_per_axis": 15,
        "fiber_step": 0.02,
    },
    "entropy": {
        "taus": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        "k_lo": [-0.5],
        "k_hi": [0.5],
        "k_samples": 501,
        "pool_grid": 801,
        "inflate": 1.0,
        "step": 0.01,
        "window_T": 10.0,
    },
    "seed": 2024,
    "out_dir": "out",
}


def _positive(path, v):
    if not (isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0):
        raise InputRejectedError(f"{path}: expected a positive number, got {v!r}")


def _pos_int(path, v):
    if not (isinstance(v, int) and not isinstance(v, bool) and v >= 1):
        raise InputRejectedError(f"{path}: expected a positive integer, got {v!r}")


def _boolean(path, v):
    if not isinstance(v, bool):
        raise InputRejectedError(f"{path}: expected a boolean, got {v!r}")


def _number_list(path, v):
    if not (isinstance(v, list) and v and
            all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
        raise InputRejectedError(f"{path}: expected a nonempty list of numbers, got {v!r}")


def _unit_interval(path, v):
    if not (isinstance(v, (int, float)) and not isinstance(v, bool) and 0.0 < v < 1.0):
        raise InputRejectedError(f"{path}: expected a number in (0, 1), got {v!r}")


_VALIDATORS = {
    "integrator.step": _positive,
    "grid.h": lambda p, v: (_number_list(p, v) if isinstance(v, list) else _positive(p, v)),
    "chain.eps": _positive,
    "chain.T": _positive,
    "chain.samples_per_cell": _pos_int,
    "chain.controls_per_cell": _pos_int,
    "chain.step": _positive,
    "chain.viability_filter": _boolean,
    "splitting.window_T": _positive,
    "splitting.gap_tol": _positive,
    "splitting.step": _positive,
    "shadow.window_K": _pos_int,
    "shadow.orbit_tol": _positive,
    "shadow.max_iters": _pos_int,
    "shadow.step": _positive,
    "shadow.alpha": _positive,
    "metric.family_depth": _pos_int,
    "metric.span": _positive,
    "metric.truncation_N": _pos_int,
    "metric.t_samples": _number_list,
    "metric.epsilon": _unit_interval,
    "metric.n_pairs": _pos_int,
    "metric.piece": _positive,
    "metric.control_window": _positive,
    "transport.window_K": _pos_int,
    "transport.eps_step": _unit_interval,
    "transport.inflate": _positive,
    "transport.step": _positive,
    "verify.n_controls": _pos_int,
    "verify.piece": _positive,
    "verify.control_window": _positive,
    "verify.continuity_samples": _pos_int,
    "verify.roundtrip_samples": _pos_int,
    "verify.fiber_target_res": _positive,
    "verify.fiber_T": _positive,
    "verify.fiber_seeds_per_axis": _pos_int,
    "verify.fiber_step": _positive,
    "entropy.taus": _number_list,
    "entropy.k_lo": _number_list,
    "entropy.k_hi": _number_list,
    "entropy.k_samples": _pos_int,
    "entropy.pool_grid": _pos_int,
    "entropy.inflate": _positive,
    "entropy.step": _positive,
    "entropy.window_T": _positive,
}


def _merge(defaults, override, path=""):
    if not isinstance(override, dict):
        raise InputRejectedError(f"{path or 'config'}: expected an object")
    out = copy.deepcopy(defaults)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise InputRejectedError(f"unknown config key {here!r}")
        if isinstance(defaults[key], dict) and defaults[key] is not None:
            out[key] = _merge(defaults[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate_config(raw: dict) -> dict:
    """Merge onto defaults and validate; returns the full effective config."""
    cfg = _merge(DEFAULTS, raw)
    if cfg["system"]["id"] not in CATALOG:
        raise InputRejectedError(
            f"system.id must be one of {CATALOG}, got {cfg['system']['id']!r}")
    if not isinstance(cfg["system"]["params"], dict):
        raise InputRejectedError("system.params must be an object")
    for k, v in cfg["system"]["params"].items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise InputRejectedError(f"system.params.{k} must be a number")
    for dotted, check in _VALIDATORS.items():
        sec, key = dotted.split(".")
        check(dotted, cfg[sec][key])
    if not (isinstance(cfg["seed"], int) and not isinstance(cfg["seed"], bool)
            and 0 <= cfg["seed"] < 2**63):
        raise InputRejectedError("seed must be a nonnegative 63-bit integer")
    if not isinstance(cfg["out_dir"], str):
        raise InputRejectedError("out_dir must be a string")

    dom = cfg["system"]["domain"]
    if dom is not None:
        if not isinstance(dom, dict) or "type" not in dom:
            raise InputRejectedError("system.domain needs a 'type'")
        extra = set(dom) - {"type", "lo", "hi", "periods"}
        if extra:
            raise InputRejectedError(f"unknown system.domain keys {sorted(extra)}")
        if dom["type"] == "box":
            _number_list("system.domain.lo", dom.get("lo"))
            _number_list("system.domain.hi", dom.get("hi"))
        elif dom["type"] == "torus":
            _number_list("system.domain.periods", dom.get("periods"))
        else:
            raise InputRejectedError("system.domain.type must be 'box' or 'torus'")
    rng = cfg["system"]["range"]
    if rng is not None:
        if not isinstance(rng, dict):
            raise InputRejectedError("system.range must be an object")
        extra = set(rng) - {"center", "half_widths", "rho"}
        if extra:
            raise InputRejectedError(f"unknown system.range keys {sorted(extra)}")
        _number_list("system.range.center", rng.get("center"))
        _number_list("system.range.half_widths", rng.get("half_widths"))
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise InputRejectedError(f"config is not valid JSON: {err}") from err
    return validate_config(raw)


def build_system(cfg: dict):
    """System + grid from a validated config."""
    spec = cfg["system"]
    domain = None
    if spec["domain"] is not None:
        d = spec["domain"]
        domain = (BoxDomain(d["lo"], d["hi"]) if d["type"] == "box"
                  else TorusDomain(d["periods"]))
    control_range = None
    if spec["range"] is not None:
        r = spec["range"]
        control_range = ControlRange(r["center"], r["half_widths"], r.get("rho", 1.0))
    sys = make_system(spec["id"], spec["params"], domain=domain, control_range=control_range)
    grid = make_grid(sys.domain, cfg["grid"]["h"])
    return sys, grid
