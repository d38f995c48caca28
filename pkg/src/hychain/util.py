"""Small shared helpers: deterministic JSON, hashing, ordered parallel map."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def jsonable(obj):
    """Convert numpy containers/scalars into plain JSON-serializable values.

    Floats are normalized through a fixed 17-significant-digit round trip so the
    serialized bytes do not depend on how a value was produced.
    """
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(f"{float(obj):.17g}")
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":"))


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(jsonable(obj), sort_keys=True, indent=2))
        fh.write("\n")


def config_hash(cfg) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def parallel_map(fn, items, threads=1):
    """Map fn over items, returning results in input order.

    With threads > 1 the work runs on a thread pool; the reduction is always
    index-ordered, so the result does not depend on scheduling.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
