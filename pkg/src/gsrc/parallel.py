"""Seed derivation and an order-preserving process-pool map."""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor


def derive_seed(base_seed: int, *parts) -> int:
    """Stable 64-bit seed from a base seed and any repr-able coordinates.

    Independent of execution order and of Python's hash randomization.
    """
    text = "|".join([str(int(base_seed))] + [_canon(p) for p in parts])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def _canon(p) -> str:
    if isinstance(p, float):
        return repr(float(p))
    if isinstance(p, (tuple, list)):
        return "(" + ",".join(_canon(q) for q in p) + ")"
    return str(p)


def pmap(fn, items, workers: int = 1):
    """``[fn(x) for x in items]``, optionally spread over worker processes."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
