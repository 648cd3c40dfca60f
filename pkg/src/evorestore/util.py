"""Small shared helpers: bounded parallel map, CSV formatting, timers."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Apply fn to items with at most `workers` threads.

    Results come back in input order, so callers that reduce them sequentially
    get bit-identical output regardless of the worker count. numpy releases the
    GIL in its kernels, which is where the wall-clock win comes from.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def fmt(x) -> str:
    """Format a scalar for CSV output: shortest round-trip float repr."""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int,)):
        return str(x)
    return repr(float(x))


def write_csv(path, header: Iterable[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if not isinstance(v, str) else v for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


class Stopwatch:
    """Accumulating wall-clock timer (milliseconds)."""

    def __init__(self):
        self.ms = 0.0
        self._t0 = None

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms += (time.perf_counter() - self._t0) * 1e3
        self._t0 = None
        return False
