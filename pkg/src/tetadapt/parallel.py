"""Thread-based worker pool for the nogil kernels.

Workers are plain Python threads running JIT kernels compiled with
``nogil=True``, so they execute concurrently on separate cores.  Work is
handed out through an atomic counter (fixed buckets or guided chunks).
"""
import threading

import numpy as np

from ._jit import cas, njit
from .topo import fetch_add


def run_workers(kernel, workers, *args):
    """Run ``kernel(*args, wid)`` on ``workers`` threads and join them.

    With one worker the kernel runs on the calling thread.  The first
    exception raised by any worker is re-raised.
    """
    if workers <= 1:
        kernel(*args, 0)
        return
    errors = []

    def target(wid):
        try:
            kernel(*args, wid)
        except BaseException as exc:  # pragma: no cover - surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=target, args=(w,)) for w in range(workers)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]


def make_pools(free, workers, headroom=4096):
    """Split free slot indices into per-worker stacks (workers, capacity)."""
    chunks = np.array_split(np.asarray(free, dtype=np.int64), workers)
    cap = max(len(c) for c in chunks) + headroom
    pool = np.full((workers, cap), -1, dtype=np.int64)
    count = np.zeros(workers, dtype=np.int64)
    for w, c in enumerate(chunks):
        # pop from the end: keep low indices first out for locality
        pool[w, : len(c)] = c[::-1]
        count[w] = len(c)
    return pool, count


@njit
def next_bucket(counter, n, size):
    """Claim the next fixed-size range [lo, hi) of ``n`` items; lo == n when exhausted."""
    lo = fetch_add(counter, 0, size)
    if lo >= n:
        return n, n
    return lo, min(lo + size, n)


@njit
def next_guided(counter, n, workers, floor):
    """Guided-style chunk: remaining / (2 * workers), never below ``floor``."""
    while True:
        lo = counter[0]
        if lo >= n:
            return n, n
        size = max((n - lo) // (2 * workers), floor)
        hi = min(lo + size, n)
        if cas(counter, 0, lo, hi) == lo:
            return lo, hi
