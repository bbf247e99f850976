import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")

CHUNK = 1 << 16


def thread_cap() -> int:
    """Worker count, capped by ``REACHKIT_THREADS`` (default: CPU count)."""
    env = os.environ.get("REACHKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def map_chunks(fn: Callable[[int, int], T], total: int, chunk: int = CHUNK) -> list[T]:
    """Apply ``fn(start, stop)`` over consecutive slices; results in slice order."""
    bounds = [(s, min(s + chunk, total)) for s in range(0, total, chunk)]
    workers = min(thread_cap(), len(bounds))
    if workers <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))
