"""Replicate orchestration.

Each replicate owns its random streams, so results depend only on the
replicate id and never on the worker count or scheduling order.
"""

import os
from concurrent.futures import ThreadPoolExecutor


def default_threads():
    try:
        return max(1, int(os.environ.get("BBM_THREADS", "1")))
    except ValueError:
        return 1


def map_replicates(fn, replicate_ids, threads=None):
    """Apply ``fn`` to every replicate id; output order follows the ids."""
    ids = list(replicate_ids)
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(ids) < 2:
        return [fn(r) for r in ids]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, ids, chunksize=max(1, len(ids) // (8 * threads))))
