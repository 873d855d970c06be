"""Deterministic process-pool map.

Work items carry their own random streams, so results are identical for any
worker count; outputs are returned in submission order.
"""

from concurrent.futures import ProcessPoolExecutor


def parallel_starmap(fn, argument_tuples, workers: int = 0):
    """Apply ``fn`` to each argument tuple, optionally across processes.

    ``workers <= 1`` runs serially in-process (no pickling), which is also
    the debug path.
    """
    tasks = list(argument_tuples)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*args) for args in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *args) for args in tasks]
        return [f.result() for f in futures]
