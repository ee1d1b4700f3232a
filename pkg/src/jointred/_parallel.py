"""Order-preserving map over a thread pool."""

from concurrent.futures import ThreadPoolExecutor

_DEFAULT_JOBS = 1


def set_default_jobs(jobs):
    global _DEFAULT_JOBS
    _DEFAULT_JOBS = max(1, int(jobs))


def get_default_jobs():
    return _DEFAULT_JOBS


def pmap(func, items, jobs=None):
    """``[func(item) for item in items]``, threaded when ``jobs > 1``.

    Heavy numpy/scipy kernels release the GIL, so threads give real speedups
    for per-sample solves without pickling models.
    """
    items = list(items)
    jobs = _DEFAULT_JOBS if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))
