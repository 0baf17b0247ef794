"""Fan-out of independent training jobs with order-independent seeding."""

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor


def derive_seed(base_seed, *descriptor) -> int:
    """Stable 63-bit seed from a base seed and a job descriptor.

    Depends only on the job's identity, never on scheduling order.
    """
    key = json.dumps([int(base_seed), *descriptor], sort_keys=True, default=str)
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big") >> 1


def default_workers():
    cap = os.environ.get("GGNAM_WORKERS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _call(fn, args):
    return fn(*args)


def run_jobs(fn, jobs, workers=1):
    """Run ``fn(*args)`` for each ``job_id -> args`` and return ``{job_id: result}``.

    With ``workers <= 1`` everything runs in-process in job-id order.
    """
    ids = list(jobs)
    if workers <= 1 or len(ids) <= 1:
        return {i: fn(*jobs[i]) for i in ids}
    with ProcessPoolExecutor(max_workers=min(workers, len(ids))) as pool:
        futures = {i: pool.submit(_call, fn, jobs[i]) for i in ids}
        return {i: futures[i].result() for i in ids}
