"""Wall-clock scaling of one Sinkhorn iteration against exact assignment.

Instances are geometric: squared Euclidean distances between two clouds of
uniform random points in the unit square.  Only ratios between sizes are
meaningful; absolute times depend on the machine.
"""

from __future__ import annotations

import contextlib
import csv
import json
import os
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ParameterError
from .transport import exact_lp_assignment, gibbs_kernel, uniform_histogram

THREADS_ENV = "SINKHORN_MPC_NUM_THREADS"
MIN_REPETITIONS = 5
PHASES = ("sinkhorn-iteration", "lp-assignment", "kernel-build")


@contextlib.contextmanager
def thread_cap(threads: int | None = None):
    """Limit BLAS threads to ``threads``, or to ``$SINKHORN_MPC_NUM_THREADS`` when unset."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        try:
            threads = int(env) if env else None
        except ValueError:
            raise ParameterError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
    if threads is None:
        yield
        return
    if threads < 1:
        raise ParameterError(f"thread cap must be positive, got {threads}")
    with threadpool_limits(limits=threads):
        yield


@dataclass(frozen=True)
class BenchRecord:
    N: int
    phase: str
    min_seconds: float
    median_seconds: float
    repetitions: int

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ParameterError(f"unknown phase {self.phase!r}")
        if self.repetitions < MIN_REPETITIONS:
            raise ParameterError(f"at least {MIN_REPETITIONS} repetitions are required, got {self.repetitions}")
        if not (self.min_seconds > 0 and self.median_seconds > 0):
            raise ParameterError("timings must be positive")


def geometric_instance(n: int, seed: int = 0) -> np.ndarray:
    """``C_ij = |p_i - q_j|^2`` for uniform random points in the unit square."""
    rng = np.random.default_rng(seed)
    p = rng.random((n, 2))
    q = rng.random((n, 2))
    return ((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2)


def _record(n, phase, samples) -> BenchRecord:
    return BenchRecord(n, phase, float(min(samples)), float(statistics.median(samples)), len(samples))


def time_sinkhorn_iteration(C: np.ndarray, epsilon: float, repetitions: int, inner: int = 200) -> list[float]:
    """Per-iteration seconds of ``beta = b / (K' alpha); alpha = a / (K beta)``.

    Each repetition times ``inner`` consecutive iterations to stay well above
    timer resolution and reports the average.
    """
    K = gibbs_kernel(C, epsilon).entries
    n = K.shape[0]
    a = uniform_histogram(n)
    alpha = np.ones(n)
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for _ in range(inner):
            beta = a / (K.T @ alpha)
            alpha = a / (K @ beta)
        samples.append((time.perf_counter() - t0) / inner)
    return samples


def time_kernel_build(C: np.ndarray, epsilon: float, repetitions: int) -> list[float]:
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        gibbs_kernel(C, epsilon)
        samples.append(time.perf_counter() - t0)
    return samples


def time_lp_assignment(C: np.ndarray, repetitions: int) -> list[float]:
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        exact_lp_assignment(C)
        samples.append(time.perf_counter() - t0)
    return samples


def run_bench(
    sizes,
    repetitions: int = MIN_REPETITIONS,
    epsilon: float = 0.05,
    seed: int = 0,
    phases=PHASES,
    threads: int | None = None,
) -> list[BenchRecord]:
    sizes = [int(n) for n in sizes]
    if len(sizes) < 2:
        raise ParameterError("at least two sizes are needed to measure scaling")
    if repetitions < MIN_REPETITIONS:
        raise ParameterError(f"at least {MIN_REPETITIONS} repetitions are required, got {repetitions}")
    unknown = set(phases) - set(PHASES)
    if unknown:
        raise ParameterError(f"unknown phases {sorted(unknown)}")
    records = []
    with thread_cap(threads):
        for n in sizes:
            C = geometric_instance(n, seed)
            if "kernel-build" in phases:
                records.append(_record(n, "kernel-build", time_kernel_build(C, epsilon, repetitions)))
            if "sinkhorn-iteration" in phases:
                records.append(_record(n, "sinkhorn-iteration", time_sinkhorn_iteration(C, epsilon, repetitions)))
            if "lp-assignment" in phases:
                records.append(_record(n, "lp-assignment", time_lp_assignment(C, repetitions)))
    return records


def scaling_ratio(records, phase: str, small: int, large: int, stat: str = "min_seconds") -> float:
    by_n = {r.N: getattr(r, stat) for r in records if r.phase == phase}
    return by_n[large] / by_n[small]


def write_records(records, path) -> Path:
    """CSV when ``path`` ends in ``.csv``, JSON otherwise."""
    path = Path(path)
    rows = [asdict(r) for r in records]
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    else:
        path.write_text(json.dumps(rows, indent=2) + "\n")
    return path
