"""Micro-benchmarks for the measurement kernels and their scaling exponents.

The interesting comparison is the factored projected-adjoint path against the
dense route (full adjoint followed by the tangent projection): the former
costs ``O(m k (M + N))`` per call for rank-one structured backends while the
latter pays ``O(m M N)`` for the adjoint alone.

Timing methodology: these kernels are memory-bound, so warm-cache timings at
small sizes and cold timings at large sizes would fake a superlinear scaling
exponent.  Each measurement therefore cycles through enough independent
operator copies that the combined working set exceeds any cache level, and a
whole pass over the copies is timed; per-call cost is the median pass time
divided by the copy count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import ProblemDims, tangent_project
from .errors import ParameterError
from .harness import make_ground_truth
from .operators import make_operator

OPERATIONS = ("apply", "adjoint", "projected-adjoint", "projected-adjoint-dense")

# combined working set the copies must exceed, and a hard memory ceiling
_CYCLE_BYTES = 48e6
_MEMORY_CEILING = 512e6


@dataclass
class BenchRow:
    op: str
    backend: str
    M: int
    N: int
    k: int
    m: int
    seconds: float


def _working_set_bytes(backend, M, N, m):
    if backend == "gaussian":
        return 8.0 * m * M * N
    if backend == "fourier":
        return 24.0 * m * (M + N)  # real factors plus complex DFT products
    return 8.0 * m * (M + N)


def _call(op_name, op, base, z):
    if op_name == "apply":
        return lambda: op.apply(base)
    if op_name == "adjoint":
        return lambda: op.adjoint(z)
    if op_name == "projected-adjoint":
        return lambda: op.projected_adjoint(base, z)
    return lambda: tangent_project(base, op.adjoint(z))


def measure(op_name, backend, M, N, k, m, seed=0, repeats=7):
    """Median per-call seconds for one kernel, measured over cycled copies."""
    if op_name not in OPERATIONS:
        raise ParameterError(f"unknown benchmark operation {op_name!r}; choose from {OPERATIONS}")
    s = min(M, max(k + 1, 8))
    dims = ProblemDims(M=M, N=N, k=k, s=s, m=m)
    ws = _working_set_bytes(backend, M, N, m)
    copies = int(min(16, max(1, np.ceil(_CYCLE_BYTES / ws)), max(1, _MEMORY_CEILING // ws)))
    calls = []
    for c in range(copies):
        op = make_operator(backend, dims, seed + c)
        base = make_ground_truth(dims, seed + 1000 + c)
        z = np.asarray(op.apply(base))  # measurement vector with a real preimage
        calls.append(_call(op_name, op, base, z))
    for fn in calls:  # warm code paths and allocator
        fn()
    passes = []
    for _ in range(repeats):
        begin = time.perf_counter()
        for fn in calls:
            fn()
        passes.append((time.perf_counter() - begin) / copies)
    return float(np.median(passes))


def run_scaling(op_name, backend, sizes, k, m, seed=0, repeats=7):
    """Time a kernel over square sizes ``M = N`` and fit ``t ~ M**exponent``."""
    rows = [
        BenchRow(op_name, backend, int(M), int(M), k, m,
                 measure(op_name, backend, int(M), int(M), k, m, seed, repeats))
        for M in sizes
    ]
    return rows, fitted_exponent([r.M for r in rows], [r.seconds for r in rows])


def fitted_exponent(sizes, times):
    """Least-squares slope of log(time) against log(size)."""
    if len(sizes) < 2:
        raise ParameterError("need at least two sizes to fit an exponent")
    coeffs = np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(times, float)), 1)
    return float(coeffs[0])
