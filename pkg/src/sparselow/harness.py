"""Experiment orchestration: instance generation, trial grids, persistence.

An :class:`ExperimentSpec` fixes a grid of ``(m, s, N)`` cells, a measurement
backend, the solvers to compare and a seed base.  Every operator, ground
truth and solver trace is a pure function of ``(spec, seed_base)``, so a
persisted manifest replays to identical results.  Trials are independent and
may run in parallel; aggregation is keyed, never order dependent.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .core import FactoredMatrix, ProblemDims, truncate_rank
from .errors import ParameterError
from .operators import BACKENDS, make_operator
from .solvers import NUMERICAL_ERROR, SolverConfig, StepRule, solve

RESULT_COLUMNS = (
    "solver", "m", "s", "N", "k", "M", "backend", "trial",
    "iterations", "finalRelError", "success", "wallClockMs",
)

_OPERATOR_TAG = 1
_INSTANCE_TAG = 2


@dataclass(frozen=True)
class SolverSetup:
    """One named solver configuration to run on every grid cell."""

    name: str
    algorithm: str
    step: StepRule = field(default_factory=StepRule)
    max_iter: int = 3000
    residual_tol: float = 1.0e-6
    rpg_decay: float = 0.99
    rpg_initial_sparsity: int | None = None

    def config(self, dims, error_tol=None):
        return SolverConfig(
            algorithm=self.algorithm,
            dims=dims,
            step=self.step,
            max_iter=self.max_iter,
            residual_tol=self.residual_tol,
            error_tol=error_tol,
            rpg_decay=self.rpg_decay,
            rpg_initial_sparsity=self.rpg_initial_sparsity,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["step"] = StepRule(**d["step"])
        return cls(**d)


@dataclass(frozen=True)
class ExperimentSpec:
    """Grid definition for a phase-transition or convergence experiment.

    ``m_axis`` and ``s_axis`` span the grid; the column count is either the
    fixed list ``N_axis`` or, with ``tie_N_to_s``, set equal to ``s`` in each
    cell (the usual square phase-diagram convention).
    """

    name: str
    backend: str
    M: int
    k: int
    m_axis: tuple
    s_axis: tuple
    N_axis: tuple = ()
    tie_N_to_s: bool = False
    trials: int = 10
    solvers: tuple = ()
    success_threshold: float = 1.0e-4
    seed_base: int = 0

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ParameterError(f"unknown backend {self.backend!r}; choose from {BACKENDS}")
        if not self.m_axis or not self.s_axis:
            raise ParameterError("m_axis and s_axis must be nonempty")
        if not self.tie_N_to_s and not self.N_axis:
            raise ParameterError("N_axis must be nonempty unless tie_N_to_s is set")
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        if not self.solvers:
            raise ParameterError("at least one solver setup is required")
        object.__setattr__(self, "m_axis", tuple(int(v) for v in self.m_axis))
        object.__setattr__(self, "s_axis", tuple(int(v) for v in self.s_axis))
        object.__setattr__(self, "N_axis", tuple(int(v) for v in self.N_axis))
        object.__setattr__(self, "solvers", tuple(self.solvers))

    def cells(self):
        """Deterministically ordered (m, s, N) grid cells."""
        out = []
        for m in self.m_axis:
            for s in self.s_axis:
                if self.tie_N_to_s:
                    out.append((m, s, s))
                else:
                    out.extend((m, s, N) for N in self.N_axis)
        return out

    def to_dict(self):
        d = asdict(self)
        d["solvers"] = [s.to_dict() for s in self.solvers]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["solvers"] = tuple(SolverSetup.from_dict(s) for s in d["solvers"])
        for key in ("m_axis", "s_axis", "N_axis"):
            d[key] = tuple(d.get(key) or ())
        return cls(**d)


@dataclass
class GroundTruthInstance:
    truth: FactoredMatrix
    operator_seed: int
    instance_seed: int
    y: np.ndarray


@dataclass(frozen=True)
class CellKey:
    solver: str
    m: int
    s: int
    N: int


@dataclass
class CellResult:
    successes: int
    trials: int
    mean_iterations: float
    mean_wall_ms: float

    @property
    def rate(self):
        return self.successes / self.trials


@dataclass
class TrialResult:
    solver: str
    m: int
    s: int
    N: int
    k: int
    M: int
    backend: str
    trial: int
    iterations: int
    final_rel_error: float
    success: bool
    wall_ms: float
    status: str


def derive_seed(seed_base, *parts):
    """Stable 64-bit seed from the base seed and integer coordinates."""
    ss = np.random.SeedSequence([int(seed_base)] + [int(p) for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_ground_truth(dims, seed):
    """Random member of the constraint set with exactly ``s`` nonzero rows.

    The row support is uniform at random and the nonzero block is the product
    of two standard normal factors, which has rank ``min(k, s)`` almost
    surely.
    """
    rng = np.random.default_rng(seed)
    support = np.sort(rng.choice(dims.M, size=dims.s, replace=False))
    left = rng.standard_normal((dims.s, dims.k))
    right = rng.standard_normal((dims.N, dims.k))
    dense = np.zeros(dims.shape)
    dense[support] = left @ right.T
    return truncate_rank(dense, dims.k)


def make_instance(dims, backend, operator_seed, instance_seed):
    """Operator, ground truth and noiseless measurements for one trial."""
    op = make_operator(backend, dims, operator_seed)
    truth = make_ground_truth(dims, instance_seed)
    y = op.apply(truth)
    return op, GroundTruthInstance(truth, operator_seed, instance_seed, y)


def run_single(backend, M, N, k, s, m, operator_seed, instance_seed, setup,
               error_tol=None, start=None):
    """One seeded trial; returns the RunRecord, instance and wall-clock ms."""
    dims = ProblemDims(M=M, N=N, k=k, s=s, m=m)
    op, instance = make_instance(dims, backend, operator_seed, instance_seed)
    config = setup.config(dims, error_tol=error_tol)
    begin = time.perf_counter()
    record = solve(op, instance.y, config, truth=instance.truth)
    wall_ms = (time.perf_counter() - begin) * 1000.0
    return record, instance, wall_ms


def _trial_task(args):
    spec_dict, setup_dict, m, s, N, trial = args
    spec = ExperimentSpec.from_dict(spec_dict)
    setup = SolverSetup.from_dict(setup_dict)
    return _execute_trial(spec, setup, m, s, N, trial)


def _execute_trial(spec, setup, m, s, N, trial):
    op_seed = derive_seed(spec.seed_base, _OPERATOR_TAG, m, s, N, trial)
    inst_seed = derive_seed(spec.seed_base, _INSTANCE_TAG, m, s, N, trial)
    record, _, wall_ms = run_single(
        spec.backend, spec.M, N, spec.k, s, m, op_seed, inst_seed, setup,
        error_tol=spec.success_threshold,
    )
    final_rel = record.trace[-1].rel_error if record.trace else float("inf")
    if final_rel is None:
        final_rel = float("inf")
    # Success is judged by the final error alone; a run that ended in a
    # numerical error counts as a failure regardless of its last iterate.
    success = record.status != NUMERICAL_ERROR and final_rel <= spec.success_threshold
    return TrialResult(
        solver=setup.name, m=m, s=s, N=N, k=spec.k, M=spec.M,
        backend=spec.backend, trial=trial,
        iterations=record.iterations, final_rel_error=float(final_rel),
        success=bool(success), wall_ms=wall_ms, status=record.status,
    )


def run_phase_transition(spec, jobs=1):
    """Run the whole grid; returns sorted per-trial rows and per-cell aggregates.

    With ``jobs > 1`` trials execute in separate processes; each worker
    rebuilds its operator from seeds, so results are identical to a serial
    run.
    """
    tasks = [
        (setup, m, s, N, trial)
        for (m, s, N) in spec.cells()
        for setup in spec.solvers
        for trial in range(spec.trials)
    ]
    if jobs > 1:
        packed = [(spec.to_dict(), t[0].to_dict(), *t[1:]) for t in tasks]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_task, packed, chunksize=1))
    else:
        results = [_execute_trial(spec, *t) for t in tasks]
    results.sort(key=lambda r: (r.solver, r.m, r.s, r.N, r.trial))
    return results, aggregate_cells(results)


def aggregate_cells(results):
    cells = {}
    for r in results:
        cells.setdefault(CellKey(r.solver, r.m, r.s, r.N), []).append(r)
    out = {}
    for key, rows in cells.items():
        out[key] = CellResult(
            successes=sum(r.success for r in rows),
            trials=len(rows),
            mean_iterations=float(np.mean([r.iterations for r in rows])),
            mean_wall_ms=float(np.mean([r.wall_ms for r in rows])),
        )
    return out


def run_convergence_trace(backend, M, N, k, s, m, seed_base, setups,
                          thresholds=(1e-1, 1e-3, 1e-5)):
    """All solvers on one shared instance; returns traces and a thresholds table.

    The table holds one row per (solver, threshold) with the first iteration
    index at which the relative error dips below the threshold (empty when
    never reached) and the run's wall-clock time.
    """
    dims = ProblemDims(M=M, N=N, k=k, s=s, m=m)
    op_seed = derive_seed(seed_base, _OPERATOR_TAG, m, s, N, 0)
    inst_seed = derive_seed(seed_base, _INSTANCE_TAG, m, s, N, 0)
    op, instance = make_instance(dims, backend, op_seed, inst_seed)
    records, table = {}, []
    for setup in setups:
        config = setup.config(dims, error_tol=min(thresholds))
        begin = time.perf_counter()
        record = solve(op, instance.y, config, truth=instance.truth)
        wall_ms = (time.perf_counter() - begin) * 1000.0
        records[setup.name] = record
        for tol in sorted(thresholds, reverse=True):
            table.append({
                "solver": setup.name,
                "threshold": tol,
                "iterations": record.iterations_to(tol),
                "wallClockMs": wall_ms,
                "status": record.status,
            })
    return records, table, instance


# ---------------------------------------------------------------------------
# persistence


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows):
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def timing_key(result):
    return f"{result.solver}|{result.m}|{result.s}|{result.N}|{result.trial}"


def emit_outputs(spec, results, out_dir, timings_override=None):
    """Write ``results.csv``, ``manifest.json`` and ``plot.script``.

    ``timings_override`` (a timing-key to milliseconds map, as stored in a
    manifest) substitutes recorded wall-clock values so a replayed run emits
    byte-identical files; fresh timings are still measured and returned.
    """
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    timings = {}
    for r in results:
        key = timing_key(r)
        wall = r.wall_ms
        if timings_override is not None:
            if key not in timings_override:
                raise ParameterError(f"manifest lacks a timing entry for trial {key}")
            wall = float(timings_override[key])
        timings[key] = wall
        rows.append({
            "solver": r.solver, "m": r.m, "s": r.s, "N": r.N, "k": r.k, "M": r.M,
            "backend": r.backend, "trial": r.trial, "iterations": r.iterations,
            "finalRelError": r.final_rel_error, "success": r.success,
            "wallClockMs": wall,
        })
    write_csv(os.path.join(out_dir, "results.csv"), RESULT_COLUMNS, rows)
    manifest = {
        "kind": "phase",
        "version": __version__,
        "spec": spec.to_dict(),
        "timings": timings,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "plot.script"), "w") as fh:
        fh.write(PLOT_SCRIPT)
    return os.path.join(out_dir, "results.csv")


def replay_phase(manifest_path, out_dir, jobs=1):
    """Re-run an experiment from its manifest, emitting byte-identical files.

    Solver work is redone and must reproduce the recorded outcome; the
    recorded wall-clock values are substituted into the emitted CSV so the
    artifact matches the original byte for byte.
    """
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "phase":
        raise ParameterError(f"{manifest_path} is not a phase-experiment manifest")
    spec = ExperimentSpec.from_dict(manifest["spec"])
    results, cells = run_phase_transition(spec, jobs=jobs)
    emit_outputs(spec, results, out_dir, timings_override=manifest["timings"])
    return spec, results, cells


PLOT_SCRIPT = '''#!/usr/bin/env python
"""Render success-rate phase diagrams from results.csv in this directory.

One panel per solver: row sparsity s on the x-axis, measurement count m on
the y-axis, both on log scales, grayscale success rate per cell and a red
slope-one guide line through the first transition point.
"""
import csv
import os
import sys

here = os.path.dirname(os.path.abspath(__file__))
rows = list(csv.DictReader(open(os.path.join(here, "results.csv"))))
if not rows:
    sys.exit("results.csv holds no trials")

cells = {}
for r in rows:
    key = (r["solver"], int(r["s"]), int(r["m"]))
    hit, total = cells.get(key, (0, 0))
    cells[key] = (hit + int(r["success"]), total + 1)

solvers = sorted({k[0] for k in cells})
s_vals = sorted({k[1] for k in cells})
m_vals = sorted({k[2] for k in cells})

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("matplotlib unavailable; printing the success-rate table instead")
    for solver in solvers:
        print(f"== {solver}")
        for m in reversed(m_vals):
            line = " ".join(
                f"{cells.get((solver, s, m), (0, 1))[0] / cells.get((solver, s, m), (0, 1))[1]:4.2f}"
                for s in s_vals
            )
            print(f"m={m:6d}  {line}")
    sys.exit(0)

fig, axes = plt.subplots(1, len(solvers), figsize=(5 * len(solvers), 4), squeeze=False)
for ax, solver in zip(axes[0], solvers):
    grid = [[cells.get((solver, s, m), (0, 1)) for s in s_vals] for m in m_vals]
    rate = [[hit / max(total, 1) for (hit, total) in row] for row in grid]
    ax.pcolormesh(s_vals, m_vals, rate, cmap="gray_r", vmin=0.0, vmax=1.0, shading="nearest")
    if len(s_vals) > 1 and len(m_vals) > 1:
        ax.plot(s_vals, [m_vals[0] * s / s_vals[0] for s in s_vals], "r-", lw=1.5,
                label="slope one")
        ax.legend(loc="upper left", fontsize=8)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("row sparsity s")
    ax.set_ylabel("measurements m")
    ax.set_title(solver)
fig.tight_layout()
out = os.path.join(here, "phase.png")
fig.savefig(out, dpi=150)
print(f"wrote {out}")
'''


# ---------------------------------------------------------------------------
# frozen experiment presets


def default_solvers(max_iter=3000, rpg_max_iter=20000, rpg_decay=0.99):
    return (
        SolverSetup("iht-armijo", "iht", StepRule.armijo(), max_iter=max_iter),
        SolverSetup("riht-armijo", "riht", StepRule.armijo(), max_iter=max_iter),
        SolverSetup("rpg-armijo", "rpg", StepRule.armijo(), max_iter=rpg_max_iter,
                    rpg_decay=rpg_decay),
    )


def presets():
    """Named, frozen experiment specs runnable from the command line."""
    return {
        # Desk-scale Gaussian diagram: square cells N = s, adaptive steps.
        "fig1-desk": ExperimentSpec(
            name="fig1-desk",
            backend="gaussian",
            M=200, k=2,
            m_axis=(48, 64, 88, 120, 168, 232, 320),
            s_axis=(8, 16, 32),
            tie_N_to_s=True,
            trials=10,
            solvers=(
                SolverSetup("iht-armijo", "iht", StepRule.armijo(), max_iter=400),
                SolverSetup("riht-armijo", "riht", StepRule.armijo(), max_iter=400),
            ),
        ),
        # Paper-scale Gaussian diagram (slow; provided for completeness).
        "fig1-paper": ExperimentSpec(
            name="fig1-paper",
            backend="gaussian",
            M=1000, k=3,
            m_axis=(100, 160, 250, 400, 640, 1000, 1600),
            s_axis=(10, 16, 25, 40, 64, 100),
            tie_N_to_s=True,
            trials=10,
            solvers=(
                SolverSetup("iht-armijo", "iht", StepRule.armijo(), max_iter=3000),
                SolverSetup("riht-armijo", "riht", StepRule.armijo(), max_iter=3000),
            ),
        ),
        # Blind deconvolution diagram, adaptive Riemannian IHT.
        "fig4-desk": ExperimentSpec(
            name="fig4-desk",
            backend="fourier",
            M=150, k=1,
            m_axis=(120, 160, 212, 260, 320),
            s_axis=(3, 6, 12),
            N_axis=(50,),
            trials=20,
            solvers=(
                SolverSetup("riht-armijo", "riht", StepRule.armijo(), max_iter=300),
            ),
        ),
    }
