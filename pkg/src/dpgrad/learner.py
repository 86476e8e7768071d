"""Full continual-run orchestration, metrics, and trace/summary export.

One run walks the k tasks of an instance in order, training each with the
projected-descent task loop and recording per-iteration snapshots: current
loss, worst loss over already-finished tasks, the three-way loss split, and
the singular-value range of the factor. Per-task summaries capture the state
after the commit step (convergence, exact recovery, span growth, losses on
every finished task, conditioning).

Losses are reported in factorization form 0.5 * ||U v_j - w_j||^2; with
isotropic inputs this equals the population squared-error loss, which can be
spot-checked by Monte Carlo via the environments module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import factorization
from .environments import GroundTruth
from .factorization import FeatureState, Hyperparams, _decompose_arrays, loss_components
from .linalg import nonzero_singular_bounds

TRACE_COLUMNS = (
    "task",
    "iter",
    "loss_current",
    "max_prev_loss",
    "l_existing",
    "l_signal",
    "l_noise",
    "sigma_min",
    "sigma_max",
)


@dataclass
class Snapshot:
    """State of one training iterate. ``prev_losses`` keeps the per-task
    losses behind ``max_prev_loss`` for forgetting profiles (not in the CSV).
    """

    task: int
    iter: int
    loss_current: float
    max_prev_loss: float
    l_existing: float
    l_signal: float
    l_noise: float
    sigma_min: float
    sigma_max: float
    prev_losses: np.ndarray

    def csv_row(self) -> tuple:
        return (
            self.task,
            self.iter,
            self.loss_current,
            self.max_prev_loss,
            self.l_existing,
            self.l_signal,
            self.l_noise,
            self.sigma_min,
            self.sigma_max,
        )


@dataclass
class TaskSummary:
    """End-of-task record, taken after the commit/projection step."""

    task: int
    converged: bool
    recovered_exact: bool
    augmented: bool
    n_iters: int
    final_losses: list[float]  # losses on tasks 1..task at this boundary
    sigma_min_end: float
    sigma_max_end: float

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "converged": self.converged,
            "recovered_exact": self.recovered_exact,
            "augmented": self.augmented,
            "n_iters": self.n_iters,
            "final_losses": [float(x) for x in self.final_losses],
            "sigma_min_end": float(self.sigma_min_end),
            "sigma_max_end": float(self.sigma_max_end),
        }


@dataclass
class TaskRecord:
    snapshots: list[Snapshot]
    summary: TaskSummary


@dataclass
class RunReport:
    """Everything recorded over one continual run."""

    method: str
    tasks: list[TaskRecord] = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(rec.summary.converged for rec in self.tasks)

    def iter_snapshots(self):
        for rec in self.tasks:
            yield from rec.snapshots


def default_snapshot_every(dims) -> int:
    """Snapshot every iteration for small problems, else every 100."""
    return 1 if dims.d * dims.k * dims.r <= 100_000 else 100


def _sigma_bounds_or_zero(U: np.ndarray) -> tuple[float, float]:
    try:
        return nonzero_singular_bounds(U)
    except ValueError:
        return 0.0, 0.0


def _drive(
    gt: GroundTruth,
    h: Hyperparams,
    seed: int,
    task_runner,
    method: str,
    snapshot_every: int | None = None,
    initial_state: FeatureState | None = None,
) -> tuple[FeatureState, RunReport]:
    dims = gt.dims
    if snapshot_every is None:
        snapshot_every = default_snapshot_every(dims)
    state = initial_state if initial_state is not None else FeatureState.initial(dims)
    report = RunReport(method=method)
    for i in range(state.task_index + 1, dims.k + 1):
        w = gt.w_list[i - 1]
        rng = np.random.default_rng([seed, i])
        WB, VB = state.W.basis, state.V.basis
        if state.prompts:
            prompts_mat = np.column_stack(state.prompts)
            prev_targets = gt.w_list[: i - 1].T
        else:
            prompts_mat = None
            prev_targets = None
        snapshots: list[Snapshot] = []

        def observer(t, U, v, loss):
            dv = _decompose_arrays(U, w, v, WB, VB)
            l_existing, l_signal, l_noise = loss_components(dv)
            if prompts_mat is not None:
                errs = U @ prompts_mat - prev_targets
                prev_losses = 0.5 * np.einsum("ij,ij->j", errs, errs)
                max_prev = float(prev_losses.max())
            else:
                prev_losses = np.empty(0)
                max_prev = 0.0
            sigma_min, sigma_max = _sigma_bounds_or_zero(U)
            snapshots.append(
                Snapshot(
                    task=i,
                    iter=t,
                    loss_current=loss,
                    max_prev_loss=max_prev,
                    l_existing=l_existing,
                    l_signal=l_signal,
                    l_noise=l_noise,
                    sigma_min=sigma_min,
                    sigma_max=sigma_max,
                    prev_losses=prev_losses,
                )
            )

        state, v, trace = task_runner(state, w, h, rng, observer, snapshot_every)
        final_losses = []
        for j in range(i):
            err = state.U @ state.prompts[j] - gt.w_list[j]
            final_losses.append(0.5 * float(err @ err))
        sigma_min_end, sigma_max_end = _sigma_bounds_or_zero(state.U)
        summary = TaskSummary(
            task=i,
            converged=trace.converged,
            recovered_exact=bool(np.array_equal(trace.w_hat, w)),
            augmented=trace.augmented,
            n_iters=trace.n_steps,
            final_losses=final_losses,
            sigma_min_end=sigma_min_end,
            sigma_max_end=sigma_max_end,
        )
        report.tasks.append(TaskRecord(snapshots=snapshots, summary=summary))
    return state, report


def run_continual(
    gt: GroundTruth,
    h: Hyperparams,
    seed: int,
    snapshot_every: int | None = None,
    initial_state: FeatureState | None = None,
) -> tuple[FeatureState, RunReport]:
    """Run the doubly projected learner over all tasks of an instance.

    Each task draws from its own generator stream, derived from
    ``default_rng([seed, task])``, so a run continued from a checkpoint sees
    the same stream as a fresh run. A non-converged task is flagged in its
    summary and the run proceeds to the next task.
    """
    return _drive(
        gt,
        h,
        seed,
        factorization.run_task,
        "dpgrad",
        snapshot_every=snapshot_every,
        initial_state=initial_state,
    )


def forgetting_profile(report: RunReport) -> dict:
    """Worst-case loss on finished tasks, overall and per task.

    ``max_forgetting`` is the supremum of ``max_prev_loss`` over every
    snapshot; ``per_task[j]`` additionally folds in the boundary losses from
    every task at or after task j+1 finished.
    """
    if not report.tasks:
        raise ValueError("report is empty")
    max_forgetting = 0.0
    for snap in report.iter_snapshots():
        max_forgetting = max(max_forgetting, snap.max_prev_loss)
    k = len(report.tasks)
    per_task = [0.0] * k
    for rec in report.tasks:
        for snap in rec.snapshots:
            for j, lv in enumerate(snap.prev_losses):
                per_task[j] = max(per_task[j], float(lv))
        for j, lv in enumerate(rec.summary.final_losses):
            per_task[j] = max(per_task[j], float(lv))
    return {"max_forgetting": max_forgetting, "per_task": per_task}


def write_trace_csv(report: RunReport, path, provenance: dict | None = None) -> None:
    """Trace CSV with one row per snapshot; '# ' line embeds provenance."""
    lines = []
    if provenance is not None:
        lines.append("# " + json.dumps(provenance, sort_keys=True))
    lines.append(",".join(TRACE_COLUMNS))
    for snap in report.iter_snapshots():
        lines.append(",".join(repr(x) if isinstance(x, float) else str(x) for x in snap.csv_row()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def summary_dict(report: RunReport, provenance: dict | None = None) -> dict:
    profile = forgetting_profile(report)
    doc = {
        "method": report.method,
        "tasks": [rec.summary.to_dict() for rec in report.tasks],
        "forgetting": profile,
        "all_converged": report.all_converged,
    }
    if provenance is not None:
        doc["provenance"] = provenance
    return doc


def write_summary_json(report: RunReport, path, provenance: dict | None = None) -> dict:
    doc = summary_dict(report, provenance)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return doc
