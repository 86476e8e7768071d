"""Naive fine-tuning baseline: the same task loop without any projection.

Per task it adds unprojected Gaussian noise, runs plain gradient descent on
(U, v), and freezes the prompt; no span bookkeeping and no commit projection.
On a single task it behaves exactly like the projected learner (whose
projectors start out as identities), but with conflicting tasks it overwrites
shared capacity and the loss on earlier tasks climbs, which is the contrast
the trace is meant to exhibit.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .environments import GroundTruth
from .factorization import (
    FeatureState,
    Hyperparams,
    TaskTrace,
    _gradient_loop,
    init_task,
    round_to_grid,
)
from .learner import RunReport, _drive


def _naive_task(
    state: FeatureState,
    w: np.ndarray,
    h: Hyperparams,
    rng: np.random.Generator,
    observer=None,
    snapshot_every: int = 1,
) -> tuple[FeatureState, np.ndarray, TaskTrace]:
    # W and V stay empty for the naive learner, so init and the descent loop
    # see identity projectors; the only structural difference is the missing
    # commit step.
    state, v = init_task(state, h.sigma, rng)
    U, v, n_steps, final_loss = _gradient_loop(
        state.U, v, w, h, state.W.basis, state.V.basis, observer, snapshot_every
    )
    w_hat = round_to_grid(U @ v, h.nu)
    out = replace(
        state,
        U=U,
        prompts=state.prompts + (v.copy(),),
        task_index=state.task_index + 1,
    )
    trace = TaskTrace(
        n_steps=n_steps,
        converged=final_loss <= h.stop_target,
        final_loss=final_loss,
        augmented=False,
        w_hat=w_hat,
    )
    return out, v, trace


def run_naive(
    gt: GroundTruth,
    h: Hyperparams,
    seed: int,
    snapshot_every: int | None = None,
    initial_state: FeatureState | None = None,
) -> tuple[FeatureState, RunReport]:
    """Run the unprojected baseline over all tasks; same trace schema as the
    projected learner, tagged method="naive"."""
    return _drive(
        gt,
        h,
        seed,
        _naive_task,
        "naive",
        snapshot_every=snapshot_every,
        initial_state=initial_state,
    )
