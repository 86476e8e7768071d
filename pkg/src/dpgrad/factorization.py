"""Doubly projected gradient descent on the streaming rank-r factorization task.

Targets w_1, ..., w_k arrive one at a time. The learner keeps a shared factor
U (d x r) plus one prompt vector per finished task, and trains each new task
with gradient steps on 0.5 * ||U v - w||^2 where the U-update is projected
orthogonal to both the committed column span W and the committed row span V.
Committed predictions therefore stay put while new directions are absorbed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import linalg
from .linalg import Subspace

# Relative threshold below which the orthogonal part of a target is treated as
# zero. The signal assumption puts genuine orthogonal components at >= 1/D, so
# anything near float noise is a reuse task.
_WB_ZERO_RTOL = 1e-8


class RankBudgetError(ValueError):
    """Augmenting the committed spans would exceed the factor rank r."""


@dataclass(frozen=True)
class ProblemDims:
    """Ambient dimension d, feature dimension r, number of tasks k."""

    d: int
    r: int
    k: int

    def __post_init__(self):
        if not 1 <= self.r <= self.d:
            raise ValueError(f"need 1 <= r <= d, got r={self.r}, d={self.d}")
        if self.k < 1:
            raise ValueError(f"need k >= 1, got k={self.k}")


@dataclass(frozen=True)
class Hyperparams:
    """Training schedule for one continual run.

    Use :meth:`practical` or :meth:`theory` to build one; ``theory`` derives
    sigma / eta / t_max from the worst-case schedules (constants set to 1) and
    is meant for scaling studies, ``practical`` uses step sizes that converge
    in seconds and is the default everywhere.
    """

    sigma: float
    eta: float
    t_max: int
    epsilon: float
    nu: float
    big_d: float
    mode: str
    stop_target: float

    def __post_init__(self):
        for name in ("sigma", "eta", "nu", "big_d", "stop_target"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 1/2)")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.mode not in ("theory", "practical"):
            raise ValueError(f"mode must be 'theory' or 'practical', got {self.mode!r}")

    @staticmethod
    def default_stop_target(dims: ProblemDims, big_d: float, nu: float, epsilon: float) -> float:
        # Second term: 0.5 * ||Uv - w||^2 <= nu^2/16 puts every coordinate of
        # the error strictly below nu/2, so grid rounding recovers the target.
        return min(epsilon * nu / (big_d * dims.d * dims.k), nu * nu / 16.0)

    @classmethod
    def practical(
        cls,
        dims: ProblemDims,
        big_d: float,
        nu: float,
        epsilon: float = 1e-3,
        *,
        sigma: float = 1e-2,
        eta: float | None = None,
        t_max: int = 200_000,
        stop_target: float | None = None,
    ) -> "Hyperparams":
        if eta is None:
            eta = 5e-2 / big_d**2
        if stop_target is None:
            stop_target = cls.default_stop_target(dims, big_d, nu, epsilon)
        return cls(sigma, eta, t_max, epsilon, nu, big_d, "practical", stop_target)

    @classmethod
    def theory(
        cls,
        dims: ProblemDims,
        big_d: float,
        nu: float,
        epsilon: float = 1e-3,
        *,
        stop_target: float | None = None,
    ) -> "Hyperparams":
        log_term = math.log(dims.d * dims.k / epsilon)
        sigma = epsilon / (dims.d**2 * dims.k * big_d**4 * log_term)
        eta = sigma**3 / (dims.k**2 * big_d**5)
        t_max = math.ceil(
            (big_d / eta) * math.log(big_d * dims.k * dims.d / (epsilon * nu))
            + (big_d / eta) * math.log(dims.k / sigma)
        )
        if stop_target is None:
            stop_target = cls.default_stop_target(dims, big_d, nu, epsilon)
        return cls(sigma, eta, t_max, epsilon, nu, big_d, "theory", stop_target)


@dataclass(frozen=True)
class FeatureState:
    """Live learner state: factor U, committed spans, committed prompts."""

    U: np.ndarray
    W: Subspace
    V: Subspace
    prompts: tuple[np.ndarray, ...] = ()
    task_index: int = 0

    @classmethod
    def initial(cls, dims: ProblemDims) -> "FeatureState":
        return cls(
            U=np.zeros((dims.d, dims.r)),
            W=Subspace.empty(dims.d),
            V=Subspace.empty(dims.r),
        )


@dataclass(frozen=True)
class DecompositionView:
    """Split of (U, w, v) along the committed spans and their complements.

    U_A carries the committed features (columns in W, rows in V), U_B the
    rest; U_B further splits into the rank-one signal part w_B x^T and a noise
    part U_2 whose columns are orthogonal to w_B. The prompt splits as
    v = v_1 + v_2 with v_1 in V. Reconstruction is exact:
    U = U_A + w_B x^T + U_2, w = w_A + w_B, v = v_1 + v_2.
    """

    U_A: np.ndarray
    U_B: np.ndarray
    w_A: np.ndarray
    w_B: np.ndarray
    x: np.ndarray
    U_2: np.ndarray
    v_1: np.ndarray
    v_2: np.ndarray


@dataclass
class TaskTrace:
    """Outcome of one task: step count, convergence flag, rounded target."""

    n_steps: int
    converged: bool
    final_loss: float
    augmented: bool
    w_hat: np.ndarray


def exact_gradients(U: np.ndarray, v: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of 0.5 * ||U v - w||^2: ((Uv - w) v^T, U^T (Uv - w))."""
    resid = U @ v - w
    return np.outer(resid, v), U.T @ resid


def init_task(
    state: FeatureState, sigma: float, rng: np.random.Generator
) -> tuple[FeatureState, np.ndarray]:
    """Add sigma-scaled Gaussian noise to U in the doubly-orthogonal space,
    and draw a fresh sigma-scaled Gaussian prompt.

    Draw order is fixed (U noise, then prompt) so a seeded generator yields a
    reproducible stream. sigma = 0 leaves U unchanged and returns v = 0 while
    still consuming the same draws.
    """
    d, r = state.U.shape
    g = rng.standard_normal((d, r))
    v = sigma * rng.standard_normal(r)
    noise = linalg.project(state.W, g, linalg.COLUMNS_COMPLEMENT)
    noise = linalg.project(state.V, noise, linalg.ROWS_COMPLEMENT)
    return replace(state, U=state.U + sigma * noise), v


def _step(
    U: np.ndarray,
    v: np.ndarray,
    w: np.ndarray,
    eta: float,
    WB: np.ndarray,
    VB: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    resid = U @ v - w
    grad_v = U.T @ resid
    # P_{W_perp} (resid v^T) P_{V_perp} is the outer product of the two
    # projected vectors, so the update never needs a full d x r projection.
    resid_perp = resid - WB @ (WB.T @ resid)
    v_perp = v - VB @ (VB.T @ v)
    return U - eta * np.outer(resid_perp, v_perp), v - eta * grad_v


def dpgrad_step(
    state: FeatureState, v: np.ndarray, w: np.ndarray, eta: float
) -> tuple[FeatureState, np.ndarray]:
    """One doubly projected gradient step on (U, v) for target w."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    U_next, v_next = _step(state.U, v, w, eta, state.W.basis, state.V.basis)
    return replace(state, U=U_next), v_next


def round_to_grid(x: np.ndarray, nu: float) -> np.ndarray:
    """Round every coordinate to the nearest multiple of nu, ties away from 0."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    x = np.asarray(x, dtype=float)
    # + 0.0 normalizes any -0.0 produced by the sign factor.
    return np.sign(x) * np.floor(np.abs(x) / nu + 0.5) * nu + 0.0


def finalize_task(
    state: FeatureState, v: np.ndarray, w_hat: np.ndarray, big_d: float
) -> FeatureState:
    """Commit a finished task.

    If the rounded target has an orthogonal component of norm >= 1/big_d the
    spans W and V are augmented (by w_hat and v), then U is compressed onto
    the committed spans: U <- P_W U P_V. The prompt is frozen either way.
    """
    if big_d <= 0:
        raise ValueError("big_d must be positive")
    W, V = state.W, state.V
    residual = linalg.project(W, w_hat, linalg.COLUMNS_COMPLEMENT)
    if float(np.linalg.norm(residual)) >= 1.0 / big_d:
        if V.dim + 1 > state.U.shape[1]:
            raise RankBudgetError(
                "committed row span would exceed rank r: "
                "instance violates the rank-r realizability premise"
            )
        W = linalg.add_vector(W, w_hat)
        V = linalg.add_vector(V, v)
    WB, VB = W.basis, V.basis
    U = WB @ (WB.T @ state.U)
    U = (U @ VB) @ VB.T
    return replace(
        state,
        U=U,
        W=W,
        V=V,
        prompts=state.prompts + (v.copy(),),
        task_index=state.task_index + 1,
    )


def _gradient_loop(
    U: np.ndarray,
    v: np.ndarray,
    w: np.ndarray,
    h: Hyperparams,
    WB: np.ndarray,
    VB: np.ndarray,
    observer=None,
    snapshot_every: int = 1,
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Projected descent until the loss reaches h.stop_target or t_max steps.

    ``observer(t, U, v, loss)`` fires every ``snapshot_every`` steps and
    always on the final iterate; t counts gradient steps taken so far.
    """
    eta = h.eta
    t = 0
    while True:
        resid = U @ v - w
        loss = 0.5 * float(resid @ resid)
        last = loss <= h.stop_target or t >= h.t_max
        if observer is not None and (last or t % snapshot_every == 0):
            observer(t, U, v, loss)
        if last:
            return U, v, t, loss
        grad_v = U.T @ resid
        resid_perp = resid - WB @ (WB.T @ resid)
        v_perp = v - VB @ (VB.T @ v)
        U = U - eta * np.outer(resid_perp, v_perp)
        v = v - eta * grad_v
        t += 1


def run_task(
    state: FeatureState,
    w: np.ndarray,
    h: Hyperparams,
    rng: np.random.Generator,
    observer=None,
    snapshot_every: int = 1,
) -> tuple[FeatureState, np.ndarray, TaskTrace]:
    """Run one full task: init, descend, round, commit.

    Hitting t_max before the stop target flags the trace as non-converged;
    the task is still rounded and committed, matching the fixed-iteration
    outer loop it implements.
    """
    state, v = init_task(state, h.sigma, rng)
    U, v, n_steps, final_loss = _gradient_loop(
        state.U, v, w, h, state.W.basis, state.V.basis, observer, snapshot_every
    )
    w_hat = round_to_grid(U @ v, h.nu)
    out = finalize_task(replace(state, U=U), v, w_hat, h.big_d)
    trace = TaskTrace(
        n_steps=n_steps,
        converged=final_loss <= h.stop_target,
        final_loss=final_loss,
        augmented=out.W.dim > state.W.dim,
        w_hat=w_hat,
    )
    return out, v, trace


def _decompose_arrays(
    U: np.ndarray, w: np.ndarray, v: np.ndarray, WB: np.ndarray, VB: np.ndarray
) -> DecompositionView:
    w_A = WB @ (WB.T @ w)
    w_B = w - w_A
    norm_wB = float(np.linalg.norm(w_B))
    if norm_wB <= _WB_ZERO_RTOL * max(1.0, float(np.linalg.norm(w))):
        # Reuse task: the residual is projection noise, absorb it into w_A.
        w_A = w.astype(float, copy=True)
        w_B = np.zeros_like(w)
    U_A = WB @ (WB.T @ U)
    U_A = (U_A @ VB) @ VB.T
    U_B = U - U_A
    nb2 = float(w_B @ w_B)
    if nb2 > 0.0:
        x = (U_B.T @ w_B) / nb2
    else:
        x = np.zeros(U.shape[1])
    U_2 = U_B - np.outer(w_B, x)
    v_1 = VB @ (VB.T @ v)
    v_2 = v - v_1
    return DecompositionView(U_A=U_A, U_B=U_B, w_A=w_A, w_B=w_B, x=x, U_2=U_2, v_1=v_1, v_2=v_2)


def decompose(
    state: FeatureState,
    w: np.ndarray,
    v: np.ndarray,
    prev_W: Subspace,
    prev_V: Subspace,
) -> DecompositionView:
    """Unique orthogonal split of (state.U, w, v) along prev_W / prev_V."""
    if prev_W.ambient_dim != state.U.shape[0] or prev_V.ambient_dim != state.U.shape[1]:
        raise ValueError("subspace dimensions do not match the factor shape")
    return _decompose_arrays(state.U, np.asarray(w, float), np.asarray(v, float), prev_W.basis, prev_V.basis)


def loss_components(dv: DecompositionView) -> tuple[float, float, float]:
    """Three-way loss split: committed-feature error, signal error, noise.

    The terms sum to 0.5 * ||U v - w||^2 (exactly, up to float rounding):
    0.5*||U_A v_1 - w_A||^2 + 0.5*||w_B||^2 (x.v_2 - 1)^2 + 0.5*||U_2 v_2||^2.
    """
    r_existing = dv.U_A @ dv.v_1 - dv.w_A
    l_existing = 0.5 * float(r_existing @ r_existing)
    nb2 = float(dv.w_B @ dv.w_B)
    l_signal = 0.5 * nb2 * (float(dv.x @ dv.v_2) - 1.0) ** 2
    noise = dv.U_2 @ dv.v_2
    l_noise = 0.5 * float(noise @ noise)
    return l_existing, l_signal, l_noise


def save_checkpoint(path, state: FeatureState, dims: ProblemDims, rng_seed: int) -> None:
    """Write the learner state as JSON; floats round-trip bit-exactly."""
    doc = {
        "dims": {"d": dims.d, "r": dims.r, "k": dims.k},
        "U": [float(x) for x in state.U.reshape(-1)],
        "W_basis": [[float(x) for x in col] for col in state.W.basis.T],
        "V_basis": [[float(x) for x in col] for col in state.V.basis.T],
        "prompts": [[float(x) for x in p] for p in state.prompts],
        "task_index": state.task_index,
        "rng_seed": int(rng_seed),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[FeatureState, ProblemDims, int]:
    with open(path) as fh:
        doc = json.load(fh)
    dims = ProblemDims(**doc["dims"])
    U = np.asarray(doc["U"], dtype=float).reshape(dims.d, dims.r)
    # Memory layout matters for bit-exact replay: keep the basis C-contiguous
    # exactly as the running learner holds it.
    W_cols = np.asarray(doc["W_basis"], dtype=float)
    V_cols = np.asarray(doc["V_basis"], dtype=float)
    W = Subspace(
        dims.d, np.ascontiguousarray(W_cols.T) if W_cols.size else np.zeros((dims.d, 0))
    )
    V = Subspace(
        dims.r, np.ascontiguousarray(V_cols.T) if V_cols.size else np.zeros((dims.r, 0))
    )
    prompts = tuple(np.asarray(p, dtype=float) for p in doc["prompts"])
    state = FeatureState(U=U, W=W, V=V, prompts=prompts, task_index=int(doc["task_index"]))
    return state, dims, int(doc["rng_seed"])
