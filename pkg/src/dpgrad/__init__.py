"""Continual learning with linear features via doubly projected gradient
descent, plus an exact adversary study for quadratic convolutional features."""

from .baselines import run_naive
from .environments import (
    GroundTruth,
    InfeasibleInstanceError,
    SampleBatch,
    empirical_gradients,
    generate_instance,
    load_instance,
    sample_batch,
    save_instance,
    validate_instance,
)
from .factorization import (
    DecompositionView,
    FeatureState,
    Hyperparams,
    ProblemDims,
    RankBudgetError,
    TaskTrace,
    decompose,
    dpgrad_step,
    exact_gradients,
    finalize_task,
    init_task,
    load_checkpoint,
    loss_components,
    round_to_grid,
    run_task,
    save_checkpoint,
)
from .learner import (
    RunReport,
    Snapshot,
    TaskSummary,
    forgetting_profile,
    run_continual,
    write_summary_json,
    write_trace_csv,
)
from .linalg import (
    Subspace,
    add_vector,
    nonzero_singular_bounds,
    orthonormal_basis,
    project,
)
from .lowerbound import (
    CnnParams,
    GameConfig,
    GameReport,
    QuadPoly3,
    adversary_game,
    coefficient_deviation_check,
    expected_sq_loss,
    game_summary,
    monte_carlo_sq_loss,
    predict_poly,
    sample_unit_ball,
    witness_losses,
)

__all__ = [name for name in dir() if not name.startswith("_")]
