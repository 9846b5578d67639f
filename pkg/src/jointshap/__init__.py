"""Joint Shapley values for cooperative games and machine-learning models."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source checkout
    __version__ = "0.1.0"

from .attribution import (
    Dataset,
    ValueFunction,
    additive_decomposition_check,
    binary_feature_space,
    global_mean_abs,
    local_joint_shapley,
    presence_adjusted_global,
)
from .coefficients import (
    CoefficientTable,
    arrival_size_distribution,
    closed_form_q,
    compute_q,
    verify_coefficient_identities,
)
from .estimator import JointShapleyExplainer
from .game import Coalition, Game, GameError, Permutation, TabularGame, builtin_game, game_from_file
from .indices import (
    IndexResult,
    added_value,
    check_axioms,
    compute_index,
    generalised_shapley,
    joint_shapley_exact,
    shapley,
    shapley_interaction,
    shapley_taylor,
)
from .models import builtin_model, external_model, parse_model_spec, serve, table_model
from .sampler import (
    SamplerConfig,
    arrival_process_expectation,
    arrival_process_simulate,
    convergence_trace,
    sample_joint_shapley,
)

__all__ = [
    "__version__",
    "Coalition",
    "CoefficientTable",
    "Dataset",
    "Game",
    "GameError",
    "IndexResult",
    "JointShapleyExplainer",
    "Permutation",
    "SamplerConfig",
    "TabularGame",
    "ValueFunction",
    "added_value",
    "additive_decomposition_check",
    "arrival_process_expectation",
    "arrival_process_simulate",
    "arrival_size_distribution",
    "binary_feature_space",
    "builtin_game",
    "builtin_model",
    "check_axioms",
    "closed_form_q",
    "compute_index",
    "compute_q",
    "convergence_trace",
    "external_model",
    "game_from_file",
    "generalised_shapley",
    "global_mean_abs",
    "joint_shapley_exact",
    "local_joint_shapley",
    "parse_model_spec",
    "presence_adjusted_global",
    "sample_joint_shapley",
    "serve",
    "shapley",
    "shapley_interaction",
    "shapley_taylor",
    "table_model",
    "verify_coefficient_identities",
]
