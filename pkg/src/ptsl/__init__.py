"""Multi-task SAC with projected task-specific layers on a numpy autodiff core."""

from .autodiff import Tape, Tensor, backward, no_grad
from .backbone import (
    NetworkConfig,
    PtslBackbone,
    SharedMlp,
    budget_match,
    combine_residual,
    count_parameters,
)
from .encoders import EncoderConfig, build_encoder
from .envs import EnvSuite, conflict_constant_policy_bound, make_env, make_suite
from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    InfeasibleError,
    PtslError,
    ShapeError,
    TaskError,
    TrainingDiverged,
)
from .harness import ExperimentConfig, config_hash, default_config, load_config, report, run
from .sac import (
    MetricsLog,
    ReplayBuffer,
    SacAgent,
    SacHyperparams,
    TrainConfig,
    Transition,
    agent_param_count,
    evaluate,
    train,
)

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "no_grad",
    "NetworkConfig",
    "PtslBackbone",
    "SharedMlp",
    "budget_match",
    "combine_residual",
    "count_parameters",
    "EncoderConfig",
    "build_encoder",
    "EnvSuite",
    "conflict_constant_policy_bound",
    "make_env",
    "make_suite",
    "ConfigError",
    "ContractError",
    "DomainError",
    "InfeasibleError",
    "PtslError",
    "ShapeError",
    "TaskError",
    "TrainingDiverged",
    "ExperimentConfig",
    "config_hash",
    "default_config",
    "load_config",
    "report",
    "run",
    "MetricsLog",
    "ReplayBuffer",
    "SacAgent",
    "SacHyperparams",
    "TrainConfig",
    "Transition",
    "agent_param_count",
    "evaluate",
    "train",
]

__version__ = "0.1.0"
