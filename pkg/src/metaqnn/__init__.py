"""Q-learning architecture search over a constrained CNN layer space."""

from .oracle import (
    EvaluationError,
    EvaluationFailed,
    OracleUnavailable,
    ProtocolError,
    RemoteOracle,
    RewardOracle,
    SurrogateOracle,
    SurrogateWeights,
    TrainerEndpoint,
)
from .qlearning import (
    DEFAULT_SCHEDULE,
    Episode,
    QConfig,
    QTable,
    ReplayEntry,
    SearchResult,
    epsilon_for,
    run_search,
    sample_new_network,
    update_q_values,
)
from .space import (
    AddLayer,
    AgentState,
    ArchitectureSpec,
    Conv,
    FC,
    GAP,
    Pool,
    SM,
    SamplerContext,
    SpaceConfig,
    Terminate,
    TerminationKind,
    bin_of,
    legal_actions,
    param_count,
    parse,
    pool_output_size,
    serialize,
    transition,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "AddLayer",
    "AgentState",
    "ArchitectureSpec",
    "Conv",
    "DEFAULT_SCHEDULE",
    "Episode",
    "EvaluationError",
    "EvaluationFailed",
    "FC",
    "GAP",
    "OracleUnavailable",
    "Pool",
    "ProtocolError",
    "QConfig",
    "QTable",
    "RemoteOracle",
    "ReplayEntry",
    "RewardOracle",
    "SM",
    "SamplerContext",
    "SearchResult",
    "SpaceConfig",
    "SurrogateOracle",
    "SurrogateWeights",
    "Terminate",
    "TerminationKind",
    "TrainerEndpoint",
    "bin_of",
    "epsilon_for",
    "legal_actions",
    "param_count",
    "parse",
    "pool_output_size",
    "run_search",
    "sample_new_network",
    "serialize",
    "transition",
    "update_q_values",
    "validate",
]
