"""Asynchronous zeroth-order distributed optimization with residual feedback."""
from .core import (
    AsyncZOError,
    BlockLayout,
    BlockVector,
    ConfigurationError,
    DivergenceError,
    DomainError,
    EvaluationError,
    LayoutError,
    PerturbationDirection,
    RngStream,
    axpy_block,
    sample_block_gaussian,
    sample_categorical,
)
from .estimators import (
    BOOTSTRAP,
    AgentState,
    GradientEstimate,
    one_point_centralized,
    residual_async,
    residual_centralized,
    two_point_async,
    two_point_biased_centralized,
    two_point_unbiased_centralized,
)
from .objectives import (
    FeatureLearningObjective,
    NoiseSpec,
    ObjectiveHandle,
    ObjectiveMetadata,
    QuadraticObjective,
    benchmark_handle,
    make_benchmark,
    quadratic_handle,
)
from .scheduler import ActivationModel, RunConfig, SimulationClock, run_algorithm1, theorem1_schedule

__version__ = "0.1.0"
