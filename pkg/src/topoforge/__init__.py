"""Topology-design toolkit: SIMP compliance minimization, labeled dataset
generation, a conditional WGAN surrogate, and evaluation against the
conventional optimizer."""

from .errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    NumericError,
    ParameterError,
    ShapeError,
    SingularSystemError,
    StateError,
    TopoforgeError,
)
from .fem import (
    X_MIN,
    DensityField,
    LoadCase,
    MeshSpec,
    SolveResult,
    assemble_solve,
    compliance_sensitivity,
    element_stiffness,
)
from .simp import (
    IterationRecord,
    OptimizationParams,
    OptimizationTrace,
    oc_update,
    optimize,
    sensitivity_filter,
)
from .postprocess import (
    PostprocessConfig,
    gaussian_smooth,
    measured_volfrac,
    postprocess,
    threshold,
)
from .dataset import (
    DatasetManifest,
    GridSpec,
    SampleRecord,
    enumerate_grid,
    generate_dataset,
    load_batches,
    read_grid,
    write_grid,
)
from .gan import (
    ConditionLabel,
    ConditionedNetwork,
    GanConfig,
    GenerationResult,
    LabelEmbedding,
    TrainingMetrics,
    TrainResult,
    build_critic,
    build_generator,
    critic_loss,
    embed_label,
    generator_loss,
    load_generator,
    sample,
    train,
)

__version__ = "0.1.0"
