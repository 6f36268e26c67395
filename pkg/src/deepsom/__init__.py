"""Deep self-organizing-map networks with winners-share-all activation."""

from .aplearn import (
    AdvanceCache,
    ApParams,
    LabelMap,
    TrialOutcome,
    assign_labels,
    classify,
    classify_batch,
    layer_rates,
    learning_trial,
    warm_cache,
)
from .checkpoint import (
    Checkpoint,
    checkpoint_from_network,
    load_checkpoint,
    network_from_checkpoint,
    save_checkpoint,
)
from .dataio import Dataset, SampleStream, load_idx, take_block
from .errors import (
    CalibrationError,
    CheckpointError,
    ConfigurationError,
    DataFormatError,
    DeepSomError,
    NumericError,
)
from .estimator import DeepSomClassifier
from .exports import feature_atlas, optimal_stimulus, usage_entropy, usage_histogram
from .harness import (
    BlockMetrics,
    RunConfig,
    evaluate,
    run_block,
    run_experiment,
)
from .pretrain import PretrainSchedule, neighbor_similarity, pretrain
from .somcore import (
    ActivationResult,
    KernelParams,
    SomGrid,
    competitive_update,
    grid_distance,
    inner_products,
    normalize_rows,
    wsa_output,
)
from .topology import DeepSomNetwork, LayerSpec, NetworkTopology, reference_layer_specs

__version__ = "0.1.0"

__all__ = [
    "ActivationResult",
    "AdvanceCache",
    "ApParams",
    "BlockMetrics",
    "CalibrationError",
    "Checkpoint",
    "CheckpointError",
    "ConfigurationError",
    "DataFormatError",
    "Dataset",
    "DeepSomClassifier",
    "DeepSomError",
    "DeepSomNetwork",
    "KernelParams",
    "LabelMap",
    "LayerSpec",
    "NetworkTopology",
    "NumericError",
    "PretrainSchedule",
    "RunConfig",
    "SampleStream",
    "SomGrid",
    "TrialOutcome",
    "assign_labels",
    "checkpoint_from_network",
    "classify",
    "classify_batch",
    "competitive_update",
    "evaluate",
    "feature_atlas",
    "grid_distance",
    "inner_products",
    "layer_rates",
    "learning_trial",
    "load_checkpoint",
    "load_idx",
    "neighbor_similarity",
    "network_from_checkpoint",
    "normalize_rows",
    "optimal_stimulus",
    "reference_layer_specs",
    "pretrain",
    "run_block",
    "run_experiment",
    "save_checkpoint",
    "take_block",
    "usage_entropy",
    "usage_histogram",
    "warm_cache",
    "wsa_output",
]
