"""Post-hoc distribution alignment detection engine.

Classifies feature vectors as real or generated by their kNN distance to a
known-fake reference embedding, before and after a regeneration step, with
a synthetic-world simulator and an evaluation harness.
"""

from .calibration import (
    Threshold,
    calibrate_threshold,
    coverage,
    pipeline_distance,
    pipeline_distances,
    threshold_from_distances,
)
from .detector import (
    BatchDetection,
    CommandRegenerator,
    PairedRegenerator,
    Pipeline,
    PipelineConfigError,
    RegenerationError,
    Regenerator,
    Verdict,
    command_regenerator,
    detect,
    detect_batch,
    paired_regenerator,
    verdict_from_distances,
)
from .featstore import (
    FeatureSet,
    FeatureVector,
    PairedSet,
    PdafError,
    ValidationReport,
    load_feature_csv,
    load_feature_file,
    save_feature_file,
    validate,
)
from .harness import (
    EvalResult,
    PipelineSettings,
    SweepCell,
    SweepSpec,
    average_fourier_spectrum,
    evaluate,
    fourier_magnitude,
    mean_accuracy,
    perturb_features,
    read_pgm,
    run_sweep,
    run_world,
)
from .knnindex import KnnConfig, ReferenceSet, knn_distance, knn_distance_batch, knn_oracle
from .pruning import PruneConfig, percentile, prune_activations, prune_set
from .reduction import (
    EmbeddingModel,
    TsneConfig,
    embed_out_of_sample,
    embed_point,
    fit_pca,
    fit_tsne,
    kl_divergence_and_gradient,
    model_id,
    pairwise_affinities,
)
from .simulator import (
    ClusterSpec,
    GeneratorSpec,
    SyntheticWorld,
    SyntheticWorldConfig,
    default_world_config,
    outlier_world_config,
    sample_world,
    world_bayes_oracle,
    wukong_world_config,
)

__version__ = "0.1.0"
