"""Workbench for masked-word prediction on synthetic topic corpora.

A single-layer attention model is trained on documents drawn from a
disjoint topic model, and its learned embeddings, value matrix, and
attention pattern are compared against closed-form optima, brute-force
oracles, and exact population-loss formulas.
"""

from .analytic import (
    AttentionBounds,
    FamilyCheck,
    WvConstants,
    attention_bounds,
    check_family_membership,
    diagonal_wv,
    embedding_gram_realization,
    optimal_embedding_gram,
    optimal_wv_l2,
    wv_constants,
)
from .corpus import (
    MASK_TOKEN,
    Document,
    TopicModelConfig,
    document_stream,
    enumerate_topic_subsets,
    load_corpus,
    one_hot_encode,
    sample_document,
    save_corpus,
    topic_of,
    topic_words,
)
from .landscape import (
    AttentionLevels,
    LandscapeGrid,
    LandscapePoint,
    blend_gamma,
    containment_check,
    default_grid,
    exact_loss_block,
    exact_loss_diagonal,
    landscape_point,
    mc_loss,
    sample_mc,
    sweep,
)
from .loss import (
    LossConfig,
    label_distribution,
    masked_loss_and_grad,
    masked_stats_vector,
    population_loss_gradient,
    population_loss_uniform_attention,
    ridge_population_optimum,
)
from .masking import (
    MaskedDocument,
    MaskedStats,
    MaskingConfig,
    load_masked_corpus,
    mask_document,
    masked_distribution,
    save_masked_corpus,
)
from .metrics import (
    AttentionClassReport,
    BlockReport,
    attention_class_report,
    block_report,
    load_matrix_csv,
    rotation_metric,
    save_matrix_csv,
)
from .model import (
    ModelParams,
    NonFiniteError,
    attention_weights,
    backward,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    softmax_columns,
)
from .optim import (
    StepLog,
    TrainConfig,
    TrainDivergedError,
    load_steplog,
    save_steplog,
    train,
)
from .rng import draw_seed, stream_rng

__version__ = "0.1.0"

__all__ = [
    "AttentionBounds",
    "AttentionClassReport",
    "AttentionLevels",
    "BlockReport",
    "Document",
    "FamilyCheck",
    "LandscapeGrid",
    "LandscapePoint",
    "LossConfig",
    "MASK_TOKEN",
    "MaskedDocument",
    "MaskedStats",
    "MaskingConfig",
    "ModelParams",
    "NonFiniteError",
    "StepLog",
    "TopicModelConfig",
    "TrainConfig",
    "TrainDivergedError",
    "WvConstants",
    "attention_bounds",
    "attention_class_report",
    "attention_weights",
    "backward",
    "blend_gamma",
    "block_report",
    "check_family_membership",
    "containment_check",
    "default_grid",
    "diagonal_wv",
    "document_stream",
    "draw_seed",
    "embedding_gram_realization",
    "enumerate_topic_subsets",
    "exact_loss_block",
    "exact_loss_diagonal",
    "forward",
    "init_params",
    "label_distribution",
    "landscape_point",
    "load_checkpoint",
    "load_corpus",
    "load_masked_corpus",
    "load_matrix_csv",
    "load_steplog",
    "mask_document",
    "masked_distribution",
    "masked_loss_and_grad",
    "masked_stats_vector",
    "mc_loss",
    "one_hot_encode",
    "optimal_embedding_gram",
    "optimal_wv_l2",
    "population_loss_gradient",
    "population_loss_uniform_attention",
    "ridge_population_optimum",
    "rotation_metric",
    "sample_document",
    "sample_mc",
    "save_checkpoint",
    "save_corpus",
    "save_masked_corpus",
    "save_matrix_csv",
    "save_steplog",
    "softmax_columns",
    "stream_rng",
    "sweep",
    "topic_of",
    "topic_words",
    "train",
    "wv_constants",
]
