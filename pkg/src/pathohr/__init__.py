"""Multi-resolution token-merging transformer laboratory for patch-based
pathology images: patch extraction, six similarity methods, adaptive and
bipartite token merging, fuzzy positional encodings, a multi-query
attention encoder, gated-attention aggregation, and a deterministic
experiment harness."""

from .autodiff import (
    Tape,
    Tensor,
    assert_all_finite,
    gelu,
    grad_check,
    l2_normalize_rows,
    layer_norm,
    linear_apply,
    sigmoid,
    softmax_rows,
    value_of,
)
from .aggregation import (
    aggregate_and_predict,
    create_gated_params,
    gated_attention_weights,
    mse_loss,
    one_hot,
    pre_attention,
    slide_embedding,
    train_step,
)
from .encoder import EncoderParams, encode_grid, encode_patch
from .errors import (
    ConfigError,
    DimensionError,
    EmptyInputError,
    FormatError,
    MergeNotApplicable,
    NumericError,
    PathoHRError,
    TrainingDiverged,
    UndefinedMetric,
)
from .formats import read_checkpoint, read_features, write_checkpoint, write_features
from .harness import (
    TrainSettings,
    ablation_harness,
    bench_report,
    encode_slide,
    pipeline_grad_check,
    run_experiment,
)
from .merge import (
    MergeConfig,
    MergeResult,
    PositionalEncoding,
    atm_merge,
    fuzzy_positional_encoding,
    merge_tokens,
    tome_merge,
)
from .metrics import MetricsReport, classification_metrics, roc_auc, split_indices
from .model import (
    ModelConfig,
    classify,
    count_attention_macs,
    encoder_block,
    init_params,
    multi_query_attention,
    pathohr_forward,
    projection_head,
)
from .patches import Patch, PatchGrid, build_tissue_mask, extract_patches, otsu_threshold
from .pgm import read_pgm, write_pgm
from .rng import RngStream
from .similarity import (
    METHODS,
    SemanticProjector,
    SimilarityConfig,
    attention_score_sim,
    compute_similarity,
    cosine_sim,
    euclidean_sim,
    pool_queries,
    pooled_attention_sim,
    semantic_sim,
    tome_sim,
)
from .synthetic import SyntheticSlide, gen_dataset, gen_synthetic_slide, load_dataset, write_dataset
from .tokens import SimilarityMatrix, TokenSet

__version__ = "0.1.0"
