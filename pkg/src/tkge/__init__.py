"""Temporal knowledge-graph embeddings with Gaussian, time-evolving representations."""

from .data import (
    DatasetBundle,
    Date,
    IntervalFact,
    IntervalTime,
    PointTime,
    Quadruple,
    RawFact,
    Timeline,
    Vocabulary,
    assemble_bundle,
    build_timeline,
    build_vocabulary,
    discretize,
    expand_interval,
    load_bundle,
    parse_interval_file,
    parse_point_file,
    save_bundle,
)
from .evaluation import FilterIndex, Metrics, build_filter_index, evaluate, rank_query
from .model import (
    GaussianEmbed,
    ModelConfig,
    ModelParams,
    entity_mean_at,
    grad_score,
    init_params,
    interval_score,
    kl_score,
    project_constraints,
    relation_mean_at,
    sym_kl_score,
    ts_score,
)
from .training import (
    AdamState,
    Checkpoint,
    TrainConfig,
    adam_step,
    add_reciprocal,
    adversarial_weights,
    batch_loss,
    load_checkpoint,
    sample_negatives,
    save_checkpoint,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
