"""Task-aware attention token pruning: scoring, selection, attention, training."""

from .attention import PrunedAttentionLayer
from .bench import bench_attention
from .head import PruningHead, score_tokens
from .tokens import (
    feature_map_to_tokens,
    keep_count,
    select_topk,
    tokens_to_feature_map,
)
from .training import (
    PrunerTrainConfig,
    TaskAwarePruner,
    hard_pruning_mse,
    pruner_loss,
    random_pruning_mse,
    train_pruning_head,
)

__all__ = [
    "PrunedAttentionLayer",
    "PrunerTrainConfig",
    "PruningHead",
    "TaskAwarePruner",
    "bench_attention",
    "feature_map_to_tokens",
    "hard_pruning_mse",
    "keep_count",
    "pruner_loss",
    "random_pruning_mse",
    "score_tokens",
    "select_topk",
    "tokens_to_feature_map",
    "train_pruning_head",
]
