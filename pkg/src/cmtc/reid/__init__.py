"""Clip embeddings, ReID losses, training and retrieval evaluation."""
from .evaluate import compute_embeddings, evaluate, write_report
from .losses import batch_hard_triplet, cross_entropy, reid_loss
from .metrics import EvalReport, cmc_map, distance_matrix, l2_normalize
from .model import ABLATIONS, AblationConfig, CMTCNet, aggregate_clip
from .train import TrainResult, pk_batches, train

__all__ = [
    "ABLATIONS", "AblationConfig", "CMTCNet", "aggregate_clip", "reid_loss", "cross_entropy",
    "batch_hard_triplet", "distance_matrix", "cmc_map", "l2_normalize", "EvalReport", "evaluate",
    "compute_embeddings", "write_report", "train", "pk_batches", "TrainResult",
]
