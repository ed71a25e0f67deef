"""Identity cross-entropy plus batch-hard triplet loss."""
import warnings

import numpy as np

from ..tensor import Tensor, ops


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels)
    logp = ops.log_softmax(logits, -1)
    return ops.neg(ops.mean(logp[np.arange(len(labels)), labels]))


def pairwise_distances(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Euclidean distances between rows; ``eps`` keeps sqrt differentiable on the diagonal."""
    sq = ops.sum(x * x, axis=1, keepdims=True)
    d2 = sq + ops.transpose(sq) - ops.matmul(x, ops.transpose(x)) * 2.0
    return ops.sqrt(ops.relu(d2) + eps)


def batch_hard_triplet(features: Tensor, labels: np.ndarray, margin: float = 0.3) -> Tensor:
    """Mean over anchors of relu(hardest positive - hardest negative + margin).

    Anchors without a positive or without a negative in the batch are skipped.
    """
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(len(labels), dtype=bool)
    valid = pos.any(1) & (~same).any(1)
    if not valid.any():
        return Tensor(np.zeros((), dtype=features.dtype))
    d = pairwise_distances(features)
    big = float(np.max(d.data)) + 1.0
    hardest_pos = ops.max(d * pos.astype(d.dtype), axis=1)
    hardest_neg = ops.min(d + same.astype(d.dtype) * big, axis=1)
    hinge = ops.relu(hardest_pos - hardest_neg + margin)
    return ops.mean(hinge[np.flatnonzero(valid)])


def reid_loss(features: Tensor, logits: Tensor, labels, margin: float = 0.3, return_terms: bool = False):
    """Cross-entropy on ``logits`` plus batch-hard triplet on ``features``."""
    labels = np.asarray(labels)
    ce = cross_entropy(logits, labels)
    if len(np.unique(labels)) < 2:
        warnings.warn("batch holds a single identity; triplet term skipped", RuntimeWarning, stacklevel=2)
        tri = Tensor(np.zeros((), dtype=ce.dtype))
    else:
        tri = batch_hard_triplet(features, labels, margin)
    total = ce + tri
    if return_terms:
        return total, float(ce.data), float(tri.data)
    return total
