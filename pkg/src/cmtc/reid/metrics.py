"""Cross-camera retrieval metrics: distance matrix, CMC and mAP."""
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np


def l2_normalize(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), eps)


def distance_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Euclidean distances between L2-normalized rows; entries lie in [0, 2]."""
    queries, gallery = np.atleast_2d(queries), np.atleast_2d(gallery)
    if len(queries) == 0 or len(gallery) == 0:
        raise ValueError("distance_matrix needs non-empty query and gallery sets")
    if queries.shape[1] != gallery.shape[1]:
        raise ValueError(f"embedding dims differ: {queries.shape[1]} vs {gallery.shape[1]}")
    q, g = l2_normalize(queries), l2_normalize(gallery)
    return np.linalg.norm(q[:, None, :] - g[None, :, :], axis=-1)


@dataclass
class EvalReport:
    rank1: float
    rank5: float
    rank10: float
    mAP: float
    cmc: List[float]
    num_queries: int
    num_invalid: int
    # per query: kept gallery indices, best first
    rankings: List[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"rank1": self.rank1, "rank5": self.rank5, "rank10": self.rank10, "map": self.mAP,
                "num_queries": self.num_queries, "num_invalid": self.num_invalid, "cmc": list(self.cmc)}


def cmc_map(dist: np.ndarray, q_pids: Sequence[int], q_cams: Sequence[int], g_pids: Sequence[int],
            g_cams: Sequence[int], ks: Sequence[int] = (1, 5, 10)) -> EvalReport:
    """CMC@k and mAP with same-identity same-camera gallery entries removed per query.

    Ties in distance are broken by gallery index. Queries without any valid
    positive are left out of every average and counted in ``num_invalid``.
    """
    dist = np.asarray(dist, dtype=np.float64)
    q_pids, q_cams = np.asarray(q_pids), np.asarray(q_cams)
    g_pids, g_cams = np.asarray(g_pids), np.asarray(g_cams)
    if dist.shape != (len(q_pids), len(g_pids)):
        raise ValueError(f"distance matrix {dist.shape} does not match {len(q_pids)} queries x {len(g_pids)} gallery")
    max_k = max(max(ks), 10)
    hits = np.zeros(max_k)
    aps, rankings, invalid = [], [], 0
    for i in range(len(q_pids)):
        keep = ~((g_pids == q_pids[i]) & (g_cams == q_cams[i]))
        idx = np.flatnonzero(keep)
        order = idx[np.argsort(dist[i, idx], kind="stable")]
        rankings.append(order)
        match = g_pids[order] == q_pids[i]
        if not match.any():
            invalid += 1
            continue
        first = int(np.argmax(match))
        if first < max_k:
            hits[first:] += 1
        ranks = np.flatnonzero(match) + 1
        aps.append(float(np.mean(np.arange(1, len(ranks) + 1) / ranks)))
    valid = len(aps)
    cmc = (hits / valid).tolist() if valid else [0.0] * max_k
    return EvalReport(cmc[0], cmc[4], cmc[9], float(np.mean(aps)) if valid else 0.0, cmc,
                      len(q_pids), invalid, rankings)
