"""Embedding extraction and report export for a trained model."""
import csv
import json
from pathlib import Path

import numpy as np

from ..data import ClipArrays
from ..tensor import no_grad, save_checkpoint
from .metrics import EvalReport, cmc_map, distance_matrix


def compute_embeddings(model, arrays: ClipArrays, batch_size: int = 16) -> np.ndarray:
    """Post-neck embeddings in eval mode; the model's train/eval flag is restored afterwards."""
    if len(arrays) == 0:
        raise ValueError("cannot embed an empty clip set")
    was_training = model.training
    model.eval()
    out = []
    with no_grad():
        for start in range(0, len(arrays), batch_size):
            out.append(model(arrays.frames[start:start + batch_size], with_logits=False).embedding.data)
    model.train(was_training)
    return np.concatenate(out).astype(np.float64)


def evaluate(model, query: ClipArrays, gallery: ClipArrays, batch_size: int = 16):
    """Returns (report, distances, query embeddings, gallery embeddings)."""
    if len(query) == 0 or len(gallery) == 0:
        raise ValueError("evaluation needs non-empty query and gallery sets")
    q_emb = compute_embeddings(model, query, batch_size)
    g_emb = compute_embeddings(model, gallery, batch_size)
    dist = distance_matrix(q_emb, g_emb)
    report = cmc_map(dist, query.person_ids, query.camera_ids, gallery.person_ids, gallery.camera_ids)
    return report, dist, q_emb, g_emb


def write_report(out_dir: Path, report: EvalReport, dist: np.ndarray, query: ClipArrays, gallery: ClipArrays,
                 q_emb: np.ndarray, g_emb: np.ndarray, top: int = 10) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(out_dir / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for key in ("rank1", "rank5", "rank10", "map", "num_queries", "num_invalid"):
            w.writerow([key, report.to_dict()[key]])
    with open(out_dir / "rankings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_id", "rank", "gallery_id", "distance", "correct"])
        for qi, order in enumerate(report.rankings):
            for rank, gi in enumerate(order[:top], start=1):
                correct = int(gallery.person_ids[gi] == query.person_ids[qi])
                w.writerow([query.names[qi], rank, gallery.names[gi], f"{dist[qi, gi]:.10f}", correct])
    save_checkpoint(out_dir / "embeddings.ckpt", {
        "query.embeddings": q_emb, "query.person_ids": query.person_ids.astype(np.int64),
        "query.camera_ids": query.camera_ids.astype(np.int64),
        "gallery.embeddings": g_emb, "gallery.person_ids": gallery.person_ids.astype(np.int64),
        "gallery.camera_ids": gallery.camera_ids.astype(np.int64),
    })
