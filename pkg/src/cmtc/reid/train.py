"""End-to-end training: EventNet pretraining, joint ReID training, per-epoch evaluation."""
import csv
import hashlib
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..data import ClipArrays
from ..eventnet import EventNetModel, PerceptualExtractor, TrainingDiverged, eventnet_loss, pretrain_eventnet
from ..tensor import Adam, Tensor, load_checkpoint, save_checkpoint, set_default_dtype
from ..tensor.core import get_default_dtype
from .evaluate import evaluate
from .losses import reid_loss
from .metrics import EvalReport
from .model import AblationConfig, CMTCNet

log = logging.getLogger(__name__)

METRIC_FIELDS = ["epoch", "lr", "loss", "ce", "triplet", "aux", "rank1", "rank5", "rank10", "map"]


def pk_batches(labels: np.ndarray, p: int, k: int, rng: np.random.Generator) -> List[np.ndarray]:
    """One epoch of P-identities x K-clips batches.

    Each batch draws min(P, #ids) distinct identities and K clips from each,
    with replacement only when an identity has fewer than K clips.
    """
    labels = np.asarray(labels)
    ids = np.unique(labels)
    n_batches = max(1, -(-len(labels) // (p * k)))
    batches = []
    for _ in range(n_batches):
        chosen = np.sort(rng.choice(ids, size=min(p, len(ids)), replace=False))
        idx = []
        for pid in chosen:
            pool = np.flatnonzero(labels == pid)
            idx.append(rng.choice(pool, size=k, replace=len(pool) < k))
        batches.append(np.concatenate(idx))
    return batches


@dataclass
class TrainResult:
    model: CMTCNet
    history: List[dict]
    report: Optional[EvalReport]


def _data_fingerprint(arrays: ClipArrays) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(arrays.frames).tobytes())
    h.update(np.ascontiguousarray(arrays.targets).tobytes())
    return h.hexdigest()[:16]


def pretrained_eventnet(cfg, train_set: ClipArrays, out_dir: Optional[Path], cache_dir: Optional[Path]) -> EventNetModel:
    """EventNet fitted to contour targets of the training clips.

    The result depends only on the seed, the EventNet settings and the data,
    so it is cached and shared by every ablation variant that uses it.
    """
    t = cfg.train
    model = EventNetModel(2, cfg.model.eventnet_channels, cfg.model.slope, rng=np.random.default_rng([cfg.seed, 11]))
    if t.eventnet_epochs == 0:
        return model
    key = hashlib.sha256(repr((cfg.seed, cfg.model.eventnet_channels, cfg.model.slope, t.eventnet_epochs,
                               t.eventnet_lr, t.eventnet_batch, t.lambda_p, t.dtype,
                               _data_fingerprint(train_set))).encode()).hexdigest()[:16]
    cached = Path(cache_dir) / f"eventnet_{key}" if cache_dir is not None else None
    if cached is not None and (cached / "final.ckpt").exists():
        model.load_state_dict(load_checkpoint(cached / "final.ckpt"))
        log.info("loaded cached EventNet %s", cached)
    else:
        ckpt_dir = out_dir / "eventnet" if out_dir is not None else None
        pretrain_eventnet(model, train_set.frames, train_set.targets, t.eventnet_epochs,
                          Adam(model.parameters(), lr=t.eventnet_lr), PerceptualExtractor(dtype=get_default_dtype()),
                          t.lambda_p, t.eventnet_batch, seed=cfg.seed, checkpoint_dir=ckpt_dir)
        if cached is not None:
            cached.mkdir(parents=True, exist_ok=True)
            save_checkpoint(cached / "final.ckpt", model.state_dict())
            if ckpt_dir is not None:
                shutil.copy(ckpt_dir / "eventnet_history.csv", cached / "eventnet_history.csv")
        return model
    if out_dir is not None and (cached / "eventnet_history.csv").exists():
        (out_dir / "eventnet").mkdir(parents=True, exist_ok=True)
        shutil.copy(cached / "eventnet_history.csv", out_dir / "eventnet" / "eventnet_history.csv")
        shutil.copy(cached / "final.ckpt", out_dir / "eventnet" / "final.ckpt")
    return model


def build_model(cfg, num_classes: int) -> CMTCNet:
    m = cfg.model
    return CMTCNet(num_classes, AblationConfig.named(cfg.ablation), m.channels, m.eventnet_channels, m.slope,
                   rng=np.random.default_rng([cfg.seed, 10]), scaled_attention=m.scaled_attention,
                   per_channel_weight=m.per_channel_weight, renormalize=m.renormalize,
                   oriented_query=m.oriented_query, freeze_eventnet=cfg.train.eventnet_mode == "frozen")


def write_metrics(history: List[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def read_metrics(path: Path) -> List[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def _checkpoint_path(out_dir: Path, epoch: int) -> Path:
    return out_dir / "checkpoints" / f"epoch_{epoch:03d}.ckpt"


def latest_checkpoint(out_dir: Path) -> Optional[Path]:
    found = sorted((Path(out_dir) / "checkpoints").glob("epoch_*.ckpt"))
    return found[-1] if found else None


def save_training_state(path: Path, model: CMTCNet, opt: Adam, epoch: int) -> None:
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    arrays.update({f"optim.{k}": v for k, v in opt.state_arrays().items()})
    arrays["meta.epoch"] = np.array(epoch, dtype=np.int64)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, arrays)


def load_model_state(model: CMTCNet, arrays: dict) -> None:
    model.load_state_dict({k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")})


def train(cfg, train_set: ClipArrays, query: ClipArrays, gallery: ClipArrays, out_dir: Optional[Path] = None,
          resume: bool = False, cache_dir: Optional[Path] = None, evaluate_every_epoch: bool = True) -> TrainResult:
    """Train one ablation variant; writes checkpoints and metrics.csv under ``out_dir`` when given."""
    previous = get_default_dtype()
    set_default_dtype(np.dtype(cfg.train.dtype))
    try:
        return _train(cfg, train_set, query, gallery, Path(out_dir) if out_dir else None, resume, cache_dir,
                      evaluate_every_epoch)
    finally:
        set_default_dtype(previous)


def _train(cfg, train_set, query, gallery, out_dir, resume, cache_dir, evaluate_every_epoch) -> TrainResult:
    t = cfg.train
    dtype = get_default_dtype()
    classes, labels = np.unique(train_set.person_ids, return_inverse=True)
    frames = train_set.frames.astype(dtype, copy=False)
    targets = train_set.targets.astype(dtype, copy=False)
    query = ClipArrays(query.frames.astype(dtype, copy=False), query.targets, query.person_ids, query.camera_ids, query.names)
    gallery = ClipArrays(gallery.frames.astype(dtype, copy=False), gallery.targets, gallery.person_ids,
                         gallery.camera_ids, gallery.names)

    model = build_model(cfg, len(classes))
    start, history = 0, []
    ckpt = latest_checkpoint(out_dir) if (resume and out_dir is not None) else None
    if model.eventnet is not None and ckpt is None:
        model.eventnet.load_state_dict(pretrained_eventnet(cfg, ClipArrays(frames, targets, train_set.person_ids,
                                                                            train_set.camera_ids, train_set.names),
                                                           out_dir, cache_dir).state_dict())
    opt = Adam(model.trainable_parameters(), lr=t.lr, decay_factor=t.decay_factor, decay_every=t.decay_every,
               weight_decay=t.weight_decay)
    if ckpt is not None:
        arrays = load_checkpoint(ckpt)
        load_model_state(model, arrays)
        opt.load_state_arrays({k[len("optim."):]: v for k, v in arrays.items() if k.startswith("optim.")})
        start = int(arrays["meta.epoch"])
        history = [row for row in read_metrics(out_dir / "metrics.csv") if row["epoch"] <= start]
        log.info("resumed from %s at epoch %d", ckpt, start)

    extractor = PerceptualExtractor(dtype=dtype)
    joint_aux = model.eventnet is not None and t.eventnet_mode == "joint" and t.lambda_aux > 0
    step = start * len(pk_batches(labels, t.batch_p, t.batch_k, np.random.default_rng(0)))
    report = None
    for epoch in range(start, t.epochs):
        opt.set_epoch(epoch)
        model.train()
        sums = np.zeros(4)
        batches = pk_batches(labels, t.batch_p, t.batch_k, np.random.default_rng([cfg.seed, 20, epoch]))
        for idx in batches:
            step += 1
            opt.zero_grad()
            out = model(Tensor(frames[idx]))
            loss, ce, tri = reid_loss(out.feature, out.logits, labels[idx], t.margin, return_terms=True)
            aux_value = 0.0
            if joint_aux:
                target = Tensor(targets[idx].reshape((-1,) + targets.shape[2:]))
                aux_loss = eventnet_loss(out.aux, target, extractor, t.lambda_p)
                aux_value = float(aux_loss.data)
                loss = loss + aux_loss * t.lambda_aux
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(step, value)
            loss.backward(opt.params)
            opt.step()
            sums += (value, ce, tri, aux_value)
        means = sums / len(batches)
        row = {"epoch": epoch + 1, "lr": float(opt.state.lr), "loss": means[0], "ce": means[1],
               "triplet": means[2], "aux": means[3]}
        if evaluate_every_epoch or epoch == t.epochs - 1:
            report = evaluate(model, query, gallery)[0]
            row.update(rank1=report.rank1, rank5=report.rank5, rank10=report.rank10, map=report.mAP)
        else:
            row.update(rank1=float("nan"), rank5=float("nan"), rank10=float("nan"), map=float("nan"))
        history.append(row)
        log.info("epoch %d loss %.4f rank1 %.3f mAP %.3f", epoch + 1, row["loss"], row["rank1"], row["map"])
        if out_dir is not None:
            save_training_state(_checkpoint_path(out_dir, epoch + 1), model, opt, epoch + 1)
            for old in sorted((out_dir / "checkpoints").glob("epoch_*.ckpt"))[:-t.keep_checkpoints]:
                old.unlink()
            write_metrics(history, out_dir / "metrics.csv")
    if report is None and history:
        report = evaluate(model, query, gallery)[0]
    return TrainResult(model, history, report)
