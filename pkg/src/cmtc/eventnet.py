"""EventNet: encoder-decoder mapping event frames to contour-like auxiliary frames."""
import csv
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .tensor import Conv2d, Module, Tensor, ops, save_checkpoint
from .tensor.core import get_default_dtype

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"loss became {value} at step {step}")
        self.step = step


class EventNetModel(Module):
    """Conv + LeakyReLU stages with average-pool downsampling, mirrored by
    bilinear-upsample + conv stages, then a 1x1 conv and a sigmoid."""

    def __init__(self, in_channels: int = 2, channels: Sequence[int] = (16, 32, 64), slope: float = 0.1,
                 rng=None, dtype=None, prior: Optional[float] = None):
        rng = np.random.default_rng(rng)
        dtype = dtype or get_default_dtype()
        self.slope = slope
        widths = [in_channels, *channels]
        self.down = [Conv2d(a, b, 3, padding=1, padding_mode="replicate", rng=rng, dtype=dtype)
                     for a, b in zip(widths[:-1], widths[1:])]
        rev = list(reversed(channels))
        ups = list(zip(rev, rev[1:] + [channels[0]]))
        self.up = [Conv2d(a, b, 3, padding=1, padding_mode="replicate", rng=rng, dtype=dtype) for a, b in ups]
        self.head = Conv2d(channels[0], 1, 1, rng=rng, dtype=dtype)
        if prior is not None:
            # start the sigmoid near an expected contour density instead of 0.5
            self.head.bias.data[:] = np.log(prior / (1 - prior))

    @property
    def factor(self) -> int:
        return 2 ** len(self.down)

    def forward(self, frames: Tensor) -> Tensor:
        """(N, C, H, W) frames to (N, 1, H, W) auxiliaries in (0, 1)."""
        n, c, h, w = frames.shape
        if h % self.factor or w % self.factor:
            raise ValueError(f"EventNet input {h}x{w} must be a multiple of {self.factor} in both dims")
        x = frames
        for conv in self.down:
            x = ops.avg_pool2d(ops.leaky_relu(conv(x), self.slope), 2)
        for conv in self.up:
            x = ops.upsample_bilinear(x, x.shape[2] * 2, x.shape[3] * 2)
            x = ops.leaky_relu(conv(x), self.slope)
        return ops.sigmoid(self.head(x))


def eventnet_forward(model: EventNetModel, frames: Tensor) -> Tensor:
    """T x 2 x H x W frames to T x 1 x H x W auxiliaries, each frame independently."""
    return model(frames)


class PerceptualExtractor:
    """Frozen random conv stack used as a feature space for the perceptual loss.

    Its weights are plain tensors, not parameters, so no optimizer ever sees them.
    """

    def __init__(self, channels: Sequence[int] = (8, 16, 32), in_channels: int = 1, seed: int = 7,
                 slope: float = 0.1, dtype=None):
        rng = np.random.default_rng(seed)
        dtype = dtype or get_default_dtype()
        widths = [in_channels, *channels]
        self.weights = []
        for a, b in zip(widths[:-1], widths[1:]):
            w = rng.standard_normal((b, a, 3, 3)) * np.sqrt(2.0 / (9 * a))
            self.weights.append(Tensor(w, dtype=dtype))
        self.slope = slope

    def __call__(self, x: Tensor) -> Tensor:
        for i, w in enumerate(self.weights):
            if i:
                x = ops.avg_pool2d(x, 2)
            x = ops.leaky_relu(ops.conv2d(x, w, None, 1, 1, "replicate"), self.slope)
        return x

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for w in self.weights:
            h.update(w.data.tobytes())
        return h.hexdigest()


def contour_target(mask: np.ndarray) -> np.ndarray:
    """Silhouette boundary, dilated by one pixel, as a 1 x H x W {0, 1} map.

    A pixel is on the boundary when one of its 4-neighbours has a different
    mask value; pixels outside the image count as background.
    """
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("contour_target needs a binary mask")
    m = np.pad(mask.astype(bool), 1)
    c = m[1:-1, 1:-1]
    edge = (c != m[:-2, 1:-1]) | (c != m[2:, 1:-1]) | (c != m[1:-1, :-2]) | (c != m[1:-1, 2:])
    e = np.pad(edge, 1)
    h, w = mask.shape
    grown = np.zeros_like(edge)
    for dy in range(3):
        for dx in range(3):
            grown |= e[dy:dy + h, dx:dx + w]
    return grown[None].astype(np.float32)


def eventnet_loss(aux: Tensor, target: Tensor, extractor: PerceptualExtractor, lambda_p: float = 0.1,
                  return_terms: bool = False):
    """MSE reconstruction plus ``lambda_p`` times MSE in the extractor's feature space."""
    if aux.shape != target.shape:
        raise ValueError(f"aux shape {aux.shape} != target shape {target.shape}")
    pixel = ops.mse(aux, target)
    if lambda_p:
        perceptual = ops.mse(extractor(aux), extractor(target))
        total = pixel + perceptual * lambda_p
    else:
        perceptual = Tensor(np.zeros((), dtype=aux.dtype))
        total = pixel
    if return_terms:
        return total, float(pixel.data), float(perceptual.data)
    return total


def pretrain_eventnet(model: EventNetModel, frames: np.ndarray, targets: np.ndarray, epochs: int, optimizer,
                      extractor: Optional[PerceptualExtractor] = None, lambda_p: float = 0.1,
                      batch_size: int = 4, seed: int = 0, checkpoint_dir: Optional[Path] = None) -> List[dict]:
    """Fit EventNet to contour targets.

    ``frames`` is (clips, T, 2, H, W) and ``targets`` (clips, T, 1, H, W); a
    batch holds ``batch_size`` clips. Returns per-epoch mean losses and, with
    ``checkpoint_dir``, writes one checkpoint per epoch plus a CSV history.
    """
    extractor = extractor or PerceptualExtractor(dtype=frames.dtype)
    params = model.parameters()
    history = []
    step = 0
    for epoch in range(epochs):
        optimizer.set_epoch(epoch)
        order = np.random.default_rng([seed, epoch]).permutation(len(frames))
        sums = np.zeros(3)
        batches = 0
        for start in range(0, len(order), batch_size):
            idx = np.sort(order[start:start + batch_size])
            x = Tensor(frames[idx].reshape((-1,) + frames.shape[2:]))
            y = Tensor(targets[idx].reshape((-1,) + targets.shape[2:]))
            optimizer.zero_grad()
            total, pixel, perc = eventnet_loss(model(x), y, extractor, lambda_p, return_terms=True)
            step += 1
            if not np.isfinite(total.data):
                raise TrainingDiverged(step, float(total.data))
            total.backward(params)
            optimizer.step()
            sums += (pixel, perc, float(total.data))
            batches += 1
        mse_, perc_, total_ = sums / batches
        history.append({"epoch": epoch + 1, "mse": mse_, "perceptual": perc_, "total": total_})
        log.info("eventnet epoch %d loss %.5f", epoch + 1, total_)
        if checkpoint_dir is not None:
            checkpoint_dir = Path(checkpoint_dir)
            checkpoint_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(checkpoint_dir / f"eventnet_epoch{epoch + 1:03d}.ckpt", model.state_dict())
            write_loss_history(history, checkpoint_dir / "eventnet_history.csv")
    return history


def write_loss_history(history: List[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "mse", "perceptual", "total"])
        writer.writeheader()
        for row in history:
            writer.writerow({k: (f"{v:.8g}" if isinstance(v, float) else v) for k, v in row.items()})
