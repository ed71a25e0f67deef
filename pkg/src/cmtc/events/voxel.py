from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..tensor import Tensor, ops
from .io import EventStream


@dataclass(frozen=True)
class FrameStack:
    """A clip of ``T`` two-channel count frames, channel 0 positive, 1 negative."""

    frames: np.ndarray  # T x 2 x H x W, values in [0, 1]
    t_window: int
    source_id: Optional[str] = None
    person_id: Optional[int] = None
    camera_id: Optional[int] = None

    @property
    def clip_len(self) -> int:
        return self.frames.shape[0]


def event_counts(stream: EventStream, clip_len: int, t_window: int, t_start: int = 0) -> np.ndarray:
    """Raw per-window, per-polarity, per-pixel event counts, shape T x 2 x H x W.

    Events outside ``[t_start, t_start + clip_len * t_window)`` are dropped.
    """
    r = stream.records
    t = r["t"].astype(np.int64) - t_start
    keep = (t >= 0) & (t < clip_len * t_window)
    k = t[keep] // t_window
    ch = np.where(r["p"][keep] > 0, 0, 1)
    counts = np.zeros((clip_len, 2, stream.height, stream.width), dtype=np.int64)
    np.add.at(counts, (k, ch, r["y"][keep].astype(np.int64), r["x"][keep].astype(np.int64)), 1)
    return counts


def voxelize(stream: EventStream, clip_len: int = 8, t_window: int = 50_000, c_max: int = 5,
             t_start: int = 0, dtype=np.float32, **ids) -> FrameStack:
    """Frame ``k`` counts events with t in ``[k * t_window, (k + 1) * t_window)``,
    clamped to ``c_max`` and divided by it."""
    if clip_len < 2:
        raise ValueError(f"clip_len must be >= 2 for neighbouring-frame attention, got {clip_len}")
    if c_max < 1 or t_window < 1:
        raise ValueError("c_max and t_window must be positive")
    if len(stream) == 0:
        raise ValueError("cannot voxelize an empty stream")
    last = int(stream.records["t"].max()) - t_start
    if last < (clip_len - 1) * t_window:
        suggestion = max(1, last // clip_len)
        raise ValueError(
            f"stream spans {last} us, shorter than {clip_len} windows of {t_window} us; "
            f"try t_window <= {suggestion}")
    counts = event_counts(stream, clip_len, t_window, t_start)
    frames = (np.minimum(counts, c_max) / c_max).astype(dtype)
    return FrameStack(frames, t_window, **ids)


def resize_frames(stack: FrameStack, out_h: int, out_w: int) -> FrameStack:
    t, c, h, w = stack.frames.shape
    if (h, w) == (out_h, out_w):
        return stack
    out = ops.upsample_bilinear(Tensor(stack.frames), out_h, out_w).data
    return replace(stack, frames=np.clip(out, 0.0, 1.0).astype(stack.frames.dtype))
