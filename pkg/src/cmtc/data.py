"""Turn synthetic clips into the dense arrays the networks train on."""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .eventnet import contour_target
from .events import FrameStack, protocol_split, resize_frames, voxelize


@dataclass
class ClipArrays:
    frames: np.ndarray    # clips x T x 2 x H x W, values in [0, 1]
    targets: np.ndarray   # clips x T x 1 x H x W contour maps
    person_ids: np.ndarray
    camera_ids: np.ndarray
    names: List[str]

    def __len__(self) -> int:
        return len(self.frames)

    def subset(self, idx: Sequence[int]) -> "ClipArrays":
        idx = np.asarray(idx, dtype=np.int64)
        return ClipArrays(self.frames[idx], self.targets[idx], self.person_ids[idx], self.camera_ids[idx],
                          [self.names[i] for i in idx])


def _resize_masks(masks: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if masks.shape[-2:] == (out_h, out_w):
        return masks
    stack = FrameStack(masks[:, None].astype(np.float64), 1)
    return (resize_frames(stack, out_h, out_w).frames[:, 0] >= 0.5).astype(np.uint8)


def prepare_clips(clips, clip_len: int = 8, t_window: int = 50_000, c_max: int = 5,
                  size: Optional[tuple] = None, dtype=np.float32) -> ClipArrays:
    """Voxelize every clip, optionally resize to ``size`` = (H, W), and build contour targets."""
    if not clips:
        raise ValueError("no clips to prepare")
    frames, targets = [], []
    for c in clips:
        fs = voxelize(c.stream, clip_len, t_window, c_max, dtype=np.float64,
                      person_id=c.person_id, camera_id=c.camera_id)
        masks = np.asarray(c.masks)[:clip_len]
        if size is not None:
            fs = resize_frames(fs, *size)
            masks = _resize_masks(masks, *size)
        frames.append(fs.frames.astype(dtype))
        targets.append(np.stack([contour_target(m) for m in masks]).astype(dtype))
    return ClipArrays(
        np.stack(frames), np.stack(targets),
        np.array([c.person_id for c in clips]), np.array([c.camera_id for c in clips]),
        [getattr(c, "name", str(i)) for i, c in enumerate(clips)],
    )


def prepare_split(clips, seed: int, clip_len: int = 8, t_window: int = 50_000, c_max: int = 5,
                  dtype=np.float32):
    """Protocol split of ``clips`` into (train, query, gallery) arrays."""
    split = protocol_split(clips, seed)
    arrays = prepare_clips(clips, clip_len, t_window, c_max, dtype=dtype)
    position = {id(c): i for i, c in enumerate(clips)}
    return tuple(arrays.subset([position[id(c)] for c in part]) for part in (split.train, split.query, split.gallery))
