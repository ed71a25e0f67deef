"""On-disk dataset layout: binary event files, silhouette masks and a JSON manifest."""
import json
from pathlib import Path
from typing import List, Union

import numpy as np

from .io import parse_events, write_events
from .synth import SynthConfig, SyntheticClip

MANIFEST = "manifest.json"


def save_dataset(clips: List[SyntheticClip], root: Union[str, Path], config: SynthConfig) -> Path:
    root = Path(root)
    (root / "events").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for clip in clips:
        ev = f"events/{clip.name}.evs"
        mk = f"masks/{clip.name}.npy"
        write_events(clip.stream, root / ev, "binary")
        np.save(root / mk, clip.masks, allow_pickle=False)
        rows.append({"path": ev, "mask_path": mk, "person_id": clip.person_id,
                     "camera_id": clip.camera_id, "clip_index": clip.clip_index,
                     "num_events": len(clip.stream)})
    manifest = {"format": "evs1", "config": config.to_dict(), "clips": rows}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root / MANIFEST


def read_manifest(root: Union[str, Path]) -> dict:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    return json.loads(path.read_text())


def load_dataset(root: Union[str, Path]) -> List[SyntheticClip]:
    root = Path(root)
    manifest = read_manifest(root)
    clips = []
    for row in manifest["clips"]:
        stream = parse_events(root / row["path"], "binary")
        masks = np.load(root / row["mask_path"], allow_pickle=False)
        clips.append(SyntheticClip(stream, masks, int(row["person_id"]), int(row["camera_id"]),
                                   int(row["clip_index"])))
    return clips
