from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass
class ProtocolSplit:
    train: list
    query: list
    gallery: list

    @property
    def train_ids(self) -> set:
        return {c.person_id for c in self.train}

    @property
    def test_ids(self) -> set:
        return {c.person_id for c in self.query} | {c.person_id for c in self.gallery}


def protocol_split(clips: Sequence, seed: int, train_fraction: float = 0.5,
                   query_camera: Optional[int] = None) -> ProtocolSplit:
    """Identity-disjoint train/test split with a cross-camera query/gallery protocol.

    Identities are shuffled by ``seed``; the first ``train_fraction`` of them
    train. Test clips from ``query_camera`` (default: lowest camera id) are
    queries and test clips from every other camera form the gallery.
    """
    ids = sorted({c.person_id for c in clips})
    cams = sorted({c.camera_id for c in clips})
    if len(cams) < 2:
        raise ValueError(f"need clips from at least 2 cameras, got {len(cams)}")
    if len(ids) < 4:
        raise ValueError(f"need at least 4 identities, got {len(ids)}")
    query_camera = cams[0] if query_camera is None else query_camera
    if query_camera not in cams:
        raise ValueError(f"query camera {query_camera} has no clips")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(len(ids) * train_fraction))
    n_train = min(max(n_train, 1), len(ids) - 1)
    train_ids = {ids[i] for i in order[:n_train]}

    train = [c for c in clips if c.person_id in train_ids]
    test = [c for c in clips if c.person_id not in train_ids]
    query = [c for c in test if c.camera_id == query_camera]
    gallery = [c for c in test if c.camera_id != query_camera]
    gallery_keys = {(c.person_id, c.camera_id) for c in gallery}
    orphans = sorted({c.person_id for c in query if not any(
        pid == c.person_id and cam != c.camera_id for pid, cam in gallery_keys)})
    if orphans:
        raise ValueError(f"query identities {orphans} have no cross-camera gallery clip")
    return ProtocolSplit(train, query, gallery)
