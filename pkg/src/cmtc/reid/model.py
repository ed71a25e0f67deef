"""The full re-identification network and its ablation variants."""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..eventnet import EventNetModel
from ..modality import Encoder, ModalityCollaboration
from ..temporal import TemporalCollaboration, pair_schedule
from ..tensor import BatchNorm1d, Linear, Module, Tensor, ops


@dataclass(frozen=True)
class AblationConfig:
    use_eventnet: bool = True
    use_mc: bool = True
    use_tc: bool = True

    def validate(self) -> None:
        if (self.use_mc or self.use_tc) and not self.use_eventnet:
            raise ValueError("MC and TC take auxiliaries as input, so they require use_eventnet")

    @property
    def name(self) -> str:
        for name, cfg in ABLATIONS.items():
            if cfg == self:
                return name
        return f"eventnet={self.use_eventnet},mc={self.use_mc},tc={self.use_tc}"

    @classmethod
    def named(cls, name: str) -> "AblationConfig":
        try:
            return ABLATIONS[name]
        except KeyError:
            raise ValueError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}") from None


# rows in the order of the ablation table
ABLATIONS = {
    "baseline": AblationConfig(False, False, False),
    "eventnet": AblationConfig(True, False, False),
    "eventnet_mc": AblationConfig(True, True, False),
    "eventnet_tc": AblationConfig(True, False, True),
    "full": AblationConfig(True, True, True),
}


def pooled_mean(maps: Tensor, batch: int) -> Tensor:
    """(batch * n, D, h, w) maps -> (batch, D): spatial average, then mean over the n maps."""
    g = ops.mean(maps, axis=(2, 3))
    return ops.mean(ops.reshape(g, (batch, -1, g.shape[1])), axis=1)


def aggregate_clip(pair_features: Sequence[Tensor], neck: BatchNorm1d) -> Tensor:
    """Pool each pair map over space, average over pairs, apply the neck; returns a d-vector."""
    if len(pair_features) == 0:
        raise ValueError("aggregate_clip needs at least one pair feature")
    maps = ops.stack([f if f.ndim == 3 else ops.reshape(f, f.shape[1:]) for f in pair_features], 0)
    return ops.reshape(neck(pooled_mean(maps, 1)), (-1,))


@dataclass
class ModelOutput:
    feature: Tensor               # pre-neck clip descriptor (triplet loss)
    embedding: Tensor             # post-neck descriptor (retrieval)
    logits: Optional[Tensor]      # identity logits (cross-entropy)
    aux: Optional[Tensor]         # EventNet auxiliaries, (B * T, 1, H, W)


class CMTCNet(Module):
    def __init__(self, num_classes: int, ablation: AblationConfig = ABLATIONS["full"],
                 channels: Sequence[int] = (16, 32, 64), eventnet_channels: Sequence[int] = (16, 32, 64),
                 slope: float = 0.1, rng=None, dtype=None, scaled_attention: bool = False,
                 per_channel_weight: bool = False, renormalize: bool = False, oriented_query: bool = True,
                 freeze_eventnet: bool = False):
        ablation.validate()
        rng = np.random.default_rng(rng)
        self.ablation = ablation
        self.freeze_eventnet = freeze_eventnet
        c = channels[-1]
        self.eventnet = EventNetModel(2, eventnet_channels, slope, rng, dtype) if ablation.use_eventnet else None
        self.encoder = Encoder(channels, slope, rng, dtype, aux_channels=1 if ablation.use_eventnet else None)
        self.mc = (ModalityCollaboration(c, rng, dtype, scaled=scaled_attention, per_channel=per_channel_weight,
                                         oriented=oriented_query, slope=slope) if ablation.use_mc else None)
        self.tc = (TemporalCollaboration(c, 2 * c, rng, dtype, renormalize=renormalize, scaled=scaled_attention)
                   if ablation.use_tc else None)
        if ablation.use_tc:
            self.dim = 4 * c
        elif ablation.use_eventnet:
            self.dim = 2 * c
        else:
            self.dim = c
        self.neck = BatchNorm1d(self.dim, dtype=dtype)
        self.classifier = Linear(self.dim, num_classes, bias=False, rng=rng, dtype=dtype, std=0.01)

    def reid_parameters(self) -> List:
        """Everything except EventNet, for the frozen-EventNet mode."""
        skip = {id(p) for p in self.eventnet.parameters()} if self.eventnet is not None else set()
        return [p for p in self.parameters() if id(p) not in skip]

    def trainable_parameters(self) -> List:
        return self.reid_parameters() if self.freeze_eventnet else self.parameters()

    def forward(self, frames, with_logits: bool = True) -> ModelOutput:
        """``frames`` is (B, T, 2, H, W); returns clip-level descriptors."""
        frames = frames if isinstance(frames, Tensor) else Tensor(frames)
        b, t = frames.shape[:2]
        x = ops.reshape(frames, (b * t,) + frames.shape[2:])
        aux = None
        if self.eventnet is not None:
            aux = self.eventnet(x)
            if self.freeze_eventnet:
                aux = aux.detach()
        e, a = self.encoder(x, aux)
        abl = self.ablation
        if not abl.use_eventnet:
            feat = pooled_mean(e, b)
        elif not abl.use_tc:
            fused = self.mc(e, a) if abl.use_mc else ops.concat([e, a], 1)
            feat = pooled_mean(fused, b)
        else:
            psi = self.mc(e, a) if abl.use_mc else ops.concat([e, a], 1)
            feat = pooled_mean(self._temporal(psi, e, a, b, t), b)
        emb = self.neck(feat)
        logits = self.classifier(emb) if with_logits else None
        return ModelOutput(feat, emb, logits, aux)

    def _temporal(self, psi: Tensor, e: Tensor, a: Tensor, b: int, t: int) -> Tensor:
        pairs = pair_schedule(t)
        cur = np.array([k * t + i for k in range(b) for i, _ in pairs])
        nxt = cur + 1
        return self.tc(psi[cur], e[cur], e[nxt], a[cur], a[nxt])
