"""Per-frame feature encoders and the modality collaboration block.

Inputs are event features and auxiliary features of equal shape C x H' x W'.
The differential modality ``D = event - aux`` drives query projections for
cross-modality synchronization (CMS); cross-modality fusion (CMF) then
weights, refines and mixes the two streams into a 2C-channel fusion map.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .tensor import Conv2d, Module, ShapeError, Tensor, ops


def to_tokens(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, H*W, C): spatial positions become tokens."""
    n, c, h, w = x.shape
    return ops.transpose(ops.reshape(x, (n, c, h * w)), (0, 2, 1))


def from_tokens(t: Tensor, h: int, w: int) -> Tensor:
    n, _, c = t.shape
    return ops.reshape(ops.transpose(t, (0, 2, 1)), (n, c, h, w))


def attend(q: Tensor, k: Tensor, scaled: bool = False) -> Tensor:
    """Row-stochastic attention softmax(Q K^T) over token grids (N, C, H, W)."""
    logits = ops.matmul(to_tokens(q), ops.transpose(to_tokens(k), (0, 2, 1)))
    if scaled:
        logits = logits * (1.0 / np.sqrt(q.shape[1]))
    return ops.softmax(logits, -1)


class Backbone(Module):
    def __init__(self, in_channels: int, channels: Sequence[int] = (16, 32, 64), slope: float = 0.1,
                 rng=None, dtype=None):
        widths = [in_channels, *channels]
        self.convs = [Conv2d(a, b, 3, padding=1, padding_mode="replicate", rng=rng, dtype=dtype)
                      for a, b in zip(widths[:-1], widths[1:])]
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = ops.avg_pool2d(ops.leaky_relu(conv(x), self.slope), 2)
        return x


class Encoder(Module):
    """Separate backbones for event frames (2 channels) and auxiliaries (1 channel)."""

    def __init__(self, channels: Sequence[int] = (16, 32, 64), slope: float = 0.1, rng=None, dtype=None,
                 event_channels: int = 2, aux_channels: Optional[int] = 1):
        rng = np.random.default_rng(rng)
        self.event = Backbone(event_channels, channels, slope, rng, dtype)
        # events-only models have no auxiliary branch
        self.aux = Backbone(aux_channels, channels, slope, rng, dtype) if aux_channels else None

    @property
    def out_channels(self) -> int:
        return self.event.convs[-1].weight.shape[0]

    def forward(self, frames_e: Tensor, aux: Optional[Tensor]) -> Tuple[Tensor, Optional[Tensor]]:
        fe = self.event(frames_e)
        if aux is None:
            return fe, None
        if self.aux is None:
            raise ValueError("encoder was built without an auxiliary branch")
        if aux.shape[0] != frames_e.shape[0] or aux.shape[2:] != frames_e.shape[2:]:
            raise ShapeError(f"auxiliary frames {aux.shape} do not match event frames {frames_e.shape}")
        fa = self.aux(aux)
        if fa.shape != fe.shape:
            raise ShapeError(f"branch outputs differ: {fe.shape} vs {fa.shape}")
        return fe, fa


def encode(frames_e: Tensor, aux: Tensor, encoder: Encoder) -> Tuple[Tensor, Tensor]:
    return encoder(frames_e, aux)


def diff_modality(event: Tensor, aux: Tensor) -> Tensor:
    if event.shape != aux.shape:
        raise ShapeError(f"differential modality needs equal shapes, got {event.shape} and {aux.shape}")
    return ops.sub(event, aux)


class CmsBlock(Module):
    """1x1 projections: one query projection for D, key/value per modality.

    With ``oriented`` (default) the auxiliary branch queries with the
    projection of ``-D``, i.e. the difference seen from its own side, which
    makes the block exactly symmetric under swapping the modalities.
    """

    def __init__(self, channels: int, rng=None, dtype=None, scaled: bool = False, oriented: bool = True):
        rng = np.random.default_rng(rng)
        self.q = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.k_e = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.v_e = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.k_a = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.v_a = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.scaled = scaled
        self.oriented = oriented


def cms(event: Tensor, aux: Tensor, d: Tensor, block: CmsBlock, return_attention: bool = False):
    """Augmented features softmax(Q_D K^T) V for each modality."""
    if not (event.shape == aux.shape == d.shape):
        raise ShapeError(f"cms needs equal shapes, got {event.shape}, {aux.shape}, {d.shape}")
    _, _, h, w = event.shape
    q_e = block.q(d)
    q_a = block.q(ops.neg(d)) if block.oriented else q_e
    attn_e = attend(q_e, block.k_e(event), block.scaled)
    attn_a = attend(q_a, block.k_a(aux), block.scaled)
    e_hat = from_tokens(ops.matmul(attn_e, to_tokens(block.v_e(event))), h, w)
    a_hat = from_tokens(ops.matmul(attn_a, to_tokens(block.v_a(aux))), h, w)
    if return_attention:
        return e_hat, a_hat, attn_e, attn_a
    return e_hat, a_hat


class ChannelAttention(Module):
    """sigmoid(MLP(avg-pool) + MLP(max-pool)) with a shared bottleneck MLP."""

    def __init__(self, channels: int, reduction: int = 8, slope: float = 0.1, rng=None, dtype=None):
        hidden = max(1, channels // reduction)
        self.fc1 = Conv2d(channels, hidden, 1, rng=rng, dtype=dtype)
        self.fc2 = Conv2d(hidden, channels, 1, rng=rng, dtype=dtype)
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        def mlp(v):
            return self.fc2(ops.leaky_relu(self.fc1(v), self.slope))

        return ops.sigmoid(mlp(ops.global_avg_pool2d(x)) + mlp(ops.global_max_pool2d(x)))


class SpatialAttention(Module):
    def __init__(self, kernel: int = 7, rng=None, dtype=None):
        self.conv = Conv2d(2, 1, kernel, padding=kernel // 2, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        pooled = ops.concat([ops.mean(x, axis=1, keepdims=True), ops.max(x, axis=1, keepdims=True)], 1)
        return ops.sigmoid(self.conv(pooled))


class CmfBlock(Module):
    """Weight heads and channel/spatial refinement, one set per direction."""

    def __init__(self, channels: int, per_channel: bool = False, reduction: int = 8, slope: float = 0.1,
                 rng=None, dtype=None):
        rng = np.random.default_rng(rng)
        out = channels if per_channel else 1
        self.weight_e = Conv2d(2 * channels, out, 3, padding=1, padding_mode="replicate", rng=rng, dtype=dtype)
        self.weight_a = Conv2d(2 * channels, out, 3, padding=1, padding_mode="replicate", rng=rng, dtype=dtype)
        self.channel_e = ChannelAttention(channels, reduction, slope, rng, dtype)
        self.channel_a = ChannelAttention(channels, reduction, slope, rng, dtype)
        self.spatial_e = SpatialAttention(rng=rng, dtype=dtype)
        self.spatial_a = SpatialAttention(rng=rng, dtype=dtype)
        self.per_channel = per_channel


def cmf_weight(synced: Tensor, other: Tensor, head: Conv2d, per_channel: bool = False) -> Tensor:
    """Avg(Sig(Conv(Concat(synced, other)))): one scalar per sample in (0, 1),
    shaped (N, 1, 1, 1), or one per channel when ``per_channel``."""
    if synced.shape[2:] != other.shape[2:]:
        raise ShapeError(f"cmf_weight: spatial dims {synced.shape[2:]} != {other.shape[2:]}")
    gate = ops.sigmoid(head(ops.concat([synced, other], 1)))
    return ops.mean(gate, axis=(2, 3) if per_channel else (1, 2, 3), keepdims=True)


def refine(x: Tensor, channel: ChannelAttention, spatial: SpatialAttention) -> Tensor:
    x1 = channel(x) * x
    return spatial(x1) * x1


@dataclass
class FeaturePair:
    event: Tensor
    aux: Tensor
    diff: Tensor
    event_synced: Tensor
    aux_synced: Tensor
    w_e: Tensor
    w_a: Tensor
    event_weighted: Tensor
    aux_weighted: Tensor
    event_refined: Tensor
    aux_refined: Tensor
    f_alpha: Tensor
    f_beta: Tensor
    fused: Tensor


def cmf_fuse(e_hat: Tensor, a_hat: Tensor, w_e: Tensor, w_a: Tensor, block: CmfBlock):
    e_bar = e_hat * w_e
    a_bar = a_hat * w_a
    e_ref = refine(e_bar, block.channel_e, block.spatial_e)
    a_ref = refine(a_bar, block.channel_a, block.spatial_a)
    f_alpha = a_bar + e_ref
    f_beta = e_bar + a_ref
    return ops.concat([f_alpha, f_beta], 1), (e_bar, a_bar, e_ref, a_ref, f_alpha, f_beta)


class ModalityCollaboration(Module):
    def __init__(self, channels: int, rng=None, dtype=None, scaled: bool = False, per_channel: bool = False,
                 oriented: bool = True, slope: float = 0.1):
        rng = np.random.default_rng(rng)
        self.cms = CmsBlock(channels, rng, dtype, scaled=scaled, oriented=oriented)
        self.cmf = CmfBlock(channels, per_channel, slope=slope, rng=rng, dtype=dtype)

    def forward(self, event: Tensor, aux: Tensor, return_pair: bool = False):
        d = diff_modality(event, aux)
        e_hat, a_hat = cms(event, aux, d, self.cms)
        w_e = cmf_weight(e_hat, aux, self.cmf.weight_e, self.cmf.per_channel)
        w_a = cmf_weight(a_hat, event, self.cmf.weight_a, self.cmf.per_channel)
        fused, (e_bar, a_bar, e_ref, a_ref, f_alpha, f_beta) = cmf_fuse(e_hat, a_hat, w_e, w_a, self.cmf)
        if return_pair:
            return FeaturePair(event, aux, d, e_hat, a_hat, w_e, w_a, e_bar, a_bar, e_ref, a_ref,
                               f_alpha, f_beta, fused)
        return fused
