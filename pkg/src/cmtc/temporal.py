"""Temporal collaboration: cross-temporal attention between neighbouring frames
(CTA) and its integration with the per-frame fusion map (CTI)."""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .modality import attend, from_tokens, to_tokens
from .tensor import Conv2d, Module, ShapeError, Tensor, ops


def pair_schedule(clip_len: int) -> List[Tuple[int, int]]:
    if clip_len < 2:
        raise ValueError(f"temporal pairs need clip_len >= 2, got {clip_len}")
    return [(i, i + 1) for i in range(clip_len - 1)]


class CtaBlock(Module):
    """Per-modality 1x1 projections: queries from frame i, keys/values from frame i+1."""

    def __init__(self, channels: int, rng=None, dtype=None, renormalize: bool = False, scaled: bool = False):
        rng = np.random.default_rng(rng)
        self.q_e = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.k_e = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.v_e = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.q_a = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.k_a = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.v_a = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.renormalize = renormalize
        self.scaled = scaled


def cta(e_i: Tensor, e_next: Tensor, a_i: Tensor, a_next: Tensor, block: CtaBlock, return_maps: bool = False):
    """Attend frame i+1 from frame i in both modalities with the shared map T = t1 * t2."""
    if not (e_i.shape == e_next.shape == a_i.shape == a_next.shape):
        raise ShapeError(f"cta needs four equal shapes, got {e_i.shape}, {e_next.shape}, {a_i.shape}, {a_next.shape}")
    _, _, h, w = e_i.shape
    t1 = attend(block.q_e(e_i), block.k_e(e_next), block.scaled)
    t2 = attend(block.q_a(a_i), block.k_a(a_next), block.scaled)
    t = t1 * t2
    if block.renormalize:
        t = t / ops.sum(t, axis=-1, keepdims=True)
    y_e = from_tokens(ops.matmul(t, to_tokens(block.v_e(e_next))), h, w)
    y_a = from_tokens(ops.matmul(t, to_tokens(block.v_a(a_next))), h, w)
    if return_maps:
        return y_e, y_a, (t1, t2, t)
    return y_e, y_a


class CtiBlock(Module):
    """Lift the attended feature to the fusion width, then gate both with P."""

    def __init__(self, channels: int, fused_channels: int, rng=None, dtype=None):
        rng = np.random.default_rng(rng)
        self.lift = Conv2d(channels, fused_channels, 1, rng=rng, dtype=dtype)
        self.gate = Conv2d(2 * fused_channels, fused_channels, 1, rng=rng, dtype=dtype)


def cti_gate(psi: Tensor, lifted: Tensor, block: CtiBlock) -> Tensor:
    """P = Conv(Concat(GAP(psi), GAP(lifted))), shaped (N, 2C, 1, 1)."""
    pooled = ops.concat([ops.global_avg_pool2d(psi), ops.global_avg_pool2d(lifted)], 1)
    return block.gate(pooled)


def cti(psi: Tensor, attended: Tensor, block: CtiBlock, return_gate: bool = False):
    if psi.shape[0] != attended.shape[0] or psi.shape[2:] != attended.shape[2:]:
        raise ShapeError(f"cti: fusion map {psi.shape} and attended feature {attended.shape} differ spatially")
    lifted = block.lift(attended)
    p = cti_gate(psi, lifted, block)
    f = psi * p + lifted * p
    return (f, p) if return_gate else f


@dataclass
class TemporalPairFeature:
    t1: Tensor
    t2: Tensor
    t: Tensor
    attended_e: Tensor
    attended_a: Tensor
    f_phi: Tensor
    f_eta: Tensor
    fused: Tensor


def tc_forward(psi: Tensor, attended_e: Tensor, attended_a: Tensor, phi: CtiBlock, eta: CtiBlock) -> Tensor:
    return ops.concat([cti(psi, attended_e, phi), cti(psi, attended_a, eta)], 1)


class TemporalCollaboration(Module):
    def __init__(self, channels: int, fused_channels: int, rng=None, dtype=None, renormalize: bool = False,
                 scaled: bool = False):
        rng = np.random.default_rng(rng)
        self.cta = CtaBlock(channels, rng, dtype, renormalize=renormalize, scaled=scaled)
        self.phi = CtiBlock(channels, fused_channels, rng, dtype)
        self.eta = CtiBlock(channels, fused_channels, rng, dtype)

    def forward(self, psi: Tensor, e_i: Tensor, e_next: Tensor, a_i: Tensor, a_next: Tensor,
                return_pair: bool = False):
        """Fuse frame i's map ``psi`` with features attended from frame i+1."""
        y_e, y_a, (t1, t2, t) = cta(e_i, e_next, a_i, a_next, self.cta, return_maps=True)
        f_phi = cti(psi, y_e, self.phi)
        f_eta = cti(psi, y_a, self.eta)
        fused = ops.concat([f_phi, f_eta], 1)
        if return_pair:
            return TemporalPairFeature(t1, t2, t, y_e, y_a, f_phi, f_eta, fused)
        return fused
