from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .core import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class OptimState:
    """Adam moments plus a step-decay learning-rate schedule."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    lr: float
    base_lr: float
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_factor: float = 0.1
    decay_every: int = 50
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float, **kwargs) -> "OptimState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            lr=lr,
            base_lr=lr,
            **kwargs,
        )

    def set_epoch(self, epoch: int) -> None:
        """Learning rate for 0-based ``epoch``: base * factor ** (epoch // interval)."""
        self.lr = self.base_lr * self.decay_factor ** (epoch // self.decay_every)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimState) -> None:
    """One bias-corrected Adam update applied in place to ``params``."""
    if len(params) != len(state.m):
        raise ValueError(f"state tracks {len(state.m)} params, got {len(params)}")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {i} at step {state.step + 1}")
        if state.m[i].shape != p.shape:
            raise ValueError(f"moment shape {state.m[i].shape} != parameter shape {p.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)


@dataclass
class Adam:
    params: List[Tensor]
    lr: float = 3e-4
    decay_factor: float = 0.1
    decay_every: int = 50
    weight_decay: float = 0.0
    state: OptimState = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.state = OptimState.for_params(
            self.params, self.lr, decay_factor=self.decay_factor, decay_every=self.decay_every,
            weight_decay=self.weight_decay,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def set_epoch(self, epoch: int) -> None:
        self.state.set_epoch(epoch)

    def state_arrays(self) -> dict:
        out = {}
        for i, (m, v) in enumerate(zip(self.state.m, self.state.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        out["step"] = np.array([self.state.step], dtype=np.int64)
        out["lr"] = np.array([self.state.lr], dtype=np.float64)
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        for i in range(len(self.params)):
            self.state.m[i] = np.array(arrays[f"m.{i}"])
            self.state.v[i] = np.array(arrays[f"v.{i}"])
        self.state.step = int(arrays["step"][0])
        self.state.lr = float(arrays["lr"][0])
