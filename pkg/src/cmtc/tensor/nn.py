"""Parameter containers and the small set of layers the networks are built from."""
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import ops
from .core import Tensor, get_default_dtype, no_grad


class Parameter(Tensor):
    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Base class: parameters, buffers and submodules are discovered from attributes.

    Discovery follows attribute assignment order, so parameter paths and the
    order the optimizer sees them in are stable across runs.
    """

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in self._children():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(path + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in getattr(self, "buffers", {}).items():
            yield f"{prefix}{name}", value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffers = {}
        for m_prefix, m in self._named_modules():
            for name in getattr(m, "buffers", {}):
                buffers[m_prefix + name] = (m, name)
        expected = set(params) | set(buffers)
        if strict and set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, value in state.items():
            if name in params:
                p = params[name]
                if p.shape != value.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
                p.data = np.array(value, dtype=p.dtype)
            elif name in buffers:
                m, key = buffers[name]
                m.buffers[key] = np.array(value, dtype=m.buffers[key].dtype)

    def _named_modules(self, prefix: str = ""):
        yield prefix, self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value._named_modules(f"{prefix}{name}.")

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 0,
                 bias: bool = True, rng=None, dtype=None, padding_mode: str = "zeros"):
        dtype = dtype or get_default_dtype()
        rng = _rng(rng)
        fan_in = in_ch * kernel * kernel
        # He init for leaky-relu stacks
        w = rng.standard_normal((out_ch, in_ch, kernel, kernel)) * np.sqrt(2.0 / fan_in)
        self.weight = Parameter(w, dtype=dtype)
        self.bias = Parameter(np.zeros(out_ch), dtype=dtype) if bias else None
        self.stride = stride
        self.padding = padding
        self.padding_mode = padding_mode

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.padding_mode)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True, rng=None, dtype=None,
                 std: Optional[float] = None):
        dtype = dtype or get_default_dtype()
        rng = _rng(rng)
        std = np.sqrt(1.0 / in_features) if std is None else std
        self.weight = Parameter(rng.standard_normal((in_features, out_features)) * std, dtype=dtype)
        self.bias = Parameter(np.zeros(out_features), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = ops.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class BatchNorm1d(Module):
    """Batch normalization over axis 0 of an (N, D) input.

    Training mode normalizes with batch statistics and updates running
    estimates; eval mode uses the running estimates.
    """

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5, dtype=None):
        dtype = dtype or get_default_dtype()
        self.weight = Parameter(np.ones(num_features), dtype=dtype)
        self.bias = Parameter(np.zeros(num_features), dtype=dtype)
        self.buffers = {
            "running_mean": np.zeros(num_features, dtype=dtype),
            "running_var": np.ones(num_features, dtype=dtype),
        }
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        if self.training and x.shape[0] > 1:
            mu = ops.mean(x, axis=0, keepdims=True)
            centered = x - mu
            var = ops.mean(centered * centered, axis=0, keepdims=True)
            n = x.shape[0]
            m = self.momentum
            with no_grad():
                self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mu.data[0]).astype(x.dtype)
                self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * var.data[0] * n / (n - 1)).astype(x.dtype)
            normed = centered / ops.sqrt(var + self.eps)
        else:
            mu = self.buffers["running_mean"]
            normed = (x - mu) / np.sqrt(self.buffers["running_var"] + self.eps).astype(x.dtype)
        return normed * self.weight + self.bias
