"""Parameter containers and the small set of layers the models are built from."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from ..errors import ConfigurationError, DimensionError
from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor; carries its own Adam moments."""

    __slots__ = ("adam_m", "adam_v")

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)
        self.adam_m: np.ndarray | None = None
        self.adam_v: np.ndarray | None = None


class Module:
    """Minimal module tree.

    Parameters, child modules and lists of child modules assigned as
    attributes are discovered in assignment order; dotted names are stable
    and unique within a model.
    """

    def __init__(self):
        self.training = True
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def _children(self):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, (Module, Parameter)):
                yield key, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                val.name = name
                yield name, val
            else:
                yield from val.named_parameters(prefix=name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, buf in self._buffers.items():
            yield f"{prefix}{key}", buf
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_buffers(prefix=f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, val in self._children():
            if isinstance(val, Module):
                yield from val.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_dict(self, state: dict) -> None:
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if missing or unexpected:
            raise DimensionError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in self.named_parameters():
            src = np.asarray(state[name])
            if src.shape != p.shape:
                raise DimensionError(f"{name}: shape {src.shape} vs {p.shape}")
            p.data = src.astype(p.dtype).copy()
        for name, buf in self.named_buffers():
            buf[...] = np.asarray(state[name], dtype=buf.dtype)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


def _uniform(rng: np.random.Generator, shape, bound: float, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 dtype=np.float32):
        super().__init__()
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Parameter(_uniform(rng, (n_out, n_in), bound, dtype))
        self.bias = Parameter(_uniform(rng, (n_out,), bound, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 dilation: int = 1, bias: bool = True, dtype=np.float32):
        super().__init__()
        bound = np.sqrt(6.0 / (c_in * kernel * kernel))  # He-uniform for ReLU trunks
        self.weight = Parameter(_uniform(rng, (c_out, c_in, kernel, kernel), bound, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None
        self.dilation = dilation

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, dilation=self.dilation, padding="same")


class BatchNorm(Module):
    """Batch normalisation over channel axis 1 (works for 3-d and 4-d input)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.gain = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.gain, self.bias, self._buffers["running_mean"],
                            self._buffers["running_var"], self.training, self.momentum, self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gain, self.bias, self.eps)


class DepthwiseConv1d(Module):
    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        bound = 1.0 / np.sqrt(kernel)
        self.weight = Parameter(_uniform(rng, (channels, kernel), bound, dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.depthwise_conv1d(x, self.weight, self.bias)


def mhsa(x: Tensor, heads: int, wq: Linear, wk: Linear, wv: Linear, wo: Linear,
         return_attention: bool = False):
    """Multi-head scaled dot-product self-attention over B x T x D."""
    b, t, d = x.shape
    if d % heads:
        raise ConfigurationError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads

    def split(y: Tensor) -> Tensor:
        return y.reshape(b, t, heads, dh).transpose(0, 2, 1, 3)

    q, k, v = split(wq(x)), split(wk(x)), split(wv(x))
    scores = F.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    attn = F.softmax(scores, axis=-1)
    ctx = F.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, t, d)
    out = wo(ctx)
    if return_attention:
        return out, attn.data
    return out


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if dim % heads:
            raise ConfigurationError(f"model dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.wq = Linear(dim, dim, rng, dtype=dtype)
        self.wk = Linear(dim, dim, rng, dtype=dtype)
        self.wv = Linear(dim, dim, rng, dtype=dtype)
        self.wo = Linear(dim, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return mhsa(x, self.heads, self.wq, self.wk, self.wv, self.wo)
