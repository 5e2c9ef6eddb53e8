"""Dynamic-kernel convolution module and the Conformer encoder block."""
from __future__ import annotations

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import (BatchNorm, Conv2d, DepthwiseConv1d, LayerNorm, Linear, Module,
                          MultiHeadSelfAttention)
from .autodiff.tensor import Tensor
from .errors import ConfigurationError, DimensionError


class DKModule(Module):
    """Two same-size, different-dilation conv branches fused by channel softmax attention.

    X_i = conv_i(x); Z = mean_TF(X_1 + X_2); z = relu(V Z + n);
    s = softmax_i(W_i z + b_i) per channel; out = s_1 * X_1 + s_2 * X_2.
    The residual connection is left to the caller.  With
    ``per_branch_squeeze`` each branch gets its own (V_i, n_i).
    """

    def __init__(self, channels: int, rng: np.random.Generator, kernel: int = 3,
                 dilations: tuple[int, int] = (1, 2), reduction: int = 4,
                 per_branch_squeeze: bool = False, dtype=np.float32):
        super().__init__()
        if channels % reduction:
            raise ConfigurationError(f"{channels} channels not divisible by reduction {reduction}")
        if len(dilations) != 2:
            raise ConfigurationError("DK module has exactly two branches")
        hidden = channels // reduction
        self.channels = channels
        self.branches = [Conv2d(channels, channels, kernel, rng, dilation=d, dtype=dtype)
                         for d in dilations]
        n_sq = 2 if per_branch_squeeze else 1
        self.squeeze = [Linear(channels, hidden, rng, dtype=dtype) for _ in range(n_sq)]
        self.excite = [Linear(hidden, channels, rng, dtype=dtype) for _ in range(2)]

    def forward(self, x: Tensor, return_weights: bool = False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"DK module expects B x {self.channels} x T x F, got {x.shape}")
        xs = [conv(x) for conv in self.branches]
        pooled = F.global_avg_pool_tf(xs[0] + xs[1])
        b, c = pooled.shape
        logits = []
        for i, fc in enumerate(self.excite):
            sq = self.squeeze[i if len(self.squeeze) == 2 else 0]
            z = F.relu(sq(pooled))
            logits.append(fc(z).reshape(b, 1, c))
        s = F.softmax(F.concat(logits, axis=1), axis=1)
        out = None
        for i, xi in enumerate(xs):
            term = xi * s[:, i].reshape(b, c, 1, 1)
            out = term if out is None else out + term
        if return_weights:
            return out, s.data
        return out


class FeedForward(Module):
    def __init__(self, dim: int, rng: np.random.Generator, expansion: int = 4, dtype=np.float32):
        super().__init__()
        self.norm = LayerNorm(dim, dtype=dtype)
        self.fc1 = Linear(dim, expansion * dim, rng, dtype=dtype)
        self.fc2 = Linear(expansion * dim, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.swish(self.fc1(self.norm(x))))


class AttentionBlock(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.norm = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadSelfAttention(dim, heads, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.attn(self.norm(x))


class ConvBlock(Module):
    """LN -> pointwise (2x, GLU) -> depthwise -> batch norm -> swish -> pointwise."""

    def __init__(self, dim: int, rng: np.random.Generator, kernel: int = 7, dtype=np.float32):
        super().__init__()
        self.norm = LayerNorm(dim, dtype=dtype)
        self.pw1 = Linear(dim, 2 * dim, rng, dtype=dtype)
        self.dw = DepthwiseConv1d(dim, kernel, rng, dtype=dtype)
        self.bn = BatchNorm(dim, dtype=dtype)
        self.pw2 = Linear(dim, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        y = F.glu(self.pw1(self.norm(x)), axis=-1)
        y = y.transpose(0, 2, 1)
        y = F.swish(self.bn(self.dw(y)))
        return self.pw2(y.transpose(0, 2, 1))


class ConformerBlock(Module):
    """z^ = z + FFN(z)/2; z' = z^ + MHSA(z^); z'' = z' + Conv(z'); o = LN(z'' + FFN(z'')/2)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ff_expansion: int = 4,
                 conv_kernel: int = 7, dtype=np.float32):
        super().__init__()
        if dim % heads:
            raise ConfigurationError(f"model dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.ff1 = FeedForward(dim, rng, ff_expansion, dtype)
        self.mhsa = AttentionBlock(dim, heads, rng, dtype)
        self.conv = ConvBlock(dim, rng, conv_kernel, dtype)
        self.ff2 = FeedForward(dim, rng, ff_expansion, dtype)
        self.out_norm = LayerNorm(dim, dtype=dtype)

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 3 or z.shape[-1] != self.dim:
            raise DimensionError(f"conformer expects B x T x {self.dim}, got {z.shape}")
        z_hat = z + self.ff1(z) * 0.5
        z1 = z_hat + self.mhsa(z_hat)
        z2 = z1 + self.conv(z1)
        return self.out_norm(z2 + self.ff2(z2) * 0.5)
