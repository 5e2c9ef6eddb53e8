"""SELDnet-DK, EINv2-DK#1 and EINv2-DK#2 with a shared multi-ACCDOA output contract.

All three map a B x 7 x T x 64 SALSA-Mel batch to B x T/5 x N x C x 3.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import BatchNorm, Conv2d, Linear, Module, Parameter
from .autodiff.tensor import Tensor, no_grad
from .dk_conformer import ConformerBlock, DKModule
from .errors import ConfigurationError, DimensionError

MODEL_NAMES = ("seldnet-dk", "einv2-dk1", "einv2-dk2")


@dataclass
class ModelConfig:
    in_channels: int = 7
    n_mels: int = 64
    conv_channels: tuple = (64, 128, 256)
    freq_pools: tuple = (4, 2, 2)
    time_pools: tuple = (5, 1, 1)
    dk_modules: int = 2
    dk_kernel: int = 3
    dk_dilations: tuple = (1, 2)
    dk_reduction: int = 4
    dk_per_branch_squeeze: bool = False
    fixed_kernel: bool = False  # ablation: plain 3x3 conv instead of each DK module
    conformer_blocks: int = 2
    hidden: int = 256
    heads: int = 8
    ff_expansion: int = 4
    conformer_conv_kernel: int = 7
    n_tracks: int = 3
    n_classes: int = 13
    cross_stitch_init: tuple = (0.9, 0.1)
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("conv_channels", "freq_pools", "time_pools", "dk_dilations", "cross_stitch_init"):
            setattr(self, name, tuple(getattr(self, name)))
        if not len(self.conv_channels) == len(self.freq_pools) == len(self.time_pools):
            raise ConfigurationError("conv_channels, freq_pools and time_pools must have equal length")
        if self.n_mels % int(np.prod(self.freq_pools)):
            raise ConfigurationError(f"frequency pools {self.freq_pools} do not tile {self.n_mels} bins")
        if self.hidden % self.heads:
            raise ConfigurationError(f"hidden {self.hidden} not divisible by {self.heads} heads")

    @property
    def time_pool(self) -> int:
        return int(np.prod(self.time_pools))

    @property
    def out_bins(self) -> int:
        return self.n_mels // int(np.prod(self.freq_pools))

    @classmethod
    def reduced(cls, **overrides) -> "ModelConfig":
        """Desk-scale configuration used for tests and the toy run."""
        base = dict(conv_channels=(4, 8, 16), hidden=16, heads=2)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _np_dtype(cfg: ModelConfig):
    return np.float64 if cfg.dtype == "float64" else np.float32


class ConvPoolBlock(Module):
    """3x3 conv (same) -> batch norm -> ReLU -> average pool (time, freq)."""

    def __init__(self, c_in: int, c_out: int, pool: tuple[int, int], rng, dtype):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, 3, rng, bias=False, dtype=dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)
        self.pool = pool

    def forward(self, x: Tensor) -> Tensor:
        y = F.relu(self.bn(self.conv(x)))
        if self.pool != (1, 1):
            y = F.avg_pool2d(y, self.pool)
        return y


class PlainConv(Module):
    """Fixed-kernel stand-in for a DK module (ablation)."""

    def __init__(self, channels: int, rng, kernel: int, dtype):
        super().__init__()
        self.conv = Conv2d(channels, channels, kernel, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


def _trunk(cfg: ModelConfig, c_in: int, rng, dtype) -> list[ConvPoolBlock]:
    blocks = []
    for c_out, tp, fp in zip(cfg.conv_channels, cfg.time_pools, cfg.freq_pools):
        blocks.append(ConvPoolBlock(c_in, c_out, (tp, fp), rng, dtype))
        c_in = c_out
    return blocks


def _dk_stack(cfg: ModelConfig, channels: int, rng, dtype) -> list[Module]:
    if cfg.fixed_kernel:
        return [PlainConv(channels, rng, cfg.dk_kernel, dtype) for _ in range(cfg.dk_modules)]
    return [DKModule(channels, rng, cfg.dk_kernel, cfg.dk_dilations, cfg.dk_reduction,
                     cfg.dk_per_branch_squeeze, dtype) for _ in range(cfg.dk_modules)]


def _conformers(cfg: ModelConfig, rng, dtype) -> list[ConformerBlock]:
    return [ConformerBlock(cfg.hidden, cfg.heads, rng, cfg.ff_expansion, cfg.conformer_conv_kernel, dtype)
            for _ in range(cfg.conformer_blocks)]


def _to_sequence(x: Tensor) -> Tensor:
    """B x C x T x F -> B x T x (C*F)."""
    b, c, t, f = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, c * f)


def cross_stitch(a: Tensor, b: Tensor, alpha, channel_axis: int = 1) -> tuple[Tensor, Tensor]:
    """Per-channel 2x2 mixing: a' = a11 a + a12 b, b' = a21 a + a22 b.

    ``alpha`` has shape C x 2 x 2 with C the size of ``channel_axis``.
    """
    if a.shape != b.shape:
        raise DimensionError(f"cross-stitch inputs differ: {a.shape} vs {b.shape}")
    if not isinstance(alpha, Tensor):
        alpha = Tensor(np.asarray(alpha, dtype=a.dtype))
    ax = channel_axis % a.ndim
    c = a.shape[ax]
    if alpha.shape != (c, 2, 2):
        raise DimensionError(f"alpha must be {c} x 2 x 2, got {alpha.shape}")
    bshape = [1] * a.ndim
    bshape[ax] = c

    def coef(i, j):
        return alpha[:, i, j].reshape(*bshape)

    return a * coef(0, 0) + b * coef(0, 1), a * coef(1, 0) + b * coef(1, 1)


class CrossStitch(Module):
    def __init__(self, channels: int, init: tuple[float, float] = (0.9, 0.1), dtype=np.float32):
        super().__init__()
        on, off = init
        alpha = np.tile(np.array([[on, off], [off, on]], dtype=dtype), (channels, 1, 1))
        self.alpha = Parameter(alpha)
        self.channels = channels

    def forward(self, a: Tensor, b: Tensor, channel_axis: int = 1):
        return cross_stitch(a, b, self.alpha, channel_axis)


class SeldModel(Module):
    """Shared pieces: input validation, head reshaping and numpy inference."""

    name = "base"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dt = _np_dtype(cfg)
        self.register_buffer("feat_mean", np.zeros((cfg.in_channels, 1, cfg.n_mels), dtype=dt))
        self.register_buffer("feat_std", np.ones((cfg.in_channels, 1, cfg.n_mels), dtype=dt))

    def set_feature_stats(self, mean: np.ndarray, std: np.ndarray) -> None:
        """Per-plane, per-bin input standardization (C x 1 x F arrays)."""
        self._buffers["feat_mean"][...] = mean
        self._buffers["feat_std"][...] = std

    def _check_input(self, feat: Tensor) -> Tensor:
        if not isinstance(feat, Tensor):
            feat = Tensor(np.asarray(feat, dtype=_np_dtype(self.cfg)))
        if feat.ndim != 4 or feat.shape[1] != self.cfg.in_channels or feat.shape[3] != self.cfg.n_mels:
            raise DimensionError(
                f"{self.name} expects B x {self.cfg.in_channels} x T x {self.cfg.n_mels}, got {feat.shape}")
        if feat.shape[2] % self.cfg.time_pool:
            raise DimensionError(f"feature frames {feat.shape[2]} not a multiple of {self.cfg.time_pool}")
        mean, std = self._buffers["feat_mean"], self._buffers["feat_std"]
        if np.any(mean != 0) or np.any(std != 1):
            feat = (feat - Tensor(mean)) * Tensor(1.0 / std)
        return feat

    def _head_out(self, y: Tensor) -> Tensor:
        b, t, _ = y.shape
        y = F.tanh(y)
        return y.reshape(b, t, self.cfg.n_tracks, self.cfg.n_classes, 3)

    def _branch_inputs(self, feat: Tensor) -> tuple[Tensor, Tensor]:
        m = (self.cfg.in_channels + 1) // 2
        spectral = feat[:, :m]
        spatial = F.pad_channels(feat[:, m:], m)
        return spectral, spatial

    def predict(self, feat: np.ndarray) -> np.ndarray:
        """Inference in eval mode without graph recording; returns a numpy array."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                out = self.forward(Tensor(np.asarray(feat, dtype=_np_dtype(self.cfg))))
        finally:
            self.train(was_training)
        return out.data


class SeldnetDK(SeldModel):
    """Conv trunk -> residual DK modules -> conformer stack -> tanh multi-ACCDOA head."""

    name = "seldnet-dk"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg)
        dt = _np_dtype(cfg)
        self.trunk = _trunk(cfg, cfg.in_channels, rng, dt)
        c = cfg.conv_channels[-1]
        self.dk = _dk_stack(cfg, c, rng, dt)
        self.proj = Linear(c * cfg.out_bins, cfg.hidden, rng, dtype=dt)
        self.encoder = _conformers(cfg, rng, dt)
        self.head = Linear(cfg.hidden, cfg.n_tracks * cfg.n_classes * 3, rng, dtype=dt)

    def encode(self, x: Tensor) -> Tensor:
        for block in self.trunk:
            x = block(x)
        return x

    def forward(self, feat) -> Tensor:
        x = self.encode(self._check_input(feat))
        for dk in self.dk:
            x = x + dk(x)
        z = self.proj(_to_sequence(x))
        for blk in self.encoder:
            z = blk(z)
        return self._head_out(self.head(z))


class EINv2DK1(SeldModel):
    """Two cross-stitched conv trunks (spectral / spatial) feeding one DK + conformer tail.

    The concatenated trunk outputs are fused back to C channels by a
    pointwise conv before the DK modules.
    """

    name = "einv2-dk1"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg)
        dt = _np_dtype(cfg)
        m = (cfg.in_channels + 1) // 2
        self.trunk_a = _trunk(cfg, m, rng, dt)
        self.trunk_b = _trunk(cfg, m, rng, dt)
        self.stitch = [CrossStitch(c, cfg.cross_stitch_init, dt) for c in cfg.conv_channels]
        c = cfg.conv_channels[-1]
        self.fuse = Conv2d(2 * c, c, 1, rng, dtype=dt)
        self.dk = _dk_stack(cfg, c, rng, dt)
        self.proj = Linear(c * cfg.out_bins, cfg.hidden, rng, dtype=dt)
        self.encoder = _conformers(cfg, rng, dt)
        self.head = Linear(cfg.hidden, cfg.n_tracks * cfg.n_classes * 3, rng, dtype=dt)

    def encode(self, feat: Tensor) -> Tensor:
        a, b = self._branch_inputs(feat)
        for blk_a, blk_b, st in zip(self.trunk_a, self.trunk_b, self.stitch):
            a, b = st(blk_a(a), blk_b(b))
        return F.concat([a, b], axis=1)

    def tail(self, x: Tensor) -> Tensor:
        x = self.fuse(x)
        for dk in self.dk:
            x = x + dk(x)
        z = self.proj(_to_sequence(x))
        for blk in self.encoder:
            z = blk(z)
        return self._head_out(self.head(z))

    def forward(self, feat) -> Tensor:
        return self.tail(self.encode(self._check_input(feat)))


class EINv2DK2(SeldModel):
    """Two full cross-stitched branches (trunk, DK, conformers) merged into one head."""

    name = "einv2-dk2"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg)
        dt = _np_dtype(cfg)
        m = (cfg.in_channels + 1) // 2
        c = cfg.conv_channels[-1]
        self.trunk_a = _trunk(cfg, m, rng, dt)
        self.trunk_b = _trunk(cfg, m, rng, dt)
        self.stitch = [CrossStitch(ch, cfg.cross_stitch_init, dt) for ch in cfg.conv_channels]
        self.dk_a = _dk_stack(cfg, c, rng, dt)
        self.dk_b = _dk_stack(cfg, c, rng, dt)
        self.proj_a = Linear(c * cfg.out_bins, cfg.hidden, rng, dtype=dt)
        self.proj_b = Linear(c * cfg.out_bins, cfg.hidden, rng, dtype=dt)
        self.encoder_a = _conformers(cfg, rng, dt)
        self.encoder_b = _conformers(cfg, rng, dt)
        self.seq_stitch = [CrossStitch(cfg.hidden, cfg.cross_stitch_init, dt)
                           for _ in range(cfg.conformer_blocks)]
        self.head = Linear(2 * cfg.hidden, cfg.n_tracks * cfg.n_classes * 3, rng, dtype=dt)

    def forward(self, feat) -> Tensor:
        a, b = self._branch_inputs(self._check_input(feat))
        for blk_a, blk_b, st in zip(self.trunk_a, self.trunk_b, self.stitch):
            a, b = st(blk_a(a), blk_b(b))
        for dk_a, dk_b in zip(self.dk_a, self.dk_b):
            a = a + dk_a(a)
            b = b + dk_b(b)
        za, zb = self.proj_a(_to_sequence(a)), self.proj_b(_to_sequence(b))
        for enc_a, enc_b, st in zip(self.encoder_a, self.encoder_b, self.seq_stitch):
            za, zb = st(enc_a(za), enc_b(zb), channel_axis=-1)
        return self._head_out(self.head(F.concat([za, zb], axis=-1)))


_REGISTRY = {"seldnet-dk": SeldnetDK, "einv2-dk1": EINv2DK1, "einv2-dk2": EINv2DK2}


def build_model(name: str, cfg: ModelConfig | None = None, seed: int = 0) -> SeldModel:
    if name not in _REGISTRY:
        raise ConfigurationError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    cfg = cfg or ModelConfig()
    return _REGISTRY[name](cfg, np.random.default_rng(seed))
