"""Run configuration: training, inference, model and feature settings.

Config files are flat ``key = value`` text with ``#`` comments.  Keys carry
a section prefix (``train.``, ``infer.``, ``model.``, ``features.``); tuple
values are written comma-separated.  ``DKSELD_SEED`` in the environment
overrides ``train.seed``.
"""
from __future__ import annotations

import ast
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigurationError
from .features import FeatureConfig
from .models import MODEL_NAMES, ModelConfig

log = logging.getLogger(__name__)

SEED_ENV = "DKSELD_SEED"
STRATEGIES = ("synthetic-only", "real-only", "st", "sc")


@dataclass
class TrainConfig:
    strategy: str = "sc"
    model: str = "seldnet-dk"
    epochs_stage1: int = 100
    epochs_stage2: int = 25
    lr_stage1: float = 5e-4
    lr_decay: float = 0.1
    batch_size: int = 64
    seed: int = 0
    chunk_label_frames: int = 50      # 5 s training chunks
    val_split: str = "validation"
    rotation: bool = False            # 8x channel-rotation data extension
    cutout: float = 0.0
    mixup: float = 0.0
    fmix: float = 0.0
    mixup_alpha: float = 0.2
    fmix_decay: float = 3.0
    spec_augment: bool = False

    def __post_init__(self):
        self.strategy = self.strategy.lower()
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy {self.strategy!r} not in {STRATEGIES}")
        if self.model not in MODEL_NAMES:
            raise ConfigurationError(f"model {self.model!r} not in {MODEL_NAMES}")
        if self.lr_stage1 <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigurationError("learning rate must be positive and decay in (0, 1]")
        if self.batch_size < 1 or self.chunk_label_frames < 1:
            raise ConfigurationError("batch size and chunk length must be positive")

    @property
    def lr_stage2(self) -> float:
        return self.lr_stage1 * self.lr_decay

    @property
    def two_stage(self) -> bool:
        return self.strategy in ("st", "sc")


@dataclass
class InferenceConfig:
    activity_threshold: float = 0.4
    merge_angle: float = 15.0
    tta_rotations: bool = True
    rotation_ids: tuple = (0, 1, 2, 3, 4, 5, 6, 7)
    hop_offsets: tuple = (0, 25)      # label frames; half of the default chunk
    hop_weights: tuple = (0.5, 0.5)
    chunk_label_frames: int = 50
    checkpoints: tuple = ()

    def __post_init__(self):
        self.rotation_ids = tuple(int(r) for r in self.rotation_ids)
        self.hop_offsets = tuple(int(o) for o in self.hop_offsets)
        self.hop_weights = tuple(float(w) for w in self.hop_weights)
        self.checkpoints = tuple(str(c) for c in self.checkpoints)
        if len(self.hop_offsets) != len(self.hop_weights) or not self.hop_offsets:
            raise ConfigurationError("hop_offsets and hop_weights must be non-empty and equal length")
        if abs(sum(self.hop_weights) - 1.0) > 1e-9:
            raise ConfigurationError(f"hop weights {self.hop_weights} do not sum to 1")
        if any(not 0 <= o < self.chunk_label_frames for o in self.hop_offsets):
            raise ConfigurationError("hop offsets must lie in [0, chunk_label_frames)")
        if any(not 0 <= r < 8 for r in self.rotation_ids) or not self.rotation_ids:
            raise ConfigurationError(f"rotation ids {self.rotation_ids} must be a non-empty subset of 0..7")


@dataclass
class Settings:
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferenceConfig = field(default_factory=InferenceConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def to_dict(self) -> dict:
        return {"train": asdict(self.train), "infer": asdict(self.infer),
                "model": self.model.to_dict(), "features": asdict(self.features)}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def deviations(self) -> dict:
        """Keys whose value differs from the full-scale profile."""
        ref = flatten(profile("full"))
        return {k: v for k, v in flatten(self).items() if ref.get(k) != v}


_SECTIONS = {"train": TrainConfig, "infer": InferenceConfig, "model": ModelConfig,
             "features": FeatureConfig}


def valid_keys() -> list[str]:
    return sorted(f"{sec}.{f.name}" for sec, cls in _SECTIONS.items() for f in fields(cls))


def flatten(settings: Settings) -> dict:
    out = {}
    for sec, d in settings.to_dict().items():
        for k, v in d.items():
            out[f"{sec}.{k}"] = tuple(v) if isinstance(v, list) else v
    return out


# Named profiles: the full-scale setup and the desk-scale one used for CPU runs.
PROFILES = {
    "full": {},
    "desk": {
        "model.conv_channels": (16, 32, 64), "model.hidden": 32, "model.heads": 4,
        "train.batch_size": 8, "train.epochs_stage1": 200, "train.epochs_stage2": 0,
        "train.lr_stage1": 3e-3, "train.chunk_label_frames": 20,
        "infer.chunk_label_frames": 20, "infer.hop_offsets": (0, 10),
    },
}


def parse_value(text: str):
    text = text.strip()
    if text.lower() in ("true", "yes", "on"):
        return True
    if text.lower() in ("false", "no", "off"):
        return False
    if text.lower() in ("none", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if "," in text:
            return tuple(parse_value(p) for p in text.split(",") if p.strip())
        return text


def read_config_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = parse_value(value)
    return out


def _coerce(cls, name: str, value):
    ftype = {f.name: f for f in fields(cls)}[name].type
    if "tuple" in str(ftype):
        if value is None:
            return ()
        if isinstance(value, (list, int, float, str)):
            value = tuple(value) if isinstance(value, list) else (value,)
    if "float" in str(ftype) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    return value


def build_settings(values: dict, base: Settings | None = None) -> Settings:
    """Apply flat ``section.key`` values on top of ``base``; unknown keys are rejected."""
    keys = set(valid_keys())
    unknown = sorted(k for k in values if k not in keys)
    if unknown:
        raise ConfigurationError(f"unknown config keys {unknown}; valid keys: {', '.join(valid_keys())}")
    base = base or Settings()
    parts = {}
    for sec, cls in _SECTIONS.items():
        upd = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(sec + ".")}
        current = getattr(base, sec)
        upd = {k: _coerce(cls, k, v) for k, v in upd.items()}
        try:
            parts[sec] = replace(current, **upd) if upd else current
        except TypeError as exc:
            raise ConfigurationError(f"bad value in section {sec}: {exc}") from exc
    return Settings(**parts)


def profile(name: str) -> Settings:
    if name not in PROFILES:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return build_settings(PROFILES[name])


def load_settings(path=None, profile_name: str = "full", overrides: dict | None = None,
                  env=None) -> Settings:
    """Profile, then config file, then explicit overrides, then the seed env var."""
    values = dict(PROFILES.get(profile_name, {}))
    if profile_name not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile_name!r}; choose from {sorted(PROFILES)}")
    if path is not None:
        values.update(read_config_file(path))
    values.update(overrides or {})
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            values["train.seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigurationError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from exc
    settings = build_settings(values)
    dev = settings.deviations()
    if dev:
        log.info("settings differ from the full-scale profile: %s", dev)
    return settings


def write_config_file(settings: Settings, path) -> None:
    lines = []
    for k, v in flatten(settings).items():
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v) + ("," if len(v) == 1 else "")
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")
