"""Chunked prediction, hop-overlap fusion, rotation TTA, ensembling and evaluation."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .accdoa import decode_predictions
from .audio_io import EventAnnotation, MultichannelClip, parse_metadata_csv, read_wav
from .augment import IDENTITY_ROTATION, channel_rotate, rotate_vectors
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .config import InferenceConfig
from .errors import ConfigurationError
from .features import FeatureConfig, salsa_mel
from .metrics import MetricsReport, evaluate_events
from .models import ModelConfig, SeldModel, build_model


def save_model(path, model: SeldModel, meta: dict | None = None) -> str:
    info = {"model": model.name, "model_config": model.cfg.to_dict()}
    info.update(meta or {})
    return save_checkpoint(path, model.state_dict(), info)


def load_model(path) -> SeldModel:
    """Rebuild a model from a checkpoint written by :func:`save_model`."""
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    state, meta = load_checkpoint(path)
    model = build_model(meta["model"], ModelConfig.from_dict(meta["model_config"]))
    model.load_state_dict(state)
    model.eval()
    return model


def predict_features(model: SeldModel, feat: np.ndarray, chunk_label_frames: int,
                     offset: int = 0, batch_size: int = 16) -> np.ndarray:
    """Run ``model`` over a 7 x T x F feature in fixed chunks; returns T_label x N x C x 3.

    The chunk grid starts ``offset`` label frames before the clip, so each
    offset gives a differently aligned set of chunk boundaries.  Edge frames
    are repeated to fill the grid.
    """
    pool = model.cfg.time_pool
    n_label = feat.shape[1] // pool
    k = chunk_label_frames
    front = offset
    total = int(np.ceil((n_label + front) / k)) * k
    back = total - n_label - front
    padded = np.pad(feat[:, :n_label * pool], ((0, 0), (front * pool, back * pool), (0, 0)), mode="edge")
    chunks = padded.reshape(feat.shape[0], total // k, k * pool, feat.shape[2]).transpose(1, 0, 2, 3)
    outs = [model.predict(chunks[i:i + batch_size]) for i in range(0, len(chunks), batch_size)]
    out = np.concatenate(outs, axis=0).reshape(total, *outs[0].shape[2:])
    return out[front:front + n_label].astype(np.float64)


def predict_hop_overlap(model: SeldModel, feat: np.ndarray, cfg: InferenceConfig) -> np.ndarray:
    """Weighted sum of chunked predictions taken at several grid offsets."""
    acc = None
    for off, w in zip(cfg.hop_offsets, cfg.hop_weights):
        y = predict_features(model, feat, cfg.chunk_label_frames, off)
        acc = w * y if acc is None else acc + w * y
    return acc


def infer_clip(models: Sequence[SeldModel], clip: MultichannelClip, cfg: InferenceConfig,
               feat_cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Ensemble x rotation average of hop-overlap predictions (T x N x C x 3).

    Each rotation permutes the waveform channels, predicts, and maps the
    predicted vectors back with the row's inverse DOA map.
    """
    if not models:
        raise ConfigurationError("no models to run")
    rotations = cfg.rotation_ids if cfg.tta_rotations else (IDENTITY_ROTATION,)
    feats = []
    for r in rotations:
        rc, _ = channel_rotate(clip, [], r)
        feats.append((r, salsa_mel(rc, feat_cfg).values))
    per_model = []
    for model in models:
        per_rot = [rotate_vectors(predict_hop_overlap(model, f, cfg), r, inverse=True) for r, f in feats]
        per_model.append(_mean(per_rot))
    return _mean(per_model)


def _mean(arrays: list[np.ndarray]) -> np.ndarray:
    if len(arrays) == 1:
        return arrays[0]
    return np.sum(np.stack(arrays), axis=0, dtype=np.float64) / len(arrays)


def infer_events(models: Sequence[SeldModel], clip: MultichannelClip, cfg: InferenceConfig,
                 feat_cfg: FeatureConfig = FeatureConfig()) -> list[EventAnnotation]:
    pred = infer_clip(models, clip, cfg, feat_cfg)
    return decode_predictions(pred, cfg.activity_threshold, cfg.merge_angle)


def evaluate_catalog(models: Sequence[SeldModel], entries, cfg: InferenceConfig,
                     feat_cfg: FeatureConfig = FeatureConfig()) -> MetricsReport:
    """Decode, match and score every catalog entry given."""
    entries = list(entries)
    if not entries:
        raise ConfigurationError("evaluation split is empty")
    refs, preds = [], []
    for e in entries:
        refs.append(parse_metadata_csv(e.metadata))
        preds.append(infer_events(models, read_wav(e.audio), cfg, feat_cfg))
    return evaluate_events(refs, preds, models[0].cfg.n_classes)
