"""Scene-dedicated training: synthetic-only, real-only, scene transfer (ST) and scene concentrate (SC).

ST pre-trains on synthetic scenes, picks the best checkpoint on real
validation data, then fine-tunes on real scenes at a decayed learning rate.
SC trains on mini-batches that mix both scenes, then fine-tunes the same way.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .accdoa import adpit_loss, decode_predictions, encode_adpit_targets
from .audio_io import DatasetCatalog, parse_metadata_csv, read_wav
from .augment import AugmentConfig, ROTATIONS, augment_batch, channel_rotate
from .autodiff import Adam, Tensor
from .config import Settings
from .errors import ConfigurationError
from .features import FeatureConfig, salsa_mel
from .inference import predict_features, save_model
from .metrics import MetricsReport, evaluate_events
from .models import SeldModel, build_model

log = logging.getLogger(__name__)


@dataclass
class ClipRecord:
    name: str
    scene: str
    features: np.ndarray          # 7 x T x F
    events: list
    n_label_frames: int


@dataclass
class Chunk:
    features: np.ndarray          # 7 x (K * pool) x F
    candidates: np.ndarray        # K x C x P x N x 3
    scene: str


def load_clips(entries, feat_cfg: FeatureConfig, rotation: bool = False,
               pool: int = 5) -> list[ClipRecord]:
    out = []
    for e in entries:
        clip = read_wav(e.audio)
        events = parse_metadata_csv(e.metadata)
        for r in (range(len(ROTATIONS)) if rotation else (None,)):
            c, ev = (clip, events) if r is None else channel_rotate(clip, events, r)
            feat = salsa_mel(c, feat_cfg).values.astype(np.float32)
            name = Path(e.audio).stem + ("" if r is None else f"@rot{r}")
            out.append(ClipRecord(name, e.scene, feat, ev, feat.shape[1] // pool))
    return out


def make_chunks(clips: Sequence[ClipRecord], chunk_frames: int, n_classes: int,
                n_tracks: int = 3, pool: int = 5) -> list[Chunk]:
    """Cut clips into non-overlapping chunks; the last one is edge-padded without labels."""
    chunks = []
    for c in clips:
        targets = encode_adpit_targets(c.events, c.n_label_frames, n_classes, n_tracks)
        n = int(np.ceil(c.n_label_frames / chunk_frames))
        total = n * chunk_frames
        feat = np.pad(c.features[:, :c.n_label_frames * pool],
                      ((0, 0), (0, (total - c.n_label_frames) * pool), (0, 0)), mode="edge")
        cand = np.zeros((total,) + targets.candidates.shape[1:])
        cand[:c.n_label_frames] = targets.candidates
        for i in range(n):
            s = i * chunk_frames
            chunks.append(Chunk(feat[:, s * pool:(s + chunk_frames) * pool],
                                cand[s:s + chunk_frames].astype(np.float32), c.scene))
    return chunks


def feature_stats(clips: Sequence[ClipRecord], n_spectral: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin mean/std shared across the log-Mel planes and across the NIPD planes."""
    feats = np.concatenate([c.features for c in clips], axis=1).astype(np.float64)
    c, _, f = feats.shape
    mean = np.zeros((c, 1, f))
    std = np.ones((c, 1, f))
    for sl in (slice(0, n_spectral), slice(n_spectral, c)):
        block = feats[sl]
        if block.size:
            mean[sl] = block.mean(axis=(0, 1))
            std[sl] = np.maximum(block.std(axis=(0, 1)), 1e-6)
    return mean, std


def mixed_batches(chunks: Sequence[Chunk], batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    """Index batches; when both scenes exist every batch holds some of each.

    Real chunks are spread in proportion to their share (at least one per
    batch) and recycled as needed; each synthetic chunk appears once.
    """
    by_scene: dict[str, list[int]] = {}
    for i, c in enumerate(chunks):
        by_scene.setdefault(c.scene, []).append(i)
    if len(by_scene) < 2:
        order = rng.permutation(len(chunks)).tolist()
        batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
        if len(batches) > 1 and len(batches[-1]) < 2:
            batches[-2].extend(batches.pop())
        return batches
    syn, real = by_scene["synthetic"], by_scene["real"]
    n_batches = int(np.ceil(len(chunks) / batch_size))
    n_real = min(max(1, round(batch_size * len(real) / len(chunks))), batch_size - 1)
    syn_order = [syn[i] for i in rng.permutation(len(syn))]
    real_order: list[int] = []
    batches = []
    for b in range(n_batches):
        need = n_real
        picked_r = []
        while need:
            if not real_order:
                real_order = [real[i] for i in rng.permutation(len(real))]
            picked_r.append(real_order.pop())
            need -= 1
        picked_s = syn_order[b * (batch_size - n_real):(b + 1) * (batch_size - n_real)]
        if not picked_s:
            picked_s = [syn[int(rng.integers(len(syn)))]]
        batches.append(picked_s + picked_r)
    leftover = syn_order[n_batches * (batch_size - n_real):]
    if leftover:
        batches[-1].extend(leftover)
    return batches


def validate(model: SeldModel, clips: Sequence[ClipRecord], chunk_frames: int,
             threshold: float = 0.4, merge_angle: float = 15.0) -> MetricsReport:
    refs, preds = [], []
    for c in clips:
        y = predict_features(model, c.features, chunk_frames)
        refs.append(c.events)
        preds.append(decode_predictions(y, threshold, merge_angle))
    return evaluate_events(refs, preds, model.cfg.n_classes)


@dataclass
class StagePlan:
    stage: int
    scenes: tuple
    epochs: int
    lr: float


@dataclass
class TrainResult:
    model: SeldModel
    history: list = field(default_factory=list)
    best: dict = field(default_factory=dict)
    checkpoint: Path | None = None
    log_path: Path | None = None
    report: MetricsReport | None = None   # validation report of the kept weights

    @property
    def losses(self) -> list[float]:
        return [x for rec in self.history for x in rec["batch_losses"]]


def plan_stages(settings: Settings) -> list[StagePlan]:
    t = settings.train
    first = {"synthetic-only": ("synthetic",), "real-only": ("real",), "st": ("synthetic",),
             "sc": ("synthetic", "real")}[t.strategy]
    plans = [StagePlan(1, first, t.epochs_stage1, t.lr_stage1)]
    if t.two_stage and t.epochs_stage2 > 0:
        plans.append(StagePlan(2, ("real",), t.epochs_stage2, t.lr_stage2))
    return plans


def _check_catalog(settings: Settings, catalog: DatasetCatalog) -> None:
    t = settings.train
    have = {s: bool(catalog.select(s, "train")) for s in ("synthetic", "real")}
    if t.strategy in ("sc", "st", "real-only") and not have["real"]:
        raise ConfigurationError(f"strategy {t.strategy!r} needs real training data")
    if t.strategy in ("sc", "st", "synthetic-only") and not have["synthetic"]:
        raise ConfigurationError(f"strategy {t.strategy!r} needs synthetic training data")


def _validation_entries(settings: Settings, catalog: DatasetCatalog):
    split = settings.train.val_split
    real = catalog.select("real", split)
    if real:
        return real
    if settings.train.strategy == "synthetic-only":
        syn = catalog.select("synthetic", split)
        if syn:
            return syn
    raise ConfigurationError(f"no validation clips in split {split!r} for strategy {settings.train.strategy!r}")


def _reset_optimizer_state(model: SeldModel) -> None:
    for p in model.parameters():
        p.adam_m = p.adam_v = None


def train(settings: Settings, catalog: DatasetCatalog, model: SeldModel | None = None,
          out_dir=None, on_epoch: Callable[[dict], bool] | None = None) -> TrainResult:
    """Run the configured strategy and keep the best-validation-score weights.

    ``on_epoch`` receives each epoch's log record and may return True to end
    the current stage early.  With ``out_dir`` the best checkpoint and a
    JSON-lines log are written there.
    """
    t = settings.train
    _check_catalog(settings, catalog)
    dev = settings.deviations()
    if dev:
        log.info("training with settings that differ from the full-scale profile: %s", dev)
    pool = settings.model.time_pool
    model = model or build_model(t.model, settings.model, t.seed)
    train_clips = {s: load_clips(catalog.select(s, "train"), settings.features, t.rotation, pool)
                   for s in ("synthetic", "real")}
    val_clips = load_clips(_validation_entries(settings, catalog), settings.features, False, pool)
    stage1 = [c for s in plan_stages(settings)[0].scenes for c in train_clips[s]]
    mean, std = feature_stats(stage1)
    model.set_feature_stats(mean, std)
    aug = AugmentConfig(rotation=t.rotation, cutout=t.cutout, mixup=t.mixup, fmix=t.fmix,
                        mixup_alpha=t.mixup_alpha, fmix_decay=t.fmix_decay, spec_augment=t.spec_augment)

    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "w")
    result = TrainResult(model)
    best_state, best = None, {"seld": np.inf}
    try:
        for plan in plan_stages(settings):
            chunks = make_chunks([c for s in plan.scenes for c in train_clips[s]], t.chunk_label_frames,
                                 settings.model.n_classes, settings.model.n_tracks, pool)
            if plan.stage > 1:
                model.load_state_dict(best_state)
                _reset_optimizer_state(model)
            opt = Adam(model.parameters(), lr=plan.lr)
            for epoch in range(1, plan.epochs + 1):
                rec = _run_epoch(model, opt, chunks, t.batch_size, aug,
                                 np.random.default_rng([t.seed, plan.stage, epoch]))
                report = validate(model, val_clips, t.chunk_label_frames,
                                  settings.infer.activity_threshold, settings.infer.merge_angle)
                rec.update({"stage": plan.stage, "epoch": epoch, "lr": opt.lr, **report.row()})
                result.history.append(rec)
                if log_fh:
                    log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                if report.seld_score < best["seld"]:
                    best = {"seld": report.seld_score, "stage": plan.stage, "epoch": epoch}
                    best_state = {k: v.copy() for k, v in model.state_dict().items()}
                    result.report = report
                if on_epoch is not None and on_epoch(rec):
                    break
    finally:
        if log_fh:
            log_fh.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    result.best = best
    if out is not None:
        result.log_path = out / "train_log.jsonl"
        result.checkpoint = out / "best.ck"
        save_model(result.checkpoint, model, {"best": best, "settings_hash": settings.hash(),
                                              "seed": t.seed, "strategy": t.strategy})
        if result.report is not None:
            result.report.write_json(out / "report.json")
            result.report.write_class_csv(out / "report.classes.csv")
    return result


def _run_epoch(model: SeldModel, opt: Adam, chunks: Sequence[Chunk], batch_size: int,
               aug: AugmentConfig, rng: np.random.Generator) -> dict:
    model.train()
    losses, scenes = [], []
    dt = model.parameters()[0].dtype
    for idx in mixed_batches(chunks, batch_size, rng):
        feats = np.stack([chunks[i].features for i in idx])
        cand = np.stack([chunks[i].candidates for i in idx])
        feats, cand = augment_batch(feats, cand, aug, rng)
        opt.zero_grad()
        loss = adpit_loss(model(Tensor(feats.astype(dt))), cand.astype(dt))
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
        scenes.append(sorted({chunks[i].scene for i in idx}))
    return {"train_loss": float(np.mean(losses)), "batch_losses": losses, "batch_scenes": scenes}

