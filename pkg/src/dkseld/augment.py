"""Data extension (channel rotation, SRIR synthesis) and training-time augmentation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .audio_io import LABEL_HOP_S, EventAnnotation, MultichannelClip, read_wav, wrap_azimuth, write_wav
from .errors import DimensionError, SchedulingError, ValidationError

# --- channel rotation ----------------------------------------------------------------


@dataclass(frozen=True)
class RotationRow:
    """phi' = az_sign * phi + az_shift, theta' = el_sign * theta; new channel i = old channel perm[i]."""

    az_sign: int
    az_shift: float
    el_sign: int
    perm: tuple[int, int, int, int]

    def map_doa(self, az: float, el: float) -> tuple[float, float]:
        return wrap_azimuth(self.az_sign * az + self.az_shift), self.el_sign * el + 0.0

    def inverse_doa(self, az: float, el: float) -> tuple[float, float]:
        return wrap_azimuth(self.az_sign * (az - self.az_shift)), self.el_sign * el + 0.0

    def matrix(self) -> np.ndarray:
        """3x3 signed permutation acting on Cartesian DOA vectors."""
        k = np.deg2rad(self.az_shift)
        rz = np.rint(np.array([[np.cos(k), -np.sin(k), 0.0],
                               [np.sin(k), np.cos(k), 0.0],
                               [0.0, 0.0, 1.0]]))
        return rz @ np.diag([1.0, float(self.az_sign), float(self.el_sign)])


# Rows in table order; channels are 0-based here (C1 -> 0).
ROTATIONS: tuple[RotationRow, ...] = (
    RotationRow(+1, -90.0, -1, (2, 0, 3, 1)),
    RotationRow(-1, -90.0, +1, (3, 1, 2, 0)),
    RotationRow(+1, 0.0, +1, (0, 1, 2, 3)),
    RotationRow(-1, 0.0, -1, (1, 0, 3, 2)),
    RotationRow(+1, 90.0, -1, (1, 3, 0, 2)),
    RotationRow(-1, 90.0, +1, (0, 2, 1, 3)),
    RotationRow(+1, 180.0, +1, (3, 2, 1, 0)),
    RotationRow(-1, 180.0, -1, (2, 3, 0, 1)),
)
IDENTITY_ROTATION = 2


def _row(rotation_id: int) -> RotationRow:
    if not 0 <= rotation_id < len(ROTATIONS):
        raise ValidationError(f"rotation id {rotation_id} outside [0, {len(ROTATIONS)})")
    return ROTATIONS[rotation_id]


def rotate_vectors(vectors: np.ndarray, rotation_id: int, inverse: bool = False) -> np.ndarray:
    """Apply a row's DOA map (or its inverse) to (..., 3) Cartesian vectors.

    The maps are signed coordinate permutations, so this is exact.
    """
    m = _row(rotation_id).matrix()
    if inverse:
        m = m.T
    out = np.zeros_like(vectors)
    for i in range(3):
        j = int(np.nonzero(m[i])[0][0])
        out[..., i] = vectors[..., j] if m[i, j] > 0 else -vectors[..., j]
    return out


def channel_rotate(clip: MultichannelClip, events: Sequence[EventAnnotation],
                   rotation_id: int) -> tuple[MultichannelClip, list[EventAnnotation]]:
    row = _row(rotation_id)
    if clip.channel_count != 4:
        raise DimensionError(f"channel rotation needs 4 channels, got {clip.channel_count}")
    new_clip = MultichannelClip(clip.samples[list(row.perm)].copy(), clip.sample_rate)
    new_events = []
    for e in events:
        az, el = row.map_doa(e.azimuth_deg, e.elevation_deg)
        new_events.append(EventAnnotation(e.frame, e.class_id, e.source_id, az, el))
    return new_clip, new_events


# --- array geometry and free-field responses --------------------------------------------

# Tetrahedral 4-mic array (azimuth, elevation in degrees; radius in metres).
MIC_DIRECTIONS = ((45.0, 35.0), (-45.0, -35.0), (135.0, -35.0), (-135.0, 35.0))
MIC_RADIUS = 0.042


def mic_positions(radius: float = MIC_RADIUS) -> np.ndarray:
    from .accdoa import doa_to_cartesian
    return radius * np.array([doa_to_cartesian(a, e) for a, e in MIC_DIRECTIONS])


def plane_wave_srir(azimuth: float, elevation: float, sample_rate: int = 24000,
                    length: int = 64, base_delay: float = 24.0, sound_speed: float = 343.0,
                    taps: int = 16) -> np.ndarray:
    """4 x ``length`` free-field response of the tetrahedral array to a far source.

    Each channel is a Hann-windowed sinc fractional delay at
    ``base_delay`` plus that mic's arrival offset relative to the array centre.
    """
    from .accdoa import doa_to_cartesian
    u = doa_to_cartesian(azimuth, elevation)
    offsets = -(mic_positions() @ u) / sound_speed * sample_rate
    n = np.arange(length)
    out = np.zeros((4, length))
    for m, off in enumerate(offsets):
        d = base_delay + off
        k = n - d
        win = np.where(np.abs(k) <= taps, 0.5 * (1.0 + np.cos(np.pi * k / (taps + 1))), 0.0)
        out[m] = np.sinc(k) * win
    return out


@dataclass
class SrirEntry:
    room: str
    azimuth: float
    elevation: float
    distance: float
    response: np.ndarray  # 4 x L_ir


@dataclass
class SrirSet:
    entries: list[SrirEntry]
    sample_rate: int = 24000
    noise: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for e in self.entries:
            if e.response.ndim != 2 or e.response.shape[0] != 4:
                raise DimensionError(f"SRIR responses must be 4 x L, got {e.response.shape}")
        for room, n in self.noise.items():
            if n.ndim != 2 or n.shape[0] != 4:
                raise DimensionError(f"ambient noise for {room} must be 4 x L")

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {"sample_rate": self.sample_rate, "responses": [], "noise": []}
        for i, e in enumerate(self.entries):
            name = f"srir_{i:04d}.wav"
            write_wav(d / name, MultichannelClip(e.response, self.sample_rate), bits=-32)
            manifest["responses"].append({"file": name, "room": e.room, "azimuth": e.azimuth,
                                          "elevation": e.elevation, "distance": e.distance})
        for room, n in self.noise.items():
            name = f"noise_{room}.wav"
            write_wav(d / name, MultichannelClip(n, self.sample_rate), bits=-32)
            manifest["noise"].append({"file": name, "room": room})
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "SrirSet":
        """Directory of 4-channel WAV responses plus ``manifest.json``."""
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        rate = int(manifest.get("sample_rate", 24000))
        entries = []
        for rec in manifest["responses"]:
            clip = read_wav(d / rec["file"])
            if clip.sample_rate != rate:
                raise ValidationError(f"{rec['file']}: {clip.sample_rate} Hz, manifest says {rate}")
            entries.append(SrirEntry(rec.get("room", "room0"), float(rec["azimuth"]),
                                     float(rec["elevation"]), float(rec.get("distance", 1.0)),
                                     clip.samples))
        noise = {rec["room"]: read_wav(d / rec["file"]).samples for rec in manifest.get("noise", [])}
        return cls(entries, rate, noise)


def free_field_srir_set(positions: Sequence[tuple[float, float]], sample_rate: int = 24000,
                        room: str = "anechoic") -> SrirSet:
    return SrirSet([SrirEntry(room, az, el, 1.0, plane_wave_srir(az, el, sample_rate))
                    for az, el in positions], sample_rate)


# --- spatial synthesis ------------------------------------------------------------------------

@dataclass
class MonoEvent:
    samples: np.ndarray
    class_id: int
    onset_s: float
    srir_index: int


def event_frames(onset_s: float, n_samples: int, sample_rate: int, n_frames: int) -> range:
    first = int(np.floor(onset_s / LABEL_HOP_S + 1e-9))
    end = int(np.ceil((onset_s + n_samples / sample_rate) / LABEL_HOP_S - 1e-9))
    return range(max(first, 0), min(end, n_frames))


def spatial_synthesize(events: Sequence[MonoEvent], srir: SrirSet, duration_s: float,
                       noise_snr_db: float | None = None, rng: np.random.Generator | None = None,
                       room: str | None = None, max_polyphony: int = 3
                       ) -> tuple[MultichannelClip, list[EventAnnotation]]:
    """Convolve mono events with their SRIRs, sum at their onsets, add ambient noise.

    Labels are emitted at 100 ms frames for every frame an event overlaps,
    with ``source_id`` equal to the event's index.
    """
    rate = srir.sample_rate
    n = int(round(duration_s * rate))
    n_frames = int(round(duration_s / LABEL_HOP_S))
    load = np.zeros(n_frames, dtype=int)
    spans = []
    for ev in events:
        span = event_frames(ev.onset_s, len(ev.samples), rate, n_frames)
        load[list(span)] += 1
        spans.append(span)
    if np.any(load > max_polyphony):
        bad = int(np.argmax(load > max_polyphony))
        raise SchedulingError(f"{int(load[bad])} overlapping events at frame {bad} (max {max_polyphony})")

    mix = np.zeros((4, n))
    labels = []
    for idx, (ev, span) in enumerate(zip(events, spans)):
        entry = srir.entries[ev.srir_index]
        wet = fftconvolve(np.asarray(ev.samples, dtype=np.float64)[None, :], entry.response, axes=1)
        start = int(round(ev.onset_s * rate))
        stop = min(n, start + wet.shape[1])
        if stop > start:
            mix[:, start:stop] += wet[:, :stop - start]
        az, el = wrap_azimuth(entry.azimuth), float(entry.elevation)
        labels.extend(EventAnnotation(f, ev.class_id, idx, az, el) for f in span)

    if noise_snr_db is not None:
        rng = rng or np.random.default_rng()
        noise = _ambient(srir, room or (srir.entries[events[0].srir_index].room if events else None), n, rng)
        p_sig = float(np.mean(mix ** 2))
        p_noise = float(np.mean(noise ** 2))
        if p_sig > 0 and p_noise > 0:
            noise *= np.sqrt(p_sig / (p_noise * 10.0 ** (noise_snr_db / 10.0)))
            mix = mix + noise
    labels.sort(key=lambda e: (e.frame, e.class_id, e.source_id))
    return MultichannelClip(mix, rate), labels


def _ambient(srir: SrirSet, room: str | None, n: int, rng: np.random.Generator) -> np.ndarray:
    src = srir.noise.get(room) if room is not None else None
    if src is None:
        return rng.standard_normal((4, n))
    reps = int(np.ceil((n + src.shape[1]) / src.shape[1]))
    tiled = np.tile(src, (1, reps))
    start = int(rng.integers(0, src.shape[1]))
    return tiled[:, start:start + n].copy()


# --- mixing and masking ----------------------------------------------------------------------

def sample_mixup_lambda(rng: np.random.Generator, alpha: float = 0.2, size=None):
    return rng.beta(alpha, alpha, size=size)


def mixup(feat_a: np.ndarray, target_a: np.ndarray, feat_b: np.ndarray, target_b: np.ndarray,
          lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Convex mix of features and of ACCDOA target vectors with the same weight."""
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"mixup weight {lam} outside [0, 1]")
    if feat_a.shape != feat_b.shape or target_a.shape != target_b.shape:
        raise DimensionError("mixup operands must have matching shapes")
    if lam == 1.0:
        return feat_a.copy(), target_a.copy()
    return lam * feat_a + (1.0 - lam) * feat_b, lam * target_a + (1.0 - lam) * target_b


def fmix_mask(shape: tuple[int, int], lam: float, rng: np.random.Generator,
              decay: float = 3.0) -> np.ndarray:
    """Binary T x F mask from thresholded low-pass noise; mean = round(lam*T*F)/(T*F)."""
    t, f = shape
    ft = np.fft.fftfreq(t)[:, None]
    ff = np.fft.fftfreq(f)[None, :]
    radius = np.sqrt(ft ** 2 + ff ** 2)
    scale = 1.0 / np.maximum(radius, 1.0 / max(t, f)) ** decay
    spectrum = (rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f))) * scale
    gray = np.real(np.fft.ifft2(spectrum))
    k = int(round(lam * t * f))
    mask = np.zeros(t * f)
    if k > 0:
        order = np.argsort(-gray.reshape(-1), kind="stable")
        mask[order[:k]] = 1.0
    return mask.reshape(t, f)


def fmix(feat_a: np.ndarray, target_a: np.ndarray, feat_b: np.ndarray, target_b: np.ndarray,
         lam: float, rng: np.random.Generator, decay: float = 3.0):
    """Blob-masked mix; targets are mixed by the realised mask mean.

    Returns (features, targets, mask).
    """
    if feat_a.shape != feat_b.shape or target_a.shape != target_b.shape:
        raise DimensionError("fmix operands must have matching shapes")
    mask = fmix_mask(feat_a.shape[-2:], lam, rng, decay)
    w = float(mask.mean())
    return mask * feat_a + (1.0 - mask) * feat_b, w * target_a + (1.0 - w) * target_b, mask


def cutout_mask(shape: tuple[int, int], rng: np.random.Generator, fraction: float = 0.25) -> np.ndarray:
    """T x F boolean mask with one rectangle covering ``fraction`` of the cells (within one cell)."""
    t, f = shape
    area = fraction * t * f
    options = []
    for h in range(1, t + 1):
        w = int(round(area / h))
        if 1 <= w <= f and abs(h * w - area) <= 1.0:
            options.append((h, w))
    h, w = options[int(rng.integers(len(options)))]
    t0 = int(rng.integers(0, t - h + 1))
    f0 = int(rng.integers(0, f - w + 1))
    mask = np.zeros((t, f), dtype=bool)
    mask[t0:t0 + h, f0:f0 + w] = True
    return mask


def random_cutout(feat: np.ndarray, rng: np.random.Generator, fraction: float = 0.25) -> np.ndarray:
    """Zero the same random quarter-area rectangle on every channel."""
    if feat.shape[-2] < 2 or feat.shape[-1] < 2:
        raise DimensionError("cutout needs at least 2 x 2 time-frequency cells")
    out = feat.copy()
    out[..., cutout_mask(feat.shape[-2:], rng, fraction)] = 0.0
    return out


def spec_augment(feat: np.ndarray, time_masks: Sequence[int], freq_masks: Sequence[int],
                 rng: np.random.Generator) -> np.ndarray:
    """Zero one time stripe per entry of ``time_masks`` and one frequency stripe per ``freq_masks``."""
    t, f = feat.shape[-2:]
    out = feat.copy()
    for w in time_masks:
        if not 0 <= w < t:
            raise ValidationError(f"time mask width {w} must be < {t}")
        s = int(rng.integers(0, t - w + 1))
        out[..., s:s + w, :] = 0.0
    for w in freq_masks:
        if not 0 <= w < f:
            raise ValidationError(f"frequency mask width {w} must be < {f}")
        s = int(rng.integers(0, f - w + 1))
        out[..., :, s:s + w] = 0.0
    return out


@dataclass
class AugmentConfig:
    rotation: bool = False      # 8x channel-rotation data extension
    cutout: float = 0.0         # probability per sample
    mixup: float = 0.0          # probability per sample
    fmix: float = 0.0           # probability per sample
    mixup_alpha: float = 0.2
    fmix_decay: float = 3.0
    spec_augment: bool = False  # off: hurts localisation
    spec_time_masks: tuple = (10,)
    spec_freq_masks: tuple = (8,)


def augment_batch(feats: np.ndarray, candidates: np.ndarray, cfg: AugmentConfig,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Apply the enabled per-sample augmentations to a training batch."""
    feats = feats.copy()
    candidates = candidates.copy()
    b = feats.shape[0]
    for i in range(b):
        j = int(rng.integers(b))
        if cfg.mixup and rng.random() < cfg.mixup:
            lam = float(sample_mixup_lambda(rng, cfg.mixup_alpha))
            feats[i], candidates[i] = mixup(feats[i], candidates[i], feats[j], candidates[j], lam)
        elif cfg.fmix and rng.random() < cfg.fmix:
            lam = float(sample_mixup_lambda(rng, cfg.mixup_alpha))
            feats[i], candidates[i], _ = fmix(feats[i], candidates[i], feats[j], candidates[j],
                                              lam, rng, cfg.fmix_decay)
        if cfg.cutout and rng.random() < cfg.cutout:
            feats[i] = random_cutout(feats[i], rng)
        if cfg.spec_augment:
            feats[i] = spec_augment(feats[i], cfg.spec_time_masks, cfg.spec_freq_masks, rng)
    return feats, candidates
