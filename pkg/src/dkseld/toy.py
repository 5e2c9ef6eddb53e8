"""Small synthetic SELD corpus: static sources spatialized with free-field responses."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .audio_io import DatasetCatalog, write_metadata_csv, write_wav
from .augment import MonoEvent, SrirSet, free_field_srir_set, spatial_synthesize


def tone_source(n: int, rate: int, rng: np.random.Generator, f0: float = 440.0) -> np.ndarray:
    """Harmonic complex with a soft attack and release."""
    t = np.arange(n) / rate
    sig = sum(np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi)) / h for h in range(1, 6))
    return 0.3 * sig * _envelope(n, rate)


def noise_source(n: int, rate: int, rng: np.random.Generator, band=(2000.0, 5000.0)) -> np.ndarray:
    """Band-limited noise burst."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < band[0]) | (f > band[1])] = 0.0
    sig = np.fft.irfft(spec, n)
    return 0.3 * sig / (np.std(sig) + 1e-12) * _envelope(n, rate)


def _envelope(n: int, rate: int, ramp_s: float = 0.02) -> np.ndarray:
    r = min(int(ramp_s * rate), n // 2)
    env = np.ones(n)
    if r:
        env[:r] = np.linspace(0.0, 1.0, r)
        env[-r:] = np.linspace(1.0, 0.0, r)
    return env


SOURCES = (tone_source, noise_source)


def make_toy_dataset(out_dir, n_clips: int = 16, n_classes: int = 2, duration_s: float = 2.0,
                     seed: int = 0, snr_db: float = 20.0, max_events: int = 2,
                     srir: SrirSet | None = None, split: str = "train",
                     scene: str = "synthetic", prefix: str = "toy") -> DatasetCatalog:
    """Write ``n_clips`` 4-channel clips with label CSVs, a catalog and a synthesis manifest.

    Each clip holds 1..``max_events`` events of distinct classes at static,
    distinct directions.  Without ``srir`` a free-field response is made per
    event direction.
    """
    if n_classes > len(SOURCES):
        raise ValueError(f"toy sources exist for {len(SOURCES)} classes")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rate = 24000
    rows, manifest = [], []
    for i in range(n_clips):
        k = int(rng.integers(1, min(max_events, n_classes) + 1))
        classes = rng.permutation(n_classes)[:k]
        positions = _distinct_directions(rng, k)
        if srir is None:
            clip_srir = free_field_srir_set(positions, rate)
            idx = list(range(k))
        else:
            clip_srir = srir
            idx = [int(rng.integers(len(srir.entries))) for _ in range(k)]
        events, records = [], []
        for j, c in enumerate(classes):
            dur = float(rng.uniform(0.5, 0.75) * duration_s)
            onset = float(np.round(rng.uniform(0.0, duration_s - dur), 1))
            mono = SOURCES[c](int(dur * rate), rate, rng)
            events.append(MonoEvent(mono, int(c), onset, idx[j]))
            e = clip_srir.entries[idx[j]]
            records.append({"class": int(c), "onset_s": onset, "duration_s": dur,
                            "azimuth": e.azimuth, "elevation": e.elevation})
        clip, labels = spatial_synthesize(events, clip_srir, duration_s, snr_db, rng)
        wav, csv_path = out / f"{prefix}_{i:03d}.wav", out / f"{prefix}_{i:03d}.csv"
        write_wav(wav, clip, bits=-32)
        write_metadata_csv(labels, csv_path)
        rows.append((wav, csv_path, scene, split))
        manifest.append({"audio": wav.name, "snr_db": snr_db, "events": records})
    catalog = DatasetCatalog.from_entries(rows)
    catalog.save(out / "catalog.csv")
    (out / "synthesis_manifest.json").write_text(json.dumps(
        {"seed": seed, "duration_s": duration_s, "sample_rate": rate, "mixtures": manifest}, indent=2))
    return catalog


def _distinct_directions(rng: np.random.Generator, k: int, min_sep: float = 60.0) -> list:
    out = []
    while len(out) < k:
        az = float(rng.integers(-18, 18) * 10)
        el = float(rng.integers(-4, 5) * 10)
        if all(abs(((az - a) + 180) % 360 - 180) >= min_sep for a, _ in out):
            out.append((az, el))
    return out
