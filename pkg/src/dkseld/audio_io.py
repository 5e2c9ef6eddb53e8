"""Multichannel WAV and DCASE metadata I/O, plus the dataset catalog."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.io.wavfile

from .errors import FormatError, UnsupportedFormatError, ValidationError

NUM_CLASSES = 13
LABEL_HOP_S = 0.1
SCENES = ("synthetic", "real")
SPLITS = ("train", "validation", "test")

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


@dataclass
class MultichannelClip:
    """M x L float samples in [-1, 1] at ``sample_rate`` Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate <= 0:
            raise ValidationError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass(frozen=True)
class EventAnnotation:
    frame: int
    class_id: int
    source_id: int
    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self):
        if self.frame < 0:
            raise ValidationError(f"frame must be non-negative, got {self.frame}")
        if not 0 <= self.class_id < NUM_CLASSES:
            raise ValidationError(f"class {self.class_id} outside [0, {NUM_CLASSES - 1}]")
        if self.source_id < 0:
            raise ValidationError(f"source id must be non-negative, got {self.source_id}")
        if not -180.0 <= self.azimuth_deg < 180.0:
            raise ValidationError(f"azimuth {self.azimuth_deg} outside [-180, 180)")
        if not -90.0 <= self.elevation_deg <= 90.0:
            raise ValidationError(f"elevation {self.elevation_deg} outside [-90, 90]")


def wrap_azimuth(az: float) -> float:
    """Map degrees onto [-180, 180)."""
    return ((az + 180.0) % 360.0) - 180.0


# WAV --------------------------------------------------------------------------

def read_wav(path) -> MultichannelClip:
    """Read a RIFF/WAVE file holding 16/24/32-bit PCM or 32-bit float samples."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise FormatError(f"{path}: short fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _EXTENSIBLE:
                if len(body) < 40:
                    raise FormatError(f"{path}: short extensible fmt chunk")
                (sub,) = struct.unpack("<H", body[24:26])
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if len(body) < size:
                raise FormatError(f"{path}: data chunk truncated ({len(body)} of {size} bytes)")
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise FormatError(f"{path}: no fmt chunk")
    if data is None:
        raise FormatError(f"{path}: no data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate <= 0:
        raise FormatError(f"{path}: invalid channel count or sample rate")
    if tag == _PCM and bits in (16, 32):
        dtype = "<i2" if bits == 16 else "<i4"
        samples = np.frombuffer(data, dtype=dtype).astype(np.float64) / float(2 ** (bits - 1))
    elif tag == _PCM and bits == 24:
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = (b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16))
        ints = np.where(ints >= 2 ** 23, ints - 2 ** 24, ints)
        samples = ints.astype(np.float64) / float(2 ** 23)
    elif tag == _IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{path}: format tag {tag} with {bits}-bit samples")
    if samples.size % channels:
        raise FormatError(f"{path}: sample count not a multiple of {channels} channels")
    return MultichannelClip(samples.reshape(-1, channels).T.copy(), rate)


def write_wav(path, clip: MultichannelClip, bits: int = 16) -> None:
    """Write PCM16, PCM32 or (``bits=-32``) float32."""
    x = clip.samples.T
    if bits == 16:
        out = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif bits == 32:
        out = np.clip(np.round(x * 2.0 ** 31), -2 ** 31, 2 ** 31 - 1).astype(np.int32)
    elif bits == -32:
        out = x.astype(np.float32)
    else:
        raise UnsupportedFormatError(f"cannot write {bits}-bit WAV")
    scipy.io.wavfile.write(str(path), int(clip.sample_rate), out)


# metadata CSV -----------------------------------------------------------------

def _num(text: str) -> float:
    return float(text.strip())


def parse_metadata_csv(path, num_classes: int = NUM_CLASSES) -> list[EventAnnotation]:
    """Parse ``frame,class,source,azimuth,elevation`` rows (no header)."""
    events = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 5:
                raise ValidationError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                frame, cls, src = (int(round(_num(c))) for c in row[:3])
                az, el = _num(row[3]), _num(row[4])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if az == 180.0:
                az = -180.0
            if cls >= num_classes:
                raise ValidationError(f"{path}:{lineno}: class {cls} >= {num_classes}")
            try:
                events.append(EventAnnotation(frame, cls, src, az, el))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return events


def _fmt_angle(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def write_metadata_csv(events: Iterable[EventAnnotation], path) -> None:
    with open(path, "w", newline="") as fh:
        for e in events:
            fh.write(f"{e.frame},{e.class_id},{e.source_id},"
                     f"{_fmt_angle(e.azimuth_deg)},{_fmt_angle(e.elevation_deg)}\n")


def events_by_frame(events: Iterable[EventAnnotation]) -> dict[int, list[EventAnnotation]]:
    out: dict[int, list[EventAnnotation]] = {}
    for e in events:
        out.setdefault(e.frame, []).append(e)
    return out


# catalog ------------------------------------------------------------------------

@dataclass(frozen=True)
class CatalogEntry:
    audio: Path
    metadata: Path
    scene: str
    split: str


@dataclass(frozen=True)
class DatasetCatalog:
    entries: tuple[CatalogEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        seen: dict[Path, str] = {}
        for e in self.entries:
            if e.scene not in SCENES:
                raise ValidationError(f"{e.audio}: scene {e.scene!r} not in {SCENES}")
            if e.split not in SPLITS:
                raise ValidationError(f"{e.audio}: split {e.split!r} not in {SPLITS}")
            for p in (e.audio, e.metadata):
                if not Path(p).exists():
                    raise ValidationError(f"catalog entry file missing: {p}")
            if e.audio in seen and seen[e.audio] != e.scene:
                raise ValidationError(f"{e.audio}: tagged both {seen[e.audio]} and {e.scene}")
            seen[e.audio] = e.scene

    def select(self, scene: str | None = None, split: str | None = None) -> list[CatalogEntry]:
        return [e for e in self.entries
                if (scene is None or e.scene == scene) and (split is None or e.split == split)]

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_entries(cls, rows: Sequence[tuple]) -> "DatasetCatalog":
        return cls(tuple(CatalogEntry(Path(a), Path(m), s, sp) for a, m, s, sp in rows))

    @classmethod
    def load(cls, path) -> "DatasetCatalog":
        """Read ``audio,metadata,scene,split`` rows; relative paths resolve against the file."""
        base = Path(path).parent
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0] == "audio":
                    continue
                a, m, s, sp = (c.strip() for c in row[:4])
                rows.append((base / a, base / m, s, sp))
        return cls.from_entries(rows)

    def save(self, path) -> None:
        base = Path(path).parent.resolve()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["audio", "metadata", "scene", "split"])
            for e in self.entries:
                w.writerow([_rel(e.audio, base), _rel(e.metadata, base), e.scene, e.split])


def _rel(p: Path, base: Path) -> str:
    try:
        return str(Path(p).resolve().relative_to(base))
    except ValueError:
        return str(Path(p).resolve())
