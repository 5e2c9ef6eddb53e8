"""Multi-track ACCDOA targets, the ADPIT loss, and prediction decoding.

Array layout per label frame is tracks x classes x xyz (N x C x 3).  ADPIT
candidates are stored per frame and class as C x P x N x 3, where P is the
largest number of admissible track assignments (6 for N=3); unused slots
repeat the first candidate so they never change the minimum.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .audio_io import EventAnnotation, wrap_azimuth
from .autodiff.tensor import Tensor
from .errors import DimensionError, UndefinedDirectionError, ValidationError

log = logging.getLogger(__name__)

N_TRACKS = 3


def doa_to_cartesian(azimuth_deg, elevation_deg) -> np.ndarray:
    """Unit vector(s) (x, y, z) for azimuth/elevation in degrees; shape (..., 3)."""
    phi = np.deg2rad(np.asarray(azimuth_deg, dtype=np.float64))
    theta = np.deg2rad(np.asarray(elevation_deg, dtype=np.float64))
    return np.stack([np.cos(phi) * np.cos(theta), np.sin(phi) * np.cos(theta), np.sin(theta)], axis=-1)


def cartesian_to_doa(v) -> tuple[float, float]:
    """(azimuth, elevation) in degrees of a non-zero vector; azimuth is 0 at the poles."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not np.isfinite(norm):
        raise UndefinedDirectionError("direction of a zero vector is undefined")
    x, y, z = v / norm
    el = float(np.degrees(np.arcsin(np.clip(z, -1.0, 1.0))))
    if np.hypot(x, y) <= 1e-15:
        return 0.0, el
    az = wrap_azimuth(float(np.degrees(np.arctan2(y, x))))
    return az, el


@lru_cache(maxsize=None)
def track_assignments(k: int, n_tracks: int = N_TRACKS) -> tuple[tuple[int, ...], ...]:
    """All surjections of ``k`` events onto ``n_tracks`` tracks.

    Each assignment lists, per track, the index of the event it carries.
    k=0 yields a single empty assignment (all tracks silent).
    """
    if k == 0:
        return ((),)
    if k > n_tracks:
        raise ValidationError(f"{k} events cannot share {n_tracks} tracks")
    return tuple(a for a in itertools.product(range(k), repeat=n_tracks) if len(set(a)) == k)


def max_candidates(n_tracks: int = N_TRACKS) -> int:
    return max(len(track_assignments(k, n_tracks)) for k in range(n_tracks + 1))


@dataclass
class AdpitTargets:
    """Targets for one clip.

    ``targets``: T x N x C x 3, the first admissible assignment (used for
    display and decoding round-trips).  ``candidates``: T x C x P x N x 3.
    ``counts``: T x C number of active events.  ``assignments[t][c]`` lists
    the admissible track assignments for that frame and class.
    """

    targets: np.ndarray
    candidates: np.ndarray
    counts: np.ndarray
    assignments: list

    @property
    def n_frames(self) -> int:
        return self.targets.shape[0]


def encode_adpit_targets(events: Iterable[EventAnnotation], n_frames: int,
                         n_classes: int = 13, n_tracks: int = N_TRACKS) -> AdpitTargets:
    """Duplicate each class's active DOAs over all tracks and enumerate assignments."""
    per: dict[tuple[int, int], list[EventAnnotation]] = {}
    for e in events:
        if e.frame >= n_frames:
            continue
        if e.class_id >= n_classes:
            raise ValidationError(f"class {e.class_id} >= {n_classes}")
        per.setdefault((e.frame, e.class_id), []).append(e)

    p_max = max_candidates(n_tracks)
    targets = np.zeros((n_frames, n_tracks, n_classes, 3))
    candidates = np.zeros((n_frames, n_classes, p_max, n_tracks, 3))
    counts = np.zeros((n_frames, n_classes), dtype=np.int64)
    assignments = [[track_assignments(0, n_tracks)] * n_classes for _ in range(n_frames)]
    for (t, c), evs in per.items():
        evs = sorted(evs, key=lambda e: e.source_id)
        if len(evs) > n_tracks:
            log.warning("frame %d class %d: %d events, keeping %d lowest source ids",
                        t, c, len(evs), n_tracks)
            evs = evs[:n_tracks]
        vecs = doa_to_cartesian([e.azimuth_deg for e in evs], [e.elevation_deg for e in evs])
        assigns = track_assignments(len(evs), n_tracks)
        for p in range(p_max):
            a = assigns[p] if p < len(assigns) else assigns[0]
            candidates[t, c, p] = vecs[list(a)]
        targets[t, :, c] = vecs[list(assigns[0])]
        counts[t, c] = len(evs)
        assignments[t][c] = assigns
    return AdpitTargets(targets, candidates, counts, assignments)


def _frame_losses(pred: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Per (..., class, candidate) loss: mean over tracks and xyz of squared error."""
    p = np.swapaxes(pred, -3, -2)[..., :, None, :, :]  # ... x C x 1 x N x 3
    return ((candidates - p) ** 2).mean(axis=(-1, -2))


def adpit_loss_value(pred: np.ndarray, candidates: np.ndarray) -> float:
    """ADPIT loss for arrays: pred (..., T, N, C, 3), candidates (..., T, C, P, N, 3)."""
    if pred.shape[:-3] != candidates.shape[:-4] or pred.shape[-3] != candidates.shape[-2] \
            or pred.shape[-2] != candidates.shape[-4]:
        raise DimensionError(f"prediction {pred.shape} does not match candidates {candidates.shape}")
    return float(_frame_losses(pred, candidates).min(axis=-1).mean())


def adpit_loss(pred: Tensor, candidates: np.ndarray) -> Tensor:
    """Differentiable ADPIT loss; the gradient flows through the best assignment."""
    pd = pred.data
    if pd.shape[:-3] != candidates.shape[:-4] or pd.shape[-3] != candidates.shape[-2] \
            or pd.shape[-2] != candidates.shape[-4]:
        raise DimensionError(f"prediction {pd.shape} does not match candidates {candidates.shape}")
    losses = _frame_losses(pd, candidates)
    best = losses.argmin(axis=-1)
    value = losses.min(axis=-1).mean()
    chosen = np.take_along_axis(candidates, best[..., None, None, None], axis=-3)[..., 0, :, :]
    chosen = np.swapaxes(chosen, -3, -2)  # back to ... x N x C x 3
    n_units = losses[..., 0].size  # frames x classes (x batch)
    per_unit = pd.shape[-3] * 3

    def backward(g):
        return (g * 2.0 * (pd - chosen) / (n_units * per_unit),)

    return Tensor.from_op(np.asarray(value, dtype=pd.dtype), (pred,), backward)


# decoding -----------------------------------------------------------------------------

def angle_between(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise UndefinedDirectionError("angle with a zero vector is undefined")
    return float(np.degrees(np.arccos(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))))


def _set_partitions(items: list[int]):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def _merge_groups(vecs: Sequence[np.ndarray], merge_angle: float) -> list[list[int]]:
    """Fewest groups in which every pair is closer than ``merge_angle``.

    Ties go to the partition with the smallest summed within-group angle,
    then to the lexicographically smallest listing.
    """
    n = len(vecs)
    ang = np.array([[angle_between(vecs[i], vecs[j]) for j in range(n)] for i in range(n)])
    best = None
    for part in _set_partitions(list(range(n))):
        groups = sorted(sorted(g) for g in part)
        if any(ang[i, j] >= merge_angle for g in groups for i in g for j in g if i < j):
            continue
        spread = sum(ang[i, j] for g in groups for i in g for j in g if i < j)
        key = (len(groups), round(spread, 12), groups)
        if best is None or key < best[0]:
            best = (key, groups)
    return best[1]


def decode_predictions(pred: np.ndarray, activity_threshold: float = 0.4,
                       merge_angle: float = 15.0, frame_offset: int = 0) -> list[EventAnnotation]:
    """Turn T x N x C x 3 ACCDOA output into events.

    A track is active when its vector norm is >= ``activity_threshold``.
    Active same-class tracks in a frame are grouped so that every pair in a
    group is within ``merge_angle`` degrees, using the fewest groups; each
    group's vectors are averaged into one event.  ``source_id`` numbers the
    groups of a (frame, class) in order of their lowest track index.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 4 or pred.shape[-1] != 3:
        raise DimensionError(f"expected T x N x C x 3 prediction, got {pred.shape}")
    norms = np.linalg.norm(pred, axis=-1)
    active = norms >= activity_threshold
    events = []
    for t, c in zip(*np.nonzero(active.any(axis=1))):
        tracks = [n for n in range(pred.shape[1]) if active[t, n, c]]
        vecs = [pred[t, n, c] for n in tracks]
        for sid, group in enumerate(_merge_groups(vecs, merge_angle)):
            mean_vec = np.mean([vecs[i] for i in group], axis=0)
            try:
                az, el = cartesian_to_doa(mean_vec)
            except UndefinedDirectionError:
                continue
            events.append(EventAnnotation(int(t) + frame_offset, int(c), sid, az, el))
    events.sort(key=lambda e: (e.frame, e.class_id, e.source_id))
    return events
