"""The ten acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import functools
import itertools
import time

import numpy as np
import pytest

from dkseld.accdoa import adpit_loss, adpit_loss_value, decode_predictions, encode_adpit_targets
from dkseld.audio_io import EventAnnotation, MultichannelClip
from dkseld.augment import IDENTITY_ROTATION, ROTATIONS, channel_rotate
from dkseld.autodiff import Tensor
from dkseld.config import InferenceConfig, load_settings
from dkseld.features import FeatureConfig, filterbank_for, nipd, nipd_linear, salsa_mel, stft
from dkseld.inference import infer_clip, predict_features
from dkseld.metrics import evaluate_events, optimal_assignment, seld_score
from dkseld.models import ModelConfig, build_model
from dkseld.training import train

import grad_cases
from metric_scenarios import SCENARIOS
from oracles import adpit_brute_force, assignment_brute_force, unit

RESULTS = []


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                line = f"criterion {number:2d} FAIL  {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
                RESULTS.append(line)
                print(line)
                raise
            line = f"criterion {number:2d} PASS  {title} ({time.perf_counter() - t0:.1f} s){'; ' + detail if detail else ''}"
            RESULTS.append(line)
            print(line)
        return run
    return wrap


@criterion(1, "aggregate score arithmetic")
def test_c01_seld_score_arithmetic():
    a = seld_score(0.47, 0.493, 16.9, 0.679)
    b = seld_score(0.61, 0.216, 25.9, 0.481)
    assert abs(a - 0.348) <= 5e-4, a
    assert abs(b - 0.514) <= 5e-4, b
    return f"{a:.4f}, {b:.4f}"


@criterion(2, "finite-difference gradients (fp64, rel err <= 1e-5)")
def test_c02_gradient_fidelity():
    t0 = time.perf_counter()
    worst = {}
    for group, cases, entries in (("ops", grad_cases.operator_cases(), None),
                                  ("blocks", grad_cases.block_cases(), None),
                                  ("models", grad_cases.model_cases(), 8)):
        for name, (fn, inputs) in cases.items():
            worst[f"{group}/{name}"] = grad_cases.check(fn, inputs, max_entries=entries)
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if v > 1e-5}
    assert not bad, bad
    assert elapsed < 300, elapsed
    name = max(worst, key=worst.get)
    return f"{len(worst)} cases, worst {worst[name]:.1e} ({name})"


@criterion(3, "ADPIT loss equals exhaustive oracle")
def test_c03_adpit_oracle():
    rng = np.random.default_rng(3)
    n_inst, worst = 1000, 0.0
    for _ in range(n_inst):
        t_len, c_len = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        frames, events = [], []
        for t in range(t_len):
            row = []
            for c in range(c_len):
                k = int(rng.integers(0, 4))
                vecs = []
                for s in range(k):
                    az, el = float(rng.integers(-180, 180)), float(rng.integers(-90, 91))
                    vecs.append(unit(az, el))
                    events.append(EventAnnotation(t, c, s, az, el))
                row.append(vecs)
            frames.append(row)
        pred = rng.uniform(-1.2, 1.2, (t_len, 3, c_len, 3))
        cand = encode_adpit_targets(events, t_len, c_len, 3).candidates
        oracle = adpit_brute_force(pred, frames)
        worst = max(worst, abs(adpit_loss_value(pred, cand) - oracle),
                    abs(float(adpit_loss(Tensor(pred), cand).data) - oracle))
    assert worst <= 1e-12, worst
    return f"{n_inst} instances, max |diff| {worst:.1e}"


@criterion(4, "rotation table: label round trips and log-Mel plane permutation")
def test_c04_rotation_group():
    rng = np.random.default_rng(4)
    events = [EventAnnotation(f, int(rng.integers(13)), 0, float(rng.integers(-180, 180)),
                              float(rng.integers(-90, 91))) for f in range(200)]
    clip = MultichannelClip(rng.standard_normal((4, 24000)), 24000)
    base = salsa_mel(clip).values[:4]
    worst = 0.0
    for rid, row in enumerate(ROTATIONS):
        rc, rev = channel_rotate(clip, events, rid)
        back = [EventAnnotation(e.frame, e.class_id, e.source_id, *row.inverse_doa(e.azimuth_deg, e.elevation_deg))
                for e in rev]
        assert back == events, rid
        rot = salsa_mel(rc).values[:4]
        worst = max(worst, float(np.abs(rot - base[list(row.perm)]).max()))
    assert worst == 0.0, worst
    return "8 rows, exact"


def _small_angle(u, v):
    # atan2 form stays accurate near zero, where arccos resolves only ~1e-6 deg
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(u, v)), u @ v)))


@criterion(5, "target encode -> perfect prediction -> decode round trip")
def test_c05_codec_round_trip():
    rng = np.random.default_rng(5)
    worst, n_events = 0.0, 0
    for _ in range(300):
        events = []
        for c in range(4):
            dirs = []
            while len(dirs) < int(rng.integers(0, 4)):
                d = (float(rng.uniform(-180, 180)), float(rng.uniform(-80, 80)))
                if all(np.degrees(np.arccos(np.clip(unit(*d) @ unit(*o), -1, 1))) > 20 for o in dirs):
                    dirs.append(d)
            events += [EventAnnotation(0, c, s, az, el) for s, (az, el) in enumerate(dirs)]
        tg = encode_adpit_targets(events, 1, 4, 3)
        got = decode_predictions(tg.targets)
        assert len(got) == len(events)
        for c in range(4):
            ref = [e for e in events if e.class_id == c]
            out = [e for e in got if e.class_id == c]
            for r in ref:
                d = min(_small_angle(unit(r.azimuth_deg, r.elevation_deg),
                                     unit(o.azimuth_deg, o.elevation_deg)) for o in out)
                worst = max(worst, d)
                n_events += 1
    assert worst <= 1e-6, worst
    return f"{n_events} events, max error {worst:.1e} deg"


def _delayed_pair(rng, delay, n):
    src = rng.standard_normal(n)
    f = np.fft.rfftfreq(n)
    return np.stack([src, np.fft.irfft(np.fft.rfft(src) * np.exp(-2j * np.pi * f * delay), n)])


@criterion(6, "NIPD of a plane wave within 5% of c*tau")
def test_c06_nipd_physics():
    rng = np.random.default_rng(6)
    fb = filterbank_for(FeatureConfig())
    worst = 0.0
    for delay in (1.0, 1.5, 2.5, 3.0):
        spec = stft(MultichannelClip(_delayed_pair(rng, delay, 20 * 24000), 24000), pad_end=True)
        expected = 343.0 * delay / 24000
        f_alias = 24000 / (2 * delay)
        freqs = spec.bin_frequencies()
        band = (freqs >= 300) & (freqs < 0.5 * f_alias)
        lin = nipd_linear(spec).mean(axis=1)[0]
        mel = nipd(spec, fb).mean(axis=1)[0]
        inside = [m for m in range(fb.weights.shape[0]) if freqs[fb.weights[m] > 0].max() < 0.5 * f_alias]
        worst = max(worst, float(np.max(np.abs(lin[band] - expected)) / expected),
                    float(np.max(np.abs(mel[inside] - expected)) / expected))
    assert worst <= 0.05, worst
    return f"max relative error {worst:.3f}"


@criterion(7, "metric scenarios and assignment oracle")
def test_c07_metric_oracle():
    for name, clips, n_classes, expected in SCENARIOS:
        r = evaluate_events([c[0] for c in clips], [c[1] for c in clips], n_classes)
        np.testing.assert_allclose((r.er20, r.f20, r.le_cd, r.lr_cd), expected, atol=1e-9, err_msg=name)
    rng = np.random.default_rng(7)
    n_mat = 0
    for r, c in itertools.product(range(1, 5), repeat=2):
        for _ in range(25):
            cost = rng.uniform(0, 180, (r, c))
            got = sum(cost[i, j] for i, j in optimal_assignment(cost))
            assert abs(got - assignment_brute_force(cost)) <= 1e-9
            n_mat += 1
    assert len(SCENARIOS) >= 20
    return f"{len(SCENARIOS)} scenarios, {n_mat} cost matrices"


def _desk(fixed_kernel, seed=0):
    return load_settings(None, "desk", {"train.strategy": "synthetic-only", "train.val_split": "train",
                                        "train.seed": seed, "model.n_classes": 2,
                                        "model.fixed_kernel": fixed_kernel}, env={})


def _epochs_to_target(settings, catalog):
    hit = []

    def stop(rec):
        if rec["F20"] >= 0.9 and rec["LE_CD"] <= 10.0:
            hit.append(rec["epoch"])
            return True
        return False
    res = train(settings, catalog, on_epoch=stop)
    return (hit[0] if hit else None), res.history[-1]


@pytest.mark.slow
@criterion(8, "desk-scale learning on the toy set")
def test_c08_desk_learning(toy_catalog):
    t0 = time.perf_counter()
    dk_epoch, dk_last = _epochs_to_target(_desk(False), toy_catalog)
    dk_time = time.perf_counter() - t0
    assert dk_epoch is not None and dk_epoch <= 200, dk_last
    assert dk_time < 1800, dk_time
    fk_epoch, _ = _epochs_to_target(_desk(True), toy_catalog)
    assert fk_epoch is None or fk_epoch >= dk_epoch, (dk_epoch, fk_epoch)
    return (f"DK reached F20>=0.9, LE<=10 at epoch {dk_epoch} in {dk_time / 60:.1f} min "
            f"(F20 {dk_last['F20']:.3f}, LE {dk_last['LE_CD']:.2f}); fixed kernel: {fk_epoch or '>200'}")


@criterion(9, "bit-identical reruns")
def test_c09_determinism(toy_catalog, tmp_path):
    s = load_settings(None, "desk", {"train.strategy": "synthetic-only", "train.val_split": "train",
                                     "model.n_classes": 2, "train.epochs_stage1": 2}, env={})
    train(s, toy_catalog, out_dir=tmp_path / "a")
    train(s, toy_catalog, out_dir=tmp_path / "b")
    for name in ("train_log.jsonl", "best.ck"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    return "log and checkpoint identical"


@criterion(10, "rotation TTA consistency")
def test_c10_tta(toy_catalog):
    from dkseld.audio_io import read_wav
    model = build_model("seldnet-dk", ModelConfig.reduced(n_classes=2), seed=0)
    clip = read_wav(toy_catalog.entries[0].audio)
    one = dict(chunk_label_frames=20, hop_offsets=(0,), hop_weights=(1.0,))
    plain = predict_features(model, salsa_mel(clip).values, 20)
    ident = infer_clip([model], clip, InferenceConfig(rotation_ids=(IDENTITY_ROTATION,), **one))
    assert np.array_equal(ident, plain)
    ref = infer_clip([model], clip, InferenceConfig(rotation_ids=tuple(range(8)), **one))
    worst = 0.0
    for order in np.random.default_rng(10).permuted(np.tile(np.arange(8), (5, 1)), axis=1):
        out = infer_clip([model], clip, InferenceConfig(rotation_ids=tuple(int(i) for i in order), **one))
        worst = max(worst, float(np.abs(out - ref).max()))
    assert worst <= 1e-12, worst
    return f"identity exact, order spread {worst:.1e}"
