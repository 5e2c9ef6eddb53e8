import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkseld.audio_io import (DatasetCatalog, EventAnnotation, MultichannelClip, events_by_frame,
                             parse_metadata_csv, read_wav, wrap_azimuth, write_metadata_csv, write_wav)
from dkseld.errors import DimensionError, FormatError, UnsupportedFormatError, ValidationError
from dkseld.features import salsa_mel


def test_four_channel_five_seconds(tmp_path, rng):
    clip = MultichannelClip(rng.uniform(-0.5, 0.5, (4, 120000)), 24000)
    write_wav(tmp_path / "a.wav", clip)
    back = read_wav(tmp_path / "a.wav")
    assert back.channel_count == 4
    assert back.num_samples == 120000
    assert back.sample_rate == 24000


@pytest.mark.parametrize("bits", [16, 32])
def test_pcm_round_trip_exact_at_bit_depth(tmp_path, rng, bits):
    q = 2.0 ** (bits - 1)
    ints = rng.integers(-q, q, size=(4, 500))
    clip = MultichannelClip(ints / q, 24000)
    write_wav(tmp_path / "a.wav", clip, bits=bits)
    np.testing.assert_array_equal(read_wav(tmp_path / "a.wav").samples, clip.samples)


def test_float_round_trip(tmp_path, rng):
    x = rng.uniform(-1, 1, (2, 300)).astype(np.float32).astype(np.float64)
    write_wav(tmp_path / "f.wav", MultichannelClip(x, 16000), bits=-32)
    np.testing.assert_array_equal(read_wav(tmp_path / "f.wav").samples, x)


def test_mono_accepted_then_rejected_by_features(tmp_path):
    write_wav(tmp_path / "m.wav", MultichannelClip(np.zeros((1, 4800)), 24000))
    clip = read_wav(tmp_path / "m.wav")
    assert clip.channel_count == 1
    with pytest.raises(DimensionError):
        salsa_mel(clip)


def test_truncated_file(tmp_path, rng):
    write_wav(tmp_path / "a.wav", MultichannelClip(rng.uniform(-1, 1, (4, 1000)), 24000))
    raw = (tmp_path / "a.wav").read_bytes()
    (tmp_path / "t.wav").write_bytes(raw[:len(raw) // 2])
    with pytest.raises(FormatError):
        read_wav(tmp_path / "t.wav")
    (tmp_path / "h.wav").write_bytes(raw[:10])
    with pytest.raises(FormatError):
        read_wav(tmp_path / "h.wav")


def test_unsupported_encoding(tmp_path):
    # 8-bit PCM
    data = bytes(8)
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 8000, 1, 8)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(data)) + data
    (tmp_path / "u8.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(UnsupportedFormatError):
        read_wav(tmp_path / "u8.wav")


def test_parse_row(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("10,5,0,30,-10\n")
    (e,) = parse_metadata_csv(p)
    assert (e.frame, e.class_id, e.source_id, e.azimuth_deg, e.elevation_deg) == (10, 5, 0, 30.0, -10.0)


def test_parse_empty(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("")
    assert parse_metadata_csv(p) == []


def test_parse_class_13_rejected_with_row_number(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("0,1,0,0,0\n1,13,0,0,0\n")
    with pytest.raises(ValidationError, match=":2:"):
        parse_metadata_csv(p)


def test_parse_bad_angle(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("0,1,0,0,95\n")
    with pytest.raises(ValidationError):
        parse_metadata_csv(p)


def test_empty_list_writes_empty_file(tmp_path):
    write_metadata_csv([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ""


def test_round_trip_100_random_events(tmp_path, rng):
    events = [EventAnnotation(int(rng.integers(0, 600)), int(rng.integers(0, 13)), int(rng.integers(0, 4)),
                              float(rng.integers(-180, 180)), float(rng.integers(-90, 91)))
              for _ in range(100)]
    write_metadata_csv(events, tmp_path / "r.csv")
    assert parse_metadata_csv(tmp_path / "r.csv") == events


def test_integral_angles_written_as_integers(tmp_path):
    write_metadata_csv([EventAnnotation(3, 2, 1, 30.0, -10.5)], tmp_path / "i.csv")
    assert (tmp_path / "i.csv").read_text() == "3,2,1,30,-10.5\n"


angles = st.tuples(st.floats(-180, 180, exclude_max=True, allow_nan=False),
                   st.floats(-90, 90, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1000), st.integers(0, 12), st.integers(0, 5), angles), max_size=20))
def test_round_trip_property(tmp_path_factory, rows):
    events = [EventAnnotation(f, c, s, az, el) for f, c, s, (az, el) in rows]
    p = tmp_path_factory.mktemp("rt") / "x.csv"
    write_metadata_csv(events, p)
    assert parse_metadata_csv(p) == events


def test_wrap_azimuth():
    assert wrap_azimuth(180.0) == -180.0
    assert wrap_azimuth(-190.0) == 170.0
    assert wrap_azimuth(359.0) == -1.0


def test_events_by_frame():
    ev = [EventAnnotation(1, 0, 0, 0, 0), EventAnnotation(1, 1, 0, 0, 0), EventAnnotation(2, 0, 0, 0, 0)]
    grouped = events_by_frame(ev)
    assert [len(grouped[1]), len(grouped[2])] == [2, 1]


def _touch(tmp_path, name):
    p = tmp_path / name
    p.write_bytes(b"")
    return p


def test_catalog_partition_and_round_trip(tmp_path):
    rows = [(_touch(tmp_path, f"{i}.wav"), _touch(tmp_path, f"{i}.csv"), s, "train")
            for i, s in enumerate(["synthetic", "real", "synthetic"])]
    cat = DatasetCatalog.from_entries(rows)
    syn, real = cat.select("synthetic"), cat.select("real")
    assert len(syn) + len(real) == len(cat)
    assert not {e.audio for e in syn} & {e.audio for e in real}
    cat.save(tmp_path / "catalog.csv")
    back = DatasetCatalog.load(tmp_path / "catalog.csv")
    assert [(e.audio.resolve(), e.scene) for e in back.entries] == [(e.audio.resolve(), e.scene) for e in cat.entries]


def test_catalog_rejects_double_tag_and_missing_files(tmp_path):
    a, m = _touch(tmp_path, "a.wav"), _touch(tmp_path, "a.csv")
    with pytest.raises(ValidationError):
        DatasetCatalog.from_entries([(a, m, "synthetic", "train"), (a, m, "real", "train")])
    with pytest.raises(ValidationError):
        DatasetCatalog.from_entries([(tmp_path / "missing.wav", m, "real", "train")])
    with pytest.raises(ValidationError):
        DatasetCatalog.from_entries([(a, m, "studio", "train")])
