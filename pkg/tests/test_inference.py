import numpy as np
import pytest

from dkseld.audio_io import DatasetCatalog, read_wav
from dkseld.augment import IDENTITY_ROTATION
from dkseld.config import InferenceConfig
from dkseld.errors import ConfigurationError
from dkseld.features import FeatureConfig, salsa_mel
from dkseld.inference import (evaluate_catalog, infer_clip, load_model, predict_features,
                              predict_hop_overlap, save_model)
from dkseld.models import ModelConfig, build_model


@pytest.fixture(scope="module")
def model():
    return build_model("seldnet-dk", ModelConfig.reduced(n_classes=2, **{"dtype": "float64"}), seed=0)


@pytest.fixture(scope="module")
def clip(small_catalog):
    return read_wav(small_catalog.entries[0].audio)


def test_whole_chunk_equals_direct_prediction(model, clip):
    feat = salsa_mel(clip).values
    direct = model.predict(feat[None])[0]
    np.testing.assert_array_equal(predict_features(model, feat, 10), direct)


def test_chunk_grid_covers_clip(model, clip):
    feat = salsa_mel(clip).values
    for off in (0, 1, 3):
        assert predict_features(model, feat, 4, off).shape == (10, 3, 2, 3)


def test_single_offset_weight_one(model, clip):
    feat = salsa_mel(clip).values
    cfg = InferenceConfig(hop_offsets=(0,), hop_weights=(1.0,), chunk_label_frames=4)
    np.testing.assert_array_equal(predict_hop_overlap(model, feat, cfg), predict_features(model, feat, 4))


def test_hop_overlap_is_weighted_sum(model, clip):
    feat = salsa_mel(clip).values
    cfg = InferenceConfig(hop_offsets=(0, 2), hop_weights=(0.25, 0.75), chunk_label_frames=4)
    ref = 0.25 * predict_features(model, feat, 4, 0) + 0.75 * predict_features(model, feat, 4, 2)
    np.testing.assert_allclose(predict_hop_overlap(model, feat, cfg), ref, atol=1e-15)


def test_identity_tta_equals_plain(model, clip):
    cfg = InferenceConfig(rotation_ids=(IDENTITY_ROTATION,), chunk_label_frames=10, hop_offsets=(0,),
                          hop_weights=(1.0,))
    plain = predict_features(model, salsa_mel(clip).values, 10)
    np.testing.assert_array_equal(infer_clip([model], clip, cfg), plain)
    off = InferenceConfig(tta_rotations=False, chunk_label_frames=10, hop_offsets=(0,), hop_weights=(1.0,))
    np.testing.assert_array_equal(infer_clip([model], clip, off), plain)


def test_tta_order_invariance(model, clip):
    base = dict(chunk_label_frames=10, hop_offsets=(0,), hop_weights=(1.0,))
    a = infer_clip([model], clip, InferenceConfig(rotation_ids=tuple(range(8)), **base))
    b = infer_clip([model], clip, InferenceConfig(rotation_ids=(5, 2, 7, 0, 3, 6, 1, 4), **base))
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def test_ensemble_of_copies_equals_single(model, clip, tmp_path):
    save_model(tmp_path / "m.ck", model)
    twin = load_model(tmp_path / "m.ck")
    cfg = InferenceConfig(rotation_ids=(0, 2), chunk_label_frames=5, hop_offsets=(0, 2))
    np.testing.assert_array_equal(infer_clip([twin, load_model(tmp_path / "m.ck")], clip, cfg),
                                  infer_clip([twin], clip, cfg))
    with pytest.raises(ConfigurationError):
        infer_clip([], clip, cfg)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "absent.ck")


def test_evaluate_catalog(model, small_catalog):
    cfg = InferenceConfig(tta_rotations=False, chunk_label_frames=5, hop_offsets=(0, 2))
    rep = evaluate_catalog([model], small_catalog.select("real", "validation"), cfg, FeatureConfig())
    assert 0.0 <= rep.seld_score <= 1.5
    with pytest.raises(ConfigurationError):
        evaluate_catalog([model], DatasetCatalog([]).select("real", "test"), cfg)
