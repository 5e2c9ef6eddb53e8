"""Sound event localization and detection with dynamic-kernel convolutions and Conformer blocks."""
from .accdoa import (adpit_loss, adpit_loss_value, cartesian_to_doa, decode_predictions,
                     doa_to_cartesian, encode_adpit_targets)
from .audio_io import (DatasetCatalog, EventAnnotation, MultichannelClip, parse_metadata_csv,
                       read_wav, write_metadata_csv, write_wav)
from .augment import ROTATIONS, channel_rotate, spatial_synthesize
from .config import InferenceConfig, Settings, TrainConfig, load_settings
from .features import FeatureConfig, salsa_mel
from .metrics import MetricsReport, compute_metrics, evaluate_events, match_events, seld_score
from .models import MODEL_NAMES, ModelConfig, build_model

__version__ = "0.1.0"

__all__ = [
    "DatasetCatalog", "EventAnnotation", "FeatureConfig", "InferenceConfig", "MODEL_NAMES",
    "MetricsReport", "ModelConfig", "MultichannelClip", "ROTATIONS", "Settings", "TrainConfig",
    "adpit_loss", "adpit_loss_value", "build_model", "cartesian_to_doa", "channel_rotate",
    "compute_metrics", "decode_predictions", "doa_to_cartesian", "encode_adpit_targets",
    "evaluate_events", "load_settings", "match_events", "parse_metadata_csv", "read_wav",
    "salsa_mel", "seld_score", "spatial_synthesize", "write_metadata_csv", "write_wav",
]
