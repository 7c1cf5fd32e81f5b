"""Multimodal (camera + LiDAR + GPS-text) contrastive beam prediction for mmWave V2I links."""
from .contrastive import ContrastiveConfig, cosine_similarity_matrix, infonce_loss, pretrain
from .dataio import (
    DatasetIndex, GpsNormalizer, MultimodalSample, SyntheticSceneConfig, fit_gps_normalizer,
    generate_synthetic, load_index, normalize_gps, split,
)
from .encoders import EncoderBank, EncoderConfig, verbalize_gps, voxelize
from .fusion import BeamDistribution, GatedFusion, ce_loss, gate_weights
from .harness import TrainConfig, ablate, evaluate, finetune, plot_curves
from .metrics import DbaConfig, DbaReport, dba_score, rank_predictions, topk_accuracy
from .model import BeamPredictor, PreparedData, load_checkpoint, predict_sample, save_checkpoint
from .signalmodel import (
    BeamCodebook, Channel, RxSignal, make_dft_codebook, optimal_beam, received_signal, steering_channel,
)

__version__ = "0.1.0"
