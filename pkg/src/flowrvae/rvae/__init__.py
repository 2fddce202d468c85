"""Recurrent VAE, MLP-VAE baseline, anomaly scoring and trainers."""
from .model import (MlpVaeModel, RvaeModel, SeqBatch, VaeBase, binary_entropy, build_model,
                    clamped_bce, collate, decode, encode, kl_divergence, load_model, loss,
                    reparameterize, save_model)
from .scoring import ScoreRecord, anomaly_scores, score_matrix, score_sequences
from .train import (TrainConfig, TrainingLog, beta_at, carry_lowest, source_loss, target_loss,
                    train_semisupervised, train_transfer_with_label, train_transfer_without_label)

__all__ = [
    "MlpVaeModel", "RvaeModel", "ScoreRecord", "SeqBatch", "TrainConfig", "TrainingLog",
    "VaeBase", "anomaly_scores", "beta_at", "binary_entropy", "build_model", "carry_lowest",
    "clamped_bce", "collate", "decode", "encode", "kl_divergence", "load_model", "loss",
    "reparameterize", "save_model", "score_matrix", "score_sequences", "source_loss",
    "target_loss", "train_semisupervised", "train_transfer_with_label",
    "train_transfer_without_label",
]
