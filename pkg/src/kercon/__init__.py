"""Kernel-weighted contrastive losses for regression on the unit hypersphere."""

from .kernels import KernelKind, LabelKernel, WeightMatrix, kernel_eval, weight_matrix
from .similarity import EmbeddingBatch, SimilarityMatrix, cosine_similarity_matrix, project_to_sphere
from .losses import (
    LossKind,
    LossOutput,
    NoPositivePairsError,
    contrastive_loss,
    exp_loss,
    margin_oracle,
    supcon_loss,
    thr_loss,
    yaware_loss,
)
from .encoder import Encoder, TrainConfig, train
from .metrics import ProbeResult, balanced_accuracy, challenge_score, evaluate, mae
from .datagen import Dataset, SyntheticConfig, generate, load_csv, save_csv

__version__ = "0.1.0"
