"""Prototype-based deterministic uncertainty (LDU) on a small numpy autodiff engine."""

from .analysis import collapse_report, collapse_score, confidence_grid, lipschitz_ratio, pca_2d
from .config import ExperimentSpec, parse_config
from .datasets import Dataset, gaussian_blobs, ood_ring, shifted_blobs, sinusoid_regression, two_moons
from .layer import PrototypeBank, dm_forward_cos, dm_forward_l2, init_prototypes, ldu_embed
from .losses import ldu_losses, loss_dis, loss_entrop, loss_unc, normalize_batch_losses
from .metrics import MetricReport, aupr, auroc, ause, ece, fpr_at_95_tpr
from .model import LDUModel, ModelSpec, PlainMLP, build_model, load_checkpoint, predict, save_checkpoint
from .tensor import Tensor, grad_check, no_grad
from .training import LossToggles, Stage2Config, TrainConfig, train_stage1, train_stage2_unc_only

__version__ = "0.1.0"
