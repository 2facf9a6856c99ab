"""Zero-shot audio-visual classification through OOD routing.

A seen-class MLP and a text-aligned unseen expert are combined by a
detector that scores each sample with its energy plus a scaled residual
from the principal subspace of training features.  Samples that score
above a calibrated threshold go to the seen expert; the rest go to the
unseen expert.
"""

from .data import ClassEmbeddingTable, Dataset, SynthConfig, generate_synthetic, split_views
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    EzAvoodError,
    FormatError,
    HygieneError,
    NumericalError,
    ValidationError,
)
from .metrics import GzslReport, OodReport, auroc, aupr, fpr_at_tpr, harmonic_mean, per_class_accuracy
from .ood import Detector, DetectorConfig, Verdict, combined_score, detect, energy_score, residual_score
from .pipeline import PipelineConfig, run_gzsl, run_zsl, sweep_dim, sweep_gamma
from .seen import TrainConfig, train_seen
from .unseen import AlignerConfig, register_unseen_expert, train_unseen

__version__ = "0.1.0"
