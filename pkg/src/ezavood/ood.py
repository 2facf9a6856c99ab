"""Post-hoc seen/unseen detection: energy + residual-subspace score.

The residual subspace is spanned by the trailing eigenvectors of the
uncentered Gram matrix X^T X of training features.  A sample's residual
score is minus the norm of its projection onto that subspace; its energy
score is the logsumexp of the seen expert's logits.  The detector combines
them as ``energy + gamma * residual`` and accepts a sample as seen when the
combined score reaches the calibrated threshold.
"""

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, NumericalError, ValidationError
from .numerics import EigenResult, logsumexp, softmax, sym_eig
from .seen import forward

# (principal_dim, gamma) shipped for the three benchmark splits
PROFILES = {
    "vggsound": (64, 90.0),
    "ucf": (256, 205.0),
    "activitynet": (256, 285.0),
}
DEFAULT_PERCENTILE = 5.0


class Verdict(enum.IntEnum):
    UNSEEN = 0
    SEEN = 1


@dataclass(frozen=True, eq=False)
class SubspaceModel:
    residual_basis: np.ndarray
    principal_dim: int
    eigenvalues: np.ndarray
    mean: np.ndarray = None

    def __post_init__(self):
        d, r = self.residual_basis.shape
        if not 1 <= self.principal_dim < d or r != d - self.principal_dim:
            raise DimensionError(
                f"residual basis {self.residual_basis.shape} inconsistent with N={self.principal_dim}"
            )

    @property
    def dim(self):
        return self.residual_basis.shape[0]

    def equals(self, other):
        same_mean = (self.mean is None and other.mean is None) or (
            self.mean is not None and other.mean is not None and np.array_equal(self.mean, other.mean)
        )
        return (
            self.principal_dim == other.principal_dim
            and np.array_equal(self.residual_basis, other.residual_basis)
            and np.array_equal(self.eigenvalues, other.eigenvalues)
            and same_mean
        )


@dataclass
class DetectorConfig:
    gamma: float = PROFILES["vggsound"][1]
    principal_dim: int = PROFILES["vggsound"][0]
    threshold: float = None
    percentile: float = DEFAULT_PERCENTILE

    def validate(self):
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValidationError(f"gamma must be finite and >= 0, got {self.gamma}")
        if int(self.principal_dim) < 1:
            raise ValidationError("principal_dim must be >= 1")
        if not 0 < self.percentile < 100:
            raise ValidationError("percentile must lie in (0, 100)")
        if self.threshold is not None and not np.isfinite(self.threshold):
            raise ValidationError("threshold must be finite")

    @classmethod
    def for_profile(cls, name, **overrides):
        n, gamma = PROFILES[name]
        return cls(gamma=gamma, principal_dim=n, **overrides)


class ScoreBreakdown(NamedTuple):
    energy: np.ndarray
    residual: np.ndarray
    combined: np.ndarray


def gram_spectrum(train_features, center=False):
    """Eigendecomposition of X^T X (optionally of the centered X).

    Returns the EigenResult and the mean that was subtracted (None when
    ``center`` is False).
    """
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("need a 2-D feature matrix with at least 2 rows")
    if not np.all(np.isfinite(x)):
        raise NumericalError("training features are non-finite")
    mean = None
    if center:
        mean = x.mean(axis=0)
        x = x - mean
    gram = x.T @ x
    if not np.all(np.isfinite(gram)):
        raise NumericalError("Gram matrix overflowed")
    return sym_eig(gram), mean


def subspace_from_spectrum(eig: EigenResult, n, mean=None):
    """Slice the residual basis (eigenvectors N+1..D) out of a full spectrum."""
    d = eig.eigenvectors.shape[0]
    n = int(n)
    if not 1 <= n < d:
        raise ValidationError(f"principal dim must satisfy 1 <= N < D={d}, got {n}")
    basis = np.ascontiguousarray(eig.eigenvectors[:, n:])
    return SubspaceModel(basis, n, eig.eigenvalues.copy(), None if mean is None else mean.copy())


def fit_subspace(train_features, n, center=False):
    """Fit the residual subspace from training features (no centering by default)."""
    x = np.asarray(train_features)
    if x.ndim == 2 and not 1 <= int(n) < x.shape[1]:
        raise ValidationError(f"principal dim must satisfy 1 <= N < D={x.shape[1]}, got {n}")
    eig, mean = gram_spectrum(train_features, center=center)
    return subspace_from_spectrum(eig, n, mean)


def residual_projection(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise DimensionError(f"expected feature dim {model.dim}, got {x.shape[-1]}")
    if model.mean is not None:
        x = x - model.mean
    return x @ model.residual_basis


def residual_score(model, x):
    """-||O^T x||; a float for one sample, an array for a batch."""
    proj = residual_projection(model, x)
    out = -np.sqrt(np.sum(proj * proj, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def energy_score(logits):
    """logsumexp of the logits (the negated free energy); higher means seen."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim <= 1:
        return logsumexp(logits)
    return logsumexp(logits, axis=-1)


def msp_score(logits):
    """Maximum softmax probability baseline."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise ValidationError("empty logits")
    if not np.all(np.isfinite(logits)):
        raise ValidationError("logits are non-finite")
    out = np.max(softmax(logits, axis=-1), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def combined_score(energy, residual, gamma):
    if not (np.isfinite(gamma) and gamma >= 0):
        raise ValidationError(f"gamma must be finite and >= 0, got {gamma}")
    energy = np.asarray(energy, dtype=np.float64)
    residual = np.asarray(residual, dtype=np.float64)
    if not (np.all(np.isfinite(energy)) and np.all(np.isfinite(residual))):
        raise ValidationError("scores must be finite")
    out = energy + gamma * residual
    return float(out) if out.ndim == 0 else out


def score_samples(mlp, model, gamma, x):
    """Energy, residual and combined scores for a batch of features."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    energy = energy_score(forward(mlp, x))
    residual = residual_score(model, x)
    return ScoreBreakdown(energy, residual, combined_score(energy, residual, gamma))


def calibrate_threshold(train_seen_scores, percentile=DEFAULT_PERCENTILE):
    """Linear-interpolated percentile of the training-seen combined scores.

    The default of 5 accepts about 95% of the training seen samples.
    """
    scores = np.asarray(train_seen_scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ValidationError("cannot calibrate a threshold on no scores")
    if not 0 < percentile < 100:
        raise ValidationError("percentile must lie in (0, 100)")
    return float(np.percentile(scores, percentile, method="linear"))


def detect(score, threshold):
    """Seen iff score >= threshold.

    Scalars give a Verdict; arrays give a boolean mask (True = seen).
    """
    s = np.asarray(score, dtype=np.float64)
    mask = s >= threshold
    if s.ndim == 0:
        return Verdict.SEEN if mask else Verdict.UNSEEN
    return mask


@dataclass(eq=False)
class Detector:
    """A fitted subspace plus calibrated config, tied to one seen-expert checkpoint."""

    subspace: SubspaceModel
    config: DetectorConfig
    mlp_hash: str = ""

    def scores(self, mlp, x):
        return score_samples(mlp, self.subspace, self.config.gamma, x)

    def is_seen(self, mlp, x):
        if self.config.threshold is None:
            raise ValidationError("detector threshold has not been calibrated")
        return detect(self.scores(mlp, x).combined, self.config.threshold)


def fit_detector(mlp, train_features, config, center=False, mlp_hash=""):
    """Fit the subspace and calibrate the threshold on training-seen features."""
    config.validate()
    subspace = fit_subspace(train_features, config.principal_dim, center=center)
    scores = score_samples(mlp, subspace, config.gamma, train_features)
    lam = calibrate_threshold(scores.combined, config.percentile)
    cfg = DetectorConfig(config.gamma, config.principal_dim, lam, config.percentile)
    return Detector(subspace, cfg, mlp_hash)
