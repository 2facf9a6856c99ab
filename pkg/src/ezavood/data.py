"""Datasets, class embedding tables, synthetic generation and split views."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, HygieneError, ValidationError
from .numerics import make_rng

log = logging.getLogger(__name__)

TRAIN = 0
TEST = 1
MAX_CLASSES = 10_000


@dataclass(frozen=True, eq=False)
class Dataset:
    """Fused audio-visual features with labels and split bookkeeping.

    ``features`` is (M, D); ``labels`` holds global class indices into
    ``class_names``; ``seen_mask[c]`` is True for seen classes; ``split`` is
    TRAIN (0) or TEST (1) per sample.  Construction enforces the zero-shot
    constraint: no unseen-class sample may carry the TRAIN tag.
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: list
    seen_mask: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {feats.shape}")
        labels = np.asarray(self.labels, dtype=np.int64)
        split = np.asarray(self.split, dtype=np.uint8)
        seen_mask = np.asarray(self.seen_mask, dtype=bool)
        m = feats.shape[0]
        if labels.shape != (m,) or split.shape != (m,):
            raise DimensionError("labels and split must have one entry per sample")
        if len(self.class_names) != seen_mask.shape[0]:
            raise DimensionError("class_names and seen_mask disagree on the class count")
        if not np.all(np.isfinite(feats)):
            raise ValidationError("features contain non-finite values")
        if m and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise ValidationError("label out of range of the class list")
        if np.any(split > TEST):
            raise ValidationError("split flags must be 0 (train) or 1 (test)")
        leaked = (split == TRAIN) & ~seen_mask[labels]
        if np.any(leaked):
            first = int(np.flatnonzero(leaked)[0])
            raise HygieneError(
                f"{int(leaked.sum())} unseen-class sample(s) tagged train (first at index {first})"
            )
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "seen_mask", seen_mask)
        object.__setattr__(self, "class_names", [str(c) for c in self.class_names])

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def seen_classes(self):
        return np.flatnonzero(self.seen_mask)

    @property
    def unseen_classes(self):
        return np.flatnonzero(~self.seen_mask)

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(
            self.features[index],
            self.labels[index],
            list(self.class_names),
            self.seen_mask.copy(),
            self.split[index],
        )

    def equals(self, other):
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.class_names == other.class_names
            and np.array_equal(self.seen_mask, other.seen_mask)
            and np.array_equal(self.split, other.split)
        )


@dataclass(frozen=True, eq=False)
class ClassEmbeddingTable:
    """One fused text embedding (audio-text part then visual-text part) per class."""

    embeddings: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise DimensionError(f"embeddings must be 2-D, got shape {emb.shape}")
        if not np.all(np.isfinite(emb)):
            raise ValidationError("class embeddings contain non-finite values")
        object.__setattr__(self, "embeddings", emb)

    @property
    def dim(self):
        return self.embeddings.shape[1]

    def __len__(self):
        return self.embeddings.shape[0]

    def equals(self, other):
        return np.array_equal(self.embeddings, other.embeddings)


def check_pair(dataset, table):
    if len(table) != dataset.n_classes:
        raise DimensionError(
            f"embedding table has {len(table)} rows but dataset has {dataset.n_classes} classes"
        )


def assert_seen_only(dataset, where="training"):
    """Raise HygieneError if any sample belongs to an unseen class."""
    bad = ~dataset.seen_mask[dataset.labels]
    if np.any(bad):
        raise HygieneError(
            f"{where} input contains {int(bad.sum())} unseen-class sample(s); "
            "unseen classes must never reach a training path"
        )


@dataclass
class SynthConfig:
    """Knobs for the synthetic audio-visual-style generator.

    Each class prototype is a unit vector scaled by ``class_separation``.
    It mixes a code in a ``latent_dim``-dimensional subspace shared by all
    classes (``shared_fraction`` of the squared norm) with a class-private
    random direction.  Text embeddings are a fixed random linear image of
    the shared part, so an aligner trained on seen classes can transfer to
    unseen ones.  With ``latent_dim == 2`` the codes sit evenly on a circle
    with unseen classes interleaved between seen ones; otherwise they are
    the most spread of 64 random draws.

    ``noise_scale`` is the per-coordinate standard deviation of the
    isotropic Gaussian noise added to every sample.
    """

    n_seen_classes: int = 5
    n_unseen_classes: int = 3
    dim_feature: int = 64
    dim_text: int = 32
    samples_per_class_train: int = 300
    samples_per_class_test: int = 50
    class_separation: float = 6.0
    noise_scale: float = 1.0
    latent_dim: int = 2
    shared_fraction: float = 0.7
    text_noise: float = 0.01
    l2_normalize: bool = False
    seed: int = 0

    @classmethod
    def benchmark_geometry(cls, **overrides):
        """Full-width features (D = 1536, D_t = 1024) as in the benchmark extractors."""
        base = dict(dim_feature=1536, dim_text=1024)
        base.update(overrides)
        return cls(**base)

    def validate(self):
        counts = {
            "n_seen_classes": self.n_seen_classes,
            "n_unseen_classes": self.n_unseen_classes,
            "dim_text": self.dim_text,
            "samples_per_class_train": self.samples_per_class_train,
            "samples_per_class_test": self.samples_per_class_test,
            "latent_dim": self.latent_dim,
        }
        for name, value in counts.items():
            if int(value) < 1:
                raise ValidationError(f"{name} must be >= 1, got {value}")
        if self.dim_feature < 2:
            raise ValidationError("dim_feature must be >= 2")
        if self.n_seen_classes + self.n_unseen_classes > MAX_CLASSES:
            raise ValidationError(f"more than {MAX_CLASSES} classes requested")
        if not self.class_separation > 0:
            raise ValidationError("class_separation must be > 0")
        if not self.noise_scale > 0:
            raise ValidationError("noise_scale must be > 0")
        if not 0.0 <= self.shared_fraction <= 1.0:
            raise ValidationError("shared_fraction must lie in [0, 1]")
        if self.latent_dim >= self.dim_feature:
            raise ValidationError("latent_dim must be smaller than dim_feature")


def _unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def _latent_codes(rng, n_seen, n_unseen, k):
    n_cls = n_seen + n_unseen
    if k == 2:
        # unseen slots spread evenly round the circle, seen classes fill the rest
        unseen_slots = np.floor(np.arange(n_unseen) * n_cls / n_unseen).astype(int)
        seen_slots = np.setdiff1d(np.arange(n_cls), unseen_slots)
        slots = np.concatenate([seen_slots, unseen_slots])
        angle = 2.0 * np.pi * (slots + rng.uniform()) / n_cls
        return np.column_stack([np.cos(angle), np.sin(angle)])
    best, best_gap = None, -1.0
    for _ in range(64):
        z = _unit_rows(rng.standard_normal((n_cls, k)))
        gaps = np.linalg.norm(z[:, None] - z[None], axis=-1) + 4.0 * np.eye(n_cls)
        if gaps.min() > best_gap:
            best, best_gap = z, gaps.min()
    return best


def generate_synthetic(cfg):
    """Build a (Dataset, ClassEmbeddingTable) pair from a SynthConfig.

    Seen classes occupy indices 0..C_s-1 and unseen classes the rest.  Train
    samples are drawn for seen classes only; every class gets test samples.
    The output depends on nothing but ``cfg``.
    """
    cfg.validate()
    rng = make_rng(cfg.seed)
    n_cls = cfg.n_seen_classes + cfg.n_unseen_classes
    d, k = cfg.dim_feature, cfg.latent_dim

    basis, _ = np.linalg.qr(rng.standard_normal((d, k)))
    codes = _latent_codes(rng, cfg.n_seen_classes, cfg.n_unseen_classes, k)
    private = rng.standard_normal((n_cls, d))
    private -= (private @ basis) @ basis.T
    private = _unit_rows(private)
    a = np.sqrt(cfg.shared_fraction)
    b = np.sqrt(1.0 - cfg.shared_fraction)
    protos = cfg.class_separation * _unit_rows(a * (codes @ basis.T) + b * private)

    text_map = rng.standard_normal((cfg.dim_text, d)) / np.sqrt(d)
    shared_part = (protos @ basis) @ basis.T
    text = shared_part @ text_map.T
    text += cfg.text_noise * rng.standard_normal(text.shape)

    labels, split = [], []
    for c in range(n_cls):
        if c < cfg.n_seen_classes:
            labels += [c] * cfg.samples_per_class_train
            split += [TRAIN] * cfg.samples_per_class_train
        labels += [c] * cfg.samples_per_class_test
        split += [TEST] * cfg.samples_per_class_test
    labels = np.asarray(labels, dtype=np.int64)
    feats = protos[labels] + cfg.noise_scale * rng.standard_normal((labels.size, d))
    if cfg.l2_normalize:
        feats = _unit_rows(feats)

    names = [f"seen_{c:03d}" for c in range(cfg.n_seen_classes)]
    names += [f"unseen_{c:03d}" for c in range(cfg.n_unseen_classes)]
    seen_mask = np.arange(n_cls) < cfg.n_seen_classes
    return Dataset(feats, labels, names, seen_mask, np.asarray(split)), ClassEmbeddingTable(text)


@dataclass
class SplitViews:
    train_seen: Dataset
    test_seen: Dataset
    test_unseen: Dataset
    warnings: list = field(default_factory=list)


def split_views(dataset):
    """Partition a dataset into train-seen, test-seen and test-unseen views.

    Empty test views are legal (e.g. ZSL-only data) and reported through
    ``SplitViews.warnings`` rather than raised.
    """
    is_seen = dataset.seen_mask[dataset.labels]
    is_train = dataset.split == TRAIN
    views = SplitViews(
        dataset.subset(np.flatnonzero(is_train)),
        dataset.subset(np.flatnonzero(~is_train & is_seen)),
        dataset.subset(np.flatnonzero(~is_train & ~is_seen)),
    )
    for name in ("train_seen", "test_seen", "test_unseen"):
        if getattr(views, name).n_samples == 0:
            msg = f"{name} view is empty"
            log.warning(msg)
            views.warnings.append(msg)
    return views


class LabelMap:
    """Bidirectional map between global class indices and dense 0..C-1 indices."""

    def __init__(self, classes):
        self.classes = np.asarray(classes, dtype=np.int64)
        self._dense = {int(c): i for i, c in enumerate(self.classes)}

    def __len__(self):
        return self.classes.size

    def to_dense(self, labels):
        try:
            return np.array([self._dense[int(y)] for y in labels], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"label {exc.args[0]} is not in the class map") from None

    def to_global(self, dense):
        return self.classes[np.asarray(dense, dtype=np.int64)]
