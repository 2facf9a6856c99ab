"""End-to-end orchestration: train both experts, fit the detector, route and evaluate.

Routing is strict: samples accepted as seen are classified by the seen
expert among seen classes only; the rest go to the unseen expert among
unseen classes only.  Sweeps reuse the trained experts and one Gram
spectrum, since gamma and N only affect scoring.
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as avio
from .data import SynthConfig, assert_seen_only, check_pair, generate_synthetic, split_views
from .errors import ConfigError, ValidationError
from .metrics import (
    GzslReport,
    OodReport,
    auroc,
    gzsl_report_rows,
    harmonic_mean,
    ood_report,
    ood_report_rows,
    per_class_accuracy,
    roc_to_csv,
    rows_to_csv,
    to_jsonl,
)
from .ood import (
    DetectorConfig,
    Detector,
    calibrate_threshold,
    combined_score,
    detect,
    energy_score,
    gram_spectrum,
    residual_score,
    subspace_from_spectrum,
)
from .seen import TrainConfig, forward, predict_seen, train_seen
from .unseen import UNSEEN_EXPERTS, AlignerConfig, AlignerExpert, build_unseen_expert

log = logging.getLogger(__name__)

DEFAULT_GAMMA_GRID = (0.1, 1.0, 10.0, 100.0, 250.0, 500.0, 1000.0)
DEFAULT_DIM_GRID = (32, 64, 128, 256, 384, 512, 768)
AUTO = "auto"


@dataclass
class PipelineConfig:
    """Everything a run needs.  ``gamma`` may be a number or ``"auto"``.

    ``"auto"`` sets gamma = std(energy) / std(residual) over the training
    seen samples, which puts both terms on the same scale without touching
    test data.  ``principal_dim = None`` means min(64, D // 4).
    """

    data_path: str = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    seen_train: TrainConfig = field(default_factory=TrainConfig)
    aligner: AlignerConfig = field(default_factory=AlignerConfig)
    gamma: object = AUTO
    principal_dim: int = None
    percentile: float = 5.0
    center: bool = False
    aupr_positive: str = "seen"
    unseen_expert: str = "aligner"
    mode: str = "gzsl"
    output_dir: str = None
    seed: int = 0

    def validate(self):
        if self.mode not in ("zsl", "gzsl"):
            raise ConfigError(f"mode must be 'zsl' or 'gzsl', got {self.mode!r}")
        if self.unseen_expert not in UNSEEN_EXPERTS:
            raise ConfigError(f"unseen expert {self.unseen_expert!r} is not registered")
        if self.gamma != AUTO:
            try:
                g = float(self.gamma)
            except (TypeError, ValueError):
                raise ConfigError(f"gamma must be a number or 'auto', got {self.gamma!r}") from None
            if not (np.isfinite(g) and g >= 0):
                raise ConfigError("gamma must be finite and >= 0")
        if not 0 < self.percentile < 100:
            raise ConfigError("percentile must lie in (0, 100)")
        if self.aupr_positive not in ("seen", "unseen"):
            raise ConfigError("aupr_positive must be 'seen' or 'unseen'")
        if self.principal_dim is not None and int(self.principal_dim) < 1:
            raise ConfigError("principal_dim must be >= 1")

    def seeds(self):
        """Per-stage seeds derived from the single global seed."""
        data, seen, unseen = np.random.SeedSequence(self.seed).generate_state(3, dtype=np.uint32)
        return int(data), int(seen), int(unseen)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kwargs = {}
        for key, sub in (("synth", SynthConfig), ("seen_train", TrainConfig), ("aligner", AlignerConfig)):
            if key in d:
                kwargs[key] = sub(**d.pop(key))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seen_train" in kwargs and isinstance(kwargs["seen_train"].hidden_dims, list):
            kwargs["seen_train"].hidden_dims = tuple(kwargs["seen_train"].hidden_dims)
        return cls(**kwargs, **d)

    @classmethod
    def from_json(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None


@dataclass
class TrainedPipeline:
    """Trained pieces shared between a full run and the sweeps."""

    config: PipelineConfig
    dataset: object
    table: object
    views: object
    mlp: object
    spectrum: object
    mean: object
    unseen: object

    @property
    def dim(self):
        return self.dataset.dim

    def principal_dim(self):
        n = self.config.principal_dim
        return min(64, self.dim // 4) if n is None else int(n)


@dataclass
class RunArtifacts:
    gzsl: GzslReport
    ood: OodReport
    ablation: dict
    detector: Detector
    checkpoints: dict
    provenance: dict
    gamma_sweep: list = field(default_factory=list)
    dim_sweep: list = field(default_factory=list)


def load_data(config):
    data_seed = config.seeds()[0]
    if config.data_path:
        path = Path(config.data_path)
        if path.suffix == ".csv":
            dataset, table = avio.load_csv(path)
            if table is None:
                raise ConfigError("CSV input needs a class-embedding sidecar")
        else:
            dataset, table = avio.load_features(path)
    else:
        synth = dataclasses.replace(config.synth, seed=data_seed)
        dataset, table = generate_synthetic(synth)
    check_pair(dataset, table)
    return dataset, table


def train_pipeline(config, dataset=None, table=None):
    """Train the seen expert, the Gram spectrum and the unseen expert once."""
    config.validate()
    if dataset is None:
        dataset, table = load_data(config)
    views = split_views(dataset)
    train = views.train_seen
    if train.n_samples == 0:
        raise ValidationError("no training samples")
    assert_seen_only(train, "pipeline training")
    _, seen_seed, unseen_seed = config.seeds()
    mlp = train_seen(train, dataclasses.replace(config.seen_train, seed=seen_seed))
    unseen = build_unseen_expert(
        config.unseen_expert, train, table, dataclasses.replace(config.aligner, seed=unseen_seed)
    )
    return assemble_pipeline(config, dataset, table, mlp, unseen)


def assemble_pipeline(config, dataset, table, mlp, unseen):
    """Wrap already-trained experts (e.g. loaded checkpoints) for evaluation and sweeps."""
    config.validate()
    check_pair(dataset, table)
    views = split_views(dataset)
    assert_seen_only(views.train_seen, "subspace fitting")
    spectrum, mean = gram_spectrum(views.train_seen.features, center=config.center)
    return TrainedPipeline(config, dataset, table, views, mlp, spectrum, mean, unseen)


def auto_gamma(energy, residual):
    sr = float(np.std(residual))
    if sr == 0.0:
        return 0.0
    return float(np.std(energy)) / sr


def _scores(trained, subspace, x):
    return energy_score(forward(trained.mlp, x)), residual_score(subspace, x)


def fit_detector_from(trained, principal_dim=None, gamma=None):
    cfg = trained.config
    n = trained.principal_dim() if principal_dim is None else int(principal_dim)
    subspace = subspace_from_spectrum(trained.spectrum, n, trained.mean)
    e_tr, r_tr = _scores(trained, subspace, trained.views.train_seen.features)
    if gamma is None:
        gamma = cfg.gamma
    gamma = auto_gamma(e_tr, r_tr) if gamma == AUTO else float(gamma)
    lam = calibrate_threshold(combined_score(e_tr, r_tr, gamma), cfg.percentile)
    return Detector(subspace, DetectorConfig(gamma, n, lam, cfg.percentile), avio.mlp_content_hash(trained.mlp))


def _test_partition(trained):
    ds = trained.dataset
    test_idx = np.flatnonzero(ds.split == 1)
    x = ds.features[test_idx]
    y = ds.labels[test_idx]
    seen_truth = ds.seen_mask[y]
    return x, y, seen_truth


def zsl_accuracy(trained):
    ds = trained.dataset
    test_unseen = trained.views.test_unseen
    if test_unseen.n_samples == 0:
        return 0.0, {}
    pred = trained.unseen.predict(test_unseen.features, ds.unseen_classes, labels=test_unseen.labels)
    return per_class_accuracy(pred, test_unseen.labels, ds.unseen_classes)


def evaluate(trained, detector):
    """Route every test sample once and build the GZSL and OOD reports."""
    ds = trained.dataset
    x, y, seen_truth = _test_partition(trained)
    e, r = _scores(trained, detector.subspace, x)
    s = combined_score(e, r, detector.config.gamma)
    routed_seen = detect(s, detector.config.threshold)

    pred = np.full(y.shape, -1, dtype=np.int64)
    if routed_seen.any():
        pred[routed_seen] = predict_seen(trained.mlp, x[routed_seen])
    if (~routed_seen).any():
        pred[~routed_seen] = trained.unseen.predict(x[~routed_seen], ds.unseen_classes, labels=y[~routed_seen])
    assert np.all(pred >= 0)

    report = GzslReport()
    if seen_truth.any():
        report.acc_S, table_s = per_class_accuracy(pred[seen_truth], y[seen_truth], ds.seen_classes)
        report.per_class.update(table_s)
    if (~seen_truth).any():
        report.acc_U, table_u = per_class_accuracy(pred[~seen_truth], y[~seen_truth], ds.unseen_classes)
        report.per_class.update(table_u)
    report.H = harmonic_mean(report.acc_S, report.acc_U)
    report.acc_ZSL = zsl_accuracy(trained)[0]
    report.confusion = {
        "seen_to_seen": int(np.sum(seen_truth & routed_seen)),
        "seen_to_unseen": int(np.sum(seen_truth & ~routed_seen)),
        "unseen_to_seen": int(np.sum(~seen_truth & routed_seen)),
        "unseen_to_unseen": int(np.sum(~seen_truth & ~routed_seen)),
    }

    ablation = {}
    ood = None
    if seen_truth.any() and (~seen_truth).any():
        pos = trained.config.aupr_positive
        ood = ood_report(s[seen_truth], s[~seen_truth], aupr_positive=pos)
        ablation = {
            "energy": ood_report(e[seen_truth], e[~seen_truth], aupr_positive=pos),
            "residual": ood_report(r[seen_truth], r[~seen_truth], aupr_positive=pos),
            "full": ood,
        }
    return report, ood, ablation


def _sha(b):
    return hashlib.sha256(b).hexdigest()


def run_gzsl(config, dataset=None, table=None, trained=None):
    """Train, calibrate, route and evaluate; optionally write artifacts to ``output_dir``."""
    if trained is None:
        trained = train_pipeline(config, dataset, table)
    detector = fit_detector_from(trained)
    report, ood, ablation = evaluate(trained, detector)
    _, seen_seed, unseen_seed = config.seeds()
    checkpoints = {
        "seen_expert.avmlp": avio.dump_mlp(trained.mlp, seen_seed, dataclasses.asdict(config.seen_train)),
        "detector.avood": avio.dump_detector(detector),
    }
    if isinstance(trained.unseen, AlignerExpert):
        checkpoints["unseen_expert.avaln"] = avio.dump_aligner(
            trained.unseen.params, unseen_seed, dataclasses.asdict(config.aligner)
        )
    provenance = {
        "config": config.to_dict(),
        "seed": config.seed,
        "gamma": detector.config.gamma,
        "threshold": detector.config.threshold,
        "principal_dim": detector.config.principal_dim,
        "hashes": {name: _sha(blob) for name, blob in checkpoints.items()},
        "data_hash": _sha(avio.dump_features(trained.dataset, trained.table)),
    }
    artifacts = RunArtifacts(report, ood, ablation, detector, checkpoints, provenance)
    if config.output_dir:
        write_artifacts(artifacts, config.output_dir, trained.dataset.class_names)
    return artifacts


def run_zsl(config, dataset=None, table=None, trained=None):
    """Unseen expert alone on unseen test samples, candidates = unseen classes."""
    if trained is None:
        trained = train_pipeline(config, dataset, table)
    acc, per_class = zsl_accuracy(trained)
    report = GzslReport(acc_ZSL=acc, per_class=per_class)
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "zsl_report.csv").write_text(rows_to_csv(gzsl_report_rows(report, trained.dataset.class_names)))
    return report


def _ood_auroc(trained, subspace, gamma):
    x, _, seen_truth = _test_partition(trained)
    e, r = _scores(trained, subspace, x)
    s = combined_score(e, r, gamma)
    return auroc(s[seen_truth], s[~seen_truth])


def sweep_gamma(config, gamma_grid=DEFAULT_GAMMA_GRID, trained=None):
    """AUROC per gamma with experts and subspace fixed; gamma = 0 is always included."""
    grid = [float(g) for g in gamma_grid]
    if not grid:
        raise ValidationError("gamma grid is empty")
    if trained is None:
        trained = train_pipeline(config)
    if 0.0 not in grid:
        grid = [0.0] + grid
    subspace = subspace_from_spectrum(trained.spectrum, trained.principal_dim(), trained.mean)
    return [{"gamma": g, "auroc": _ood_auroc(trained, subspace, g)} for g in grid]


def sweep_dim(config, n_grid=DEFAULT_DIM_GRID, trained=None, gamma=None):
    """AUROC per principal dim from one spectrum; invalid N rows carry an error and the sweep goes on."""
    grid = [int(n) for n in n_grid]
    if not grid:
        raise ValidationError("dimension grid is empty")
    if trained is None:
        trained = train_pipeline(config)
    if gamma is None:
        gamma = fit_detector_from(trained).config.gamma
    rows = []
    for n in grid:
        try:
            subspace = subspace_from_spectrum(trained.spectrum, n, trained.mean)
        except ValidationError as exc:
            rows.append({"N": n, "auroc": None, "error": str(exc)})
            continue
        rows.append({"N": n, "auroc": _ood_auroc(trained, subspace, gamma)})
    return rows


def write_artifacts(art, output_dir, class_names=None):
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, blob in art.checkpoints.items():
        (out / name).write_bytes(blob)
    rows = gzsl_report_rows(art.gzsl, class_names)
    if art.ood is not None:
        rows += ood_report_rows(art.ood)
        for key in ("energy", "residual"):
            rows += ood_report_rows(art.ablation[key], prefix=f"{key}.")
        (out / "roc.csv").write_text(roc_to_csv(art.ood.roc_points))
    (out / "report.csv").write_text(rows_to_csv(rows))
    records = [{"kind": "gzsl", **art.gzsl.to_dict()}]
    if art.ood is not None:
        for key, rep in art.ablation.items():
            d = rep.to_dict()
            d.pop("roc_points")
            records.append({"kind": "ood", "score": key, **d})
    (out / "report.jsonl").write_text(to_jsonl(records))
    (out / "provenance.json").write_text(json.dumps(art.provenance, indent=2, sort_keys=True, default=str))
