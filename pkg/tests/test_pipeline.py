import dataclasses
import hashlib
import json

import numpy as np
import pytest

from ezavood import io as avio
from ezavood.data import TRAIN
from ezavood.errors import ConfigError, HygieneError, ValidationError
from ezavood.ood import fit_subspace
from ezavood.pipeline import (
    DEFAULT_GAMMA_GRID,
    PipelineConfig,
    assemble_pipeline,
    auto_gamma,
    fit_detector_from,
    load_data,
    run_gzsl,
    run_zsl,
    sweep_dim,
    sweep_gamma,
    train_pipeline,
)

from conftest import small_pipeline_config, small_synth


def test_run_twice_identical():
    a = run_gzsl(small_pipeline_config())
    b = run_gzsl(small_pipeline_config())
    assert a.gzsl == b.gzsl and a.ood == b.ood
    assert a.checkpoints == b.checkpoints
    assert a.provenance == b.provenance


def test_seed_changes_results():
    a = run_gzsl(small_pipeline_config(seed=1))
    b = run_gzsl(small_pipeline_config(seed=2))
    assert a.checkpoints != b.checkpoints


def test_routing_conservation(small_trained):
    art = run_gzsl(small_trained.config, trained=small_trained)
    ds = small_trained.dataset
    assert sum(art.gzsl.confusion.values()) == int(np.sum(ds.split == 1))
    c = art.gzsl.confusion
    assert c["seen_to_seen"] + c["seen_to_unseen"] == small_trained.views.test_seen.n_samples


def test_h_is_harmonic_mean(small_trained):
    g = run_gzsl(small_trained.config, trained=small_trained).gzsl
    assert g.H == pytest.approx(2 * g.acc_S * g.acc_U / (g.acc_S + g.acc_U))


def test_oracle_expert_leaves_ood_report_unchanged():
    aligned = run_gzsl(small_pipeline_config())
    oracle = run_gzsl(small_pipeline_config(unseen_expert="oracle"))
    assert oracle.ood == aligned.ood
    assert oracle.ablation == aligned.ablation
    assert oracle.detector.config == aligned.detector.config
    assert oracle.gzsl.acc_ZSL == 1.0


def test_run_zsl_oracle_and_single_candidate():
    assert run_zsl(small_pipeline_config(unseen_expert="oracle")).acc_ZSL == 1.0
    cfg = small_pipeline_config(synth=small_synth(n_unseen_classes=1))
    rep = run_zsl(cfg)
    assert rep.acc_ZSL == 1.0 and list(rep.per_class.values()) == [1.0]


def test_sweep_gamma_prepends_zero(small_trained):
    rows = sweep_gamma(small_trained.config, DEFAULT_GAMMA_GRID, trained=small_trained)
    assert [r["gamma"] for r in rows] == [0.0, *DEFAULT_GAMMA_GRID]
    art = run_gzsl(small_trained.config, trained=small_trained)
    assert rows[0]["auroc"] == art.ablation["energy"].auroc
    rows = sweep_gamma(small_trained.config, [0.0, 3.0], trained=small_trained)
    assert len(rows) == 2


def test_sweep_gamma_large_gamma_approaches_residual(small_trained):
    art = run_gzsl(small_trained.config, trained=small_trained)
    rows = sweep_gamma(small_trained.config, [1e9], trained=small_trained)
    assert rows[-1]["auroc"] == pytest.approx(art.ablation["residual"].auroc, abs=0.01)


def test_sweep_empty_grids(small_trained):
    with pytest.raises(ValidationError):
        sweep_gamma(small_trained.config, [], trained=small_trained)
    with pytest.raises(ValidationError):
        sweep_dim(small_trained.config, [], trained=small_trained)


def test_sweep_dim_rows(small_trained):
    d = small_trained.dim
    assert len(sweep_dim(small_trained.config, [d - 1], trained=small_trained)) == 1
    rows = sweep_dim(small_trained.config, [2, d, 4, d + 5], trained=small_trained)
    assert [r["N"] for r in rows] == [2, d, 4, d + 5]
    assert rows[0]["auroc"] is not None and "error" not in rows[0]
    assert rows[1]["auroc"] is None and "N < D" in rows[1]["error"]
    assert rows[3]["auroc"] is None


def test_resliced_subspace_equals_refit(small_trained):
    det = fit_detector_from(small_trained, principal_dim=4)
    refit = fit_subspace(small_trained.views.train_seen.features, 4)
    assert det.subspace.equals(refit)


def test_auto_gamma_balances_scales(rng):
    e, r = rng.standard_normal(100) * 5, rng.standard_normal(100) * 0.5
    g = auto_gamma(e, r)
    assert np.std(g * r) == pytest.approx(np.std(e))
    assert auto_gamma(e, np.zeros(3)) == 0.0


def test_fixed_gamma_is_used(small_trained):
    cfg = dataclasses.replace(small_trained.config, gamma=2.5)
    trained = dataclasses.replace(small_trained, config=cfg)
    assert fit_detector_from(trained).config.gamma == 2.5


def test_threshold_uses_training_scores_only(small_trained):
    det = fit_detector_from(small_trained)
    accepted = det.is_seen(small_trained.mlp, small_trained.views.train_seen.features)
    assert 0.94 <= accepted.mean() <= 0.96


def test_hygiene_mutation_aborts():
    cfg = small_pipeline_config()
    ds, table = load_data(cfg)
    # bypass the constructor check to simulate a corrupted dataset object
    unseen_idx = int(np.flatnonzero(~ds.seen_mask[ds.labels])[0])
    split = ds.split.copy()
    split[unseen_idx] = TRAIN
    object.__setattr__(ds, "split", split)
    with pytest.raises(HygieneError):
        run_gzsl(cfg, ds, table)


def test_assemble_rejects_unseen_in_training(small_trained):
    ds = small_trained.dataset
    copy = ds.subset(np.arange(ds.n_samples))
    split = copy.split.copy()
    split[np.flatnonzero(~copy.seen_mask[copy.labels])[0]] = TRAIN
    object.__setattr__(copy, "split", split)
    with pytest.raises(HygieneError):
        assemble_pipeline(small_trained.config, copy, small_trained.table, small_trained.mlp, small_trained.unseen)


def test_output_dir_and_provenance(tmp_path):
    cfg = small_pipeline_config(output_dir=str(tmp_path / "run"))
    art = run_gzsl(cfg)
    out = tmp_path / "run"
    names = {p.name for p in out.iterdir()}
    assert {"seen_expert.avmlp", "unseen_expert.avaln", "detector.avood", "report.csv", "report.jsonl", "roc.csv",
            "provenance.json"} <= names
    prov = json.loads((out / "provenance.json").read_text())
    for name, digest in prov["hashes"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert prov["seed"] == cfg.seed
    assert "H," in (out / "report.csv").read_text()
    kinds = [json.loads(l)["kind"] for l in (out / "report.jsonl").read_text().splitlines()]
    assert kinds[0] == "gzsl" and kinds.count("ood") == 3


def test_config_json_round_trip(tmp_path):
    cfg = small_pipeline_config(gamma=12.0)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = PipelineConfig.from_json(path)
    assert back == cfg


@pytest.mark.parametrize(
    "bad",
    [dict(mode="both"), dict(unseen_expert="nope"), dict(gamma=-1.0), dict(gamma="big"), dict(percentile=0.0),
     dict(principal_dim=0), dict(aupr_positive="x")],
)
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        PipelineConfig(**bad).validate()


def test_config_unknown_key():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"gama": 1.0})


def test_config_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        PipelineConfig.from_json(path)


def test_stage_seeds_derive_from_global():
    a, b = PipelineConfig(seed=4), PipelineConfig(seed=4)
    assert a.seeds() == b.seeds() and len(set(a.seeds())) == 3
    assert PipelineConfig(seed=5).seeds() != a.seeds()


def test_data_from_file(tmp_path, small_data):
    path = tmp_path / "d.avf"
    avio.save_features(path, *small_data)
    cfg = small_pipeline_config(data_path=str(path))
    ds, table = load_data(cfg)
    assert ds.equals(small_data[0])


def test_default_profile_dim_sweep_is_flat(default_trained):
    # the benchmark N grid scaled to D = 64 (N / 1536 * 64), plus the one valid default-grid value 32
    rows = sweep_dim(default_trained.config, [1, 3, 5, 11, 16, 21, 32], trained=default_trained)
    vals = [r["auroc"] for r in rows]
    assert max(vals) - min(vals) <= 0.05
