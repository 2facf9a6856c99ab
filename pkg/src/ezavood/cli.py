"""Command-line entry point: ``ezavood <subcommand> [options]``.

Every subcommand accepts ``--config`` (a JSON file mirroring
PipelineConfig) and ``--seed``; flags given on the command line override
file values.  Exit codes: 0 success, 2 config error, 3 data or hygiene
error, 4 numerical error.
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import io as avio
from .data import SynthConfig, split_views
from .errors import ConfigError, FormatError, HygieneError, NumericalError, ValidationError
from .metrics import roc_points, roc_to_csv
from .ood import combined_score, energy_score, residual_score
from .pipeline import (
    AUTO,
    DEFAULT_DIM_GRID,
    DEFAULT_GAMMA_GRID,
    PipelineConfig,
    RunArtifacts,
    assemble_pipeline,
    evaluate,
    fit_detector_from,
    load_data,
    run_gzsl,
    run_zsl,
    sweep_dim,
    sweep_gamma,
    train_pipeline,
    write_artifacts,
)
from .seen import forward, train_seen
from .unseen import AlignerExpert, build_unseen_expert, train_unseen

log = logging.getLogger("ezavood")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _gamma(text):
    if text == AUTO:
        return AUTO
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"gamma must be a number or 'auto', got {text!r}") from None


def _float_list(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _int_list(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _common(p):
    p.add_argument("--config", help="JSON file mirroring PipelineConfig")
    p.add_argument("--seed", type=int, help="global seed; every stage seed derives from it")
    p.add_argument("--data", help="AVF1 or CSV dataset (default: generate synthetic data)")
    p.add_argument("-v", "--verbose", action="store_true")


def _detector_flags(p):
    p.add_argument("--gamma", type=_gamma, help="residual weight, or 'auto'")
    p.add_argument("--dim-n", type=int, dest="principal_dim", help="principal subspace dimension N")
    p.add_argument("--percentile", type=float, help="training-seen percentile used as threshold")


def build_parser():
    parser = argparse.ArgumentParser(prog="ezavood", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--out", required=True, help="output path (.avf or .csv)")
    for f in dataclasses.fields(SynthConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type is bool or f.type == "bool":
            p.add_argument(flag, action="store_true", default=None)
        else:
            p.add_argument(flag, type=int if f.type in (int, "int") else float)

    p = sub.add_parser("train-seen", help="train the seen-class MLP")
    _common(p)
    p.add_argument("--out", required=True, help="AVMLP1 checkpoint path")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("train-unseen", help="train the text-aligned unseen expert")
    _common(p)
    p.add_argument("--out", required=True, help="AVALN1 checkpoint path")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("fit-detector", help="fit the subspace and calibrate the threshold")
    _common(p)
    _detector_flags(p)
    p.add_argument("--seen", required=True, help="AVMLP1 checkpoint")
    p.add_argument("--out", required=True, help="AVOOD1 bundle path")

    p = sub.add_parser("evaluate", help="route and evaluate the test split")
    _common(p)
    _detector_flags(p)
    p.add_argument("--mode", choices=("zsl", "gzsl"))
    p.add_argument("--unseen-expert", help="registered unseen-expert name")
    p.add_argument("--aupr-positive", choices=("seen", "unseen"))
    p.add_argument("--seen", help="AVMLP1 checkpoint (default: train)")
    p.add_argument("--unseen", help="AVALN1 checkpoint (default: train)")
    p.add_argument("--detector", help="AVOOD1 bundle (default: fit)")
    p.add_argument("--output-dir", help="where reports and checkpoints go")

    p = sub.add_parser("sweep-gamma", help="AUROC over a gamma grid")
    _common(p)
    p.add_argument("--dim-n", type=int, dest="principal_dim")
    p.add_argument("--grid", type=_float_list, default=list(DEFAULT_GAMMA_GRID))
    p.add_argument("--out", help="CSV output (default: stdout)")

    p = sub.add_parser("sweep-dim", help="AUROC over a principal-dimension grid")
    _common(p)
    p.add_argument("--gamma", type=_gamma)
    p.add_argument("--grid", type=_int_list, default=list(DEFAULT_DIM_GRID))
    p.add_argument("--out", help="CSV output (default: stdout)")

    p = sub.add_parser("roc", help="emit ROC points for one score")
    _common(p)
    _detector_flags(p)
    p.add_argument("--score", choices=("combined", "energy", "residual"), default="combined")
    p.add_argument("--out", help="CSV output (default: stdout)")
    return parser


def load_config(args):
    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    overrides = {}
    for name in ("seed", "gamma", "principal_dim", "percentile", "mode", "unseen_expert", "aupr_positive", "output_dir"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "data", None):
        overrides["data_path"] = args.data
    cfg = dataclasses.replace(cfg, **overrides)
    if getattr(args, "epochs", None) is not None:
        if args.command == "train-seen":
            cfg.seen_train = dataclasses.replace(cfg.seen_train, epochs=args.epochs)
        else:
            cfg.aligner = dataclasses.replace(cfg.aligner, epochs=args.epochs)
    cfg.validate()
    return cfg


def _emit(text, out):
    if out:
        Path(out).write_text(text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def _rows_csv(rows, fields):
    lines = [",".join(fields)]
    for r in rows:
        lines.append(",".join("" if r.get(f) is None else str(r.get(f)) for f in fields))
    return "\n".join(lines) + "\n"


def cmd_gen_synth(args, cfg):
    overrides = {}
    for f in dataclasses.fields(SynthConfig):
        value = getattr(args, f.name, None)
        if value is not None and f.name != "seed":
            overrides[f.name] = value
    synth = dataclasses.replace(cfg.synth, **overrides)
    cfg = dataclasses.replace(cfg, synth=synth, data_path=None)
    dataset, table = load_data(cfg)
    if args.out.endswith(".csv"):
        avio.save_csv(args.out, dataset, table)
    else:
        avio.save_features(args.out, dataset, table)
    print(f"{dataset.n_samples} samples, {dataset.n_classes} classes, D={dataset.dim} -> {args.out}")


def cmd_train_seen(args, cfg):
    dataset, _ = load_data(cfg)
    seed = cfg.seeds()[1]
    mlp = train_seen(split_views(dataset).train_seen, dataclasses.replace(cfg.seen_train, seed=seed))
    avio.save_mlp(args.out, mlp, seed, dataclasses.asdict(cfg.seen_train))
    print(f"final loss {mlp.loss_history[-1]:.6f} -> {args.out}" if mlp.loss_history else f"-> {args.out}")


def cmd_train_unseen(args, cfg):
    dataset, table = load_data(cfg)
    seed = cfg.seeds()[2]
    aligner_cfg = dataclasses.replace(cfg.aligner, seed=seed)
    params, history = train_unseen(split_views(dataset).train_seen, table, aligner_cfg)
    avio.save_aligner(args.out, params, seed, dataclasses.asdict(cfg.aligner))
    print(f"final loss {history[-1]:.6f} -> {args.out}" if history else f"-> {args.out}")


def _load_trained(args, cfg, need_unseen=True):
    """Load any checkpoints named on the command line and train the rest."""
    dataset, table = load_data(cfg)
    if not (getattr(args, "seen", None) or getattr(args, "unseen", None)):
        if need_unseen:
            return train_pipeline(cfg, dataset, table)
    views = split_views(dataset)
    if getattr(args, "seen", None):
        mlp, _ = avio.load_mlp(args.seen)
    else:
        mlp = train_seen(views.train_seen, dataclasses.replace(cfg.seen_train, seed=cfg.seeds()[1]))
    unseen = None
    if getattr(args, "unseen", None):
        params, _ = avio.load_aligner(args.unseen)
        unseen = AlignerExpert(params, table)
    elif need_unseen:
        unseen = build_unseen_expert(
            cfg.unseen_expert, views.train_seen, table, dataclasses.replace(cfg.aligner, seed=cfg.seeds()[2])
        )
    return assemble_pipeline(cfg, dataset, table, mlp, unseen)


def cmd_fit_detector(args, cfg):
    trained = _load_trained(args, cfg, need_unseen=False)
    detector = fit_detector_from(trained)
    avio.save_detector(args.out, detector)
    c = detector.config
    print(f"gamma={c.gamma!r} N={c.principal_dim} threshold={c.threshold!r} -> {args.out}")


def cmd_evaluate(args, cfg):
    if cfg.mode == "zsl":
        trained = _load_trained(args, cfg)
        report = run_zsl(cfg, trained=trained)
        print(f"acc_ZSL {100 * report.acc_ZSL:.2f}")
        return
    trained = _load_trained(args, cfg)
    if args.detector:
        detector = avio.load_detector(args.detector, avio.mlp_content_hash(trained.mlp))
        gzsl, ood, ablation = evaluate(trained, detector)
        if cfg.output_dir:
            art = RunArtifacts(gzsl, ood, ablation, detector, {}, {"config": cfg.to_dict()})
            write_artifacts(art, cfg.output_dir, trained.dataset.class_names)
    else:
        art = run_gzsl(cfg, trained=trained)
        gzsl, ood = art.gzsl, art.ood
    line = f"acc_S {100 * gzsl.acc_S:.2f}  acc_U {100 * gzsl.acc_U:.2f}  H {100 * gzsl.H:.2f}  acc_ZSL {100 * gzsl.acc_ZSL:.2f}"
    if ood is not None:
        line += f"  AUROC {100 * ood.auroc:.2f}  FPR95 {100 * ood.fpr95:.2f}  AUPR {100 * ood.aupr:.2f}"
    print(line)


def cmd_sweep_gamma(args, cfg):
    trained = _load_trained(args, cfg, need_unseen=False)
    rows = sweep_gamma(cfg, args.grid, trained=trained)
    _emit(_rows_csv(rows, ["gamma", "auroc"]), args.out)


def cmd_sweep_dim(args, cfg):
    trained = _load_trained(args, cfg, need_unseen=False)
    rows = sweep_dim(cfg, args.grid, trained=trained)
    _emit(_rows_csv(rows, ["N", "auroc", "error"]), args.out)


def cmd_roc(args, cfg):
    trained = _load_trained(args, cfg, need_unseen=False)
    detector = fit_detector_from(trained)
    ds = trained.dataset
    test = ds.split == 1
    x, seen_truth = ds.features[test], ds.seen_mask[ds.labels[test]]
    e = energy_score(forward(trained.mlp, x))
    r = residual_score(detector.subspace, x)
    s = {"energy": e, "residual": r, "combined": combined_score(e, r, detector.config.gamma)}[args.score]
    _emit(roc_to_csv(roc_points(s[seen_truth], s[~seen_truth])), args.out)


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train-seen": cmd_train_seen,
    "train-unseen": cmd_train_unseen,
    "fit-detector": cmd_fit_detector,
    "evaluate": cmd_evaluate,
    "sweep-gamma": cmd_sweep_gamma,
    "sweep-dim": cmd_sweep_dim,
    "roc": cmd_roc,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, HygieneError, FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
