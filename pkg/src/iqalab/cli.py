"""Command line for the workbench.

    iqalab <command> [--config run.yaml] [--seed N] [--threads N] [--out DIR]

Commands: distort, pretrain, transfer, finetune, evaluate, experiment,
crossval, ablate, mos, serve, gradcheck.  Exit codes: 0 success, 1 usage
error, 2 data error, 3 numeric failure.

The config file is YAML with one mapping per run; every command reads
its own keys (documented in the README schema table) and ignores the
rest.  `--threads` caps BLAS/OpenMP pools by exporting the usual
environment variables before numpy is first imported, which is why all
numeric imports in this module happen inside the command handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml

THREAD_ENV_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4


# --- config helpers ---------------------------------------------------------------


def _load_config(path) -> dict:
    from .errors import ConfigError, MissingFileError

    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise MissingFileError(f"config file not found: {p}")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return data


def _require(config: dict, key: str):
    from .errors import ConfigError

    if key not in config:
        raise ConfigError(f"config key {key!r} is required for this command")
    return config[key]


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path(f"iqalab-{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest_from(spec):
    """Manifest from a config entry: a CSV path or {path, score_range, invert}."""
    from .errors import ConfigError
    from .harness import load_manifest

    if isinstance(spec, str):
        spec = {"path": spec}
    if not isinstance(spec, dict) or "path" not in spec:
        raise ConfigError("manifest entries need a 'path' (and optional "
                          "'score_range' [lo, hi] and 'invert')")
    lo, hi = spec.get("score_range", [0.0, 1.0])
    return load_manifest(spec["path"], float(lo), float(hi),
                         invert=bool(spec.get("invert", False)))


def _model_config(config: dict):
    from .ensemble import EnsembleConfig

    if isinstance(config.get("model"), dict):
        return EnsembleConfig.from_dict(config["model"])
    return EnsembleConfig()


def _experiment_options(config: dict):
    from .harness import ExperimentOptions

    fields = ("train_fraction", "val_fraction", "epochs", "batch_size",
              "base_lr", "n_crops", "pretrained_path")
    kwargs = {k: config[k] for k in fields if k in config}
    return ExperimentOptions(**kwargs)


# --- commands -------------------------------------------------------------------


def cmd_distort(args, config: dict) -> int:
    from .distort import NUM_LEVELS, DistortionSpec, generate_corpus

    out = _out_dir(args)
    sources = _require(config, "sources")
    specs = None
    if "types" in config:
        specs = tuple(DistortionSpec(int(t), lvl)
                      for t in config["types"]
                      for lvl in range(1, NUM_LEVELS + 1))
    manifest = generate_corpus(sources, out, specs=specs, base_seed=args.seed)
    manifest.write_csv()
    print(f"distort: wrote {len(manifest.entries)} images to {out} "
          f"({len(manifest.failures)} failures)")
    return EXIT_OK


def _open_corpus(corpus_dir):
    from .distort import MANIFEST_NAME, CorpusManifest, read_corpus_manifest

    corpus_dir = Path(corpus_dir)
    entries = read_corpus_manifest(corpus_dir / MANIFEST_NAME)
    return CorpusManifest(out_dir=corpus_dir, entries=entries, failures=[])


def cmd_pretrain(args, config: dict) -> int:
    from dataclasses import replace

    from .ensemble import build, pretrain, save_model
    from .net import LrSchedule
    from .report import training_files
    from .rng import RngStream, mix

    out = _out_dir(args)
    corpus = _open_corpus(_require(config, "corpus"))
    n_classes = len({e.spec.label for e in corpus.entries})
    cfg = _model_config(config)
    if "model" not in config:
        cfg = replace(cfg, n_classes_pretrain=n_classes)
    model = build(cfg, mix(args.seed, "init"), head_kind="classifier")
    pretrain(model, corpus,
             epochs=int(config.get("epochs", 20)),
             batch_size=int(config.get("batch_size", 16)),
             rng=RngStream(mix(args.seed, "train")),
             schedule=LrSchedule(base_lr=float(config.get("base_lr", 1e-3))))
    ckpt = save_model(model, out / "model.ckpt")
    training_files(model.last_log, out, stem="pretrain")
    print(f"pretrain: {len(corpus.entries)} images, {n_classes} classes, "
          f"final loss {model.last_log[-1]['train_loss']:.4f} -> {ckpt}")
    return EXIT_OK


def cmd_transfer(args, config: dict) -> int:
    from .ensemble import load_model, save_model, transfer_to_regressor

    out = _out_dir(args)
    model = load_model(_require(config, "model"))
    model = transfer_to_regressor(model)
    ckpt = save_model(model, out / "model.ckpt")
    print(f"transfer: {model.provenance[-1]} -> {ckpt}")
    return EXIT_OK


def cmd_finetune(args, config: dict) -> int:
    from .ensemble import build, finetune, load_model, save_model, transfer_to_regressor
    from .harness import split
    from .net import LrSchedule
    from .report import training_files
    from .rng import RngStream, mix

    out = _out_dir(args)
    manifest = _manifest_from(_require(config, "manifest"))
    val_fraction = float(config.get("val_fraction", 0.1))
    if val_fraction > 0.0:
        train_m, val_m = split(manifest, 1.0 - val_fraction, mix(args.seed, "val"))
        val_pairs = [(r.path, r.mos) for r in val_m.records]
    else:
        train_m, val_pairs = manifest, None

    if "pretrained_path" in config:
        model = load_model(config["pretrained_path"])
        if model.head_kind == "classifier":
            model = transfer_to_regressor(model)
    else:
        model = build(_model_config(config), mix(args.seed, "init"),
                      head_kind="regressor")

    finetune(model, [(r.path, r.mos) for r in train_m.records],
             loss=config.get("loss", "mse"),
             epochs=int(config.get("epochs", 20)),
             batch_size=int(config.get("batch_size", 16)),
             rng=RngStream(mix(args.seed, "train")),
             schedule=LrSchedule(base_lr=float(config.get("base_lr", 1e-3))),
             validation_pairs=val_pairs,
             huber_delta=float(config.get("huber_delta", 1.0)))
    ckpt = save_model(model, out / "model.ckpt")
    training_files(model.last_log, out, stem="finetune")
    last = model.last_log[-1]
    val_part = (f", val rmse {last['val_rmse']:.4f}"
                if last.get("val_rmse") is not None else "")
    print(f"finetune: {len(train_m)} samples, final loss "
          f"{last['train_loss']:.4f}{val_part} -> {ckpt}")
    return EXIT_OK


def cmd_evaluate(args, config: dict) -> int:
    from .ensemble import load_model, predict_image
    from .metrics import evaluate_pair
    from .raster import load_image
    from .report import evaluation_files
    from .rng import RngStream, mix

    out = _out_dir(args)
    manifest = _manifest_from(_require(config, "manifest"))
    model = load_model(_require(config, "model"))
    n_crops = int(config.get("n_crops", 10))
    pairs = []
    for i, rec in enumerate(manifest.records):
        pred = predict_image(model, load_image(rec.path), n_crops=n_crops,
                             rng=RngStream(mix(args.seed, "crops", i)))
        pairs.append((rec.path, rec.mos, pred))
    report = evaluate_pair([p[2] for p in pairs], [p[1] for p in pairs])
    evaluation_files(report, pairs, out)
    print(f"evaluate: n={len(pairs)} rmse={report.rmse:.4f} "
          f"plcc={report.plcc:.4f} srocc={report.srocc:.4f} "
          f"pwrc={report.pwrc:.4f} -> {out}")
    return EXIT_OK


def cmd_experiment(args, config: dict) -> int:
    from .harness import run_experiment
    from .report import experiment_files, residual_figures, residual_report

    out = _out_dir(args)
    manifest = _manifest_from(_require(config, "manifest"))
    summary, reports = run_experiment(
        manifest, _model_config(config),
        loss=config.get("loss", "mse"),
        repeats=int(config.get("repeats", 10)),
        base_seed=args.seed,
        options=_experiment_options(config))
    experiment_files(summary, out)
    for i, sr in enumerate(reports):
        split_dir = out / f"split_{sr.index:02d}"
        if i == 0:
            residual_figures(sr, split_dir)
        else:
            residual_report(sr, split_dir)
    med = {k: summary.metrics[k]["median"] for k in summary.metrics}
    print(f"experiment: {len(reports)} splits ({len(summary.failures)} failed), "
          f"median rmse={med['rmse']:.4f} plcc={med['plcc']:.4f} "
          f"srocc={med['srocc']:.4f} pwrc={med['pwrc']:.4f} -> {out}")
    return EXIT_OK


def cmd_crossval(args, config: dict) -> int:
    from .harness import cross_dataset
    from .report import residual_figures, write_json

    out = _out_dir(args)
    train = [_manifest_from(spec) for spec in _require(config, "train")]
    test = _manifest_from(_require(config, "test"))
    sr = cross_dataset(train, test, _model_config(config),
                       loss=config.get("loss", "mse"), seed=args.seed,
                       options=_experiment_options(config))
    write_json(sr.report.to_dict(), out / "report.json")
    residual_figures(sr, out)
    print(f"crossval: trained on {'+'.join(m.dataset for m in train)}, "
          f"tested on {test.dataset}: plcc={sr.report.plcc:.4f} "
          f"srocc={sr.report.srocc:.4f} -> {out}")
    return EXIT_OK


def cmd_ablate(args, config: dict) -> int:
    from .ensemble import ABLATION_VARIANTS
    from .harness import ablation_sweep
    from .report import ablation_files

    out = _out_dir(args)
    manifest = _manifest_from(_require(config, "manifest"))
    variants = tuple(config.get("variants", ("full",) + ABLATION_VARIANTS))
    results = ablation_sweep(manifest, _model_config(config), variants,
                             repeats=int(config.get("repeats", 5)),
                             base_seed=args.seed,
                             loss=config.get("loss", "mse"),
                             options=_experiment_options(config))
    ablation_files(results, out)
    parts = [f"{v}={results[v][0].metrics['plcc']['median']:.4f}"
             for v in variants]
    print("ablate: median plcc " + " ".join(parts) + f" -> {out}")
    return EXIT_OK


def cmd_mos(args, config: dict) -> int:
    from .mos import (
        DEFAULT_BINS,
        RatingTable,
        aggregate,
        histogram_edges,
        mos_histogram,
        screen_outliers,
        write_histogram_csv,
        write_mos_csv,
    )
    from .report import mos_histogram_figure, write_json

    out = _out_dir(args)
    table = RatingTable.read_csv(_require(config, "ratings"))
    rejected = []
    if config.get("screen", True):
        kwargs = {k: config[k] for k in
                  ("z_threshold", "correlation_floor", "z_fraction")
                  if k in config}
        table, rejected = screen_outliers(table, **kwargs)
    records = aggregate(table)
    bins = int(config.get("bins", DEFAULT_BINS))
    write_mos_csv(records, out / "mos.csv")
    write_histogram_csv(records, out / "histogram.csv", bins=bins)
    mos_histogram_figure(mos_histogram(records, bins=bins),
                         histogram_edges(bins), out)
    write_json({"rejected_observers": rejected}, out / "rejected.json")
    print(f"mos: {len(records)} images from {len(table.observer_ids)} observers "
          f"({len(rejected)} rejected) -> {out}")
    return EXIT_OK


def cmd_serve(args, config: dict) -> int:
    from .service import RatingService, build_app

    out = _out_dir(args)
    state_dir = Path(config.get("state_dir", out / "state"))
    service = RatingService(state_dir)
    image_sets = _require(config, "image_sets")
    for name, directory in image_sets.items():
        ids = service.register_image_set(name, directory)
        print(f"serve: registered set {name!r} with {len(ids)} images")
    app = build_app(service)
    if args.check:
        print(f"serve: ready (state in {state_dir}); --check requested, "
              f"not binding a port")
        return EXIT_OK
    import uvicorn

    uvicorn.run(app, host=config.get("host", "127.0.0.1"),
                port=int(config.get("port", 8571)), log_level="warning")
    return EXIT_OK


def _gradcheck_battery(seed: int):
    """(name, max relative error) for every layer, loss, and fuse mode."""
    import numpy as np

    from .ensemble import ConvSpec, EnsembleConfig, EnsembleModel
    from .net import (
        LOSS_KINDS,
        Conv2D,
        Dense,
        Dropout,
        GlobalAvgPool,
        ReLU,
        Softmax,
        finite_difference,
        grad_check_layer,
        loss_value_and_grad,
        relative_error,
    )
    from .rng import RngStream, mix

    rng = RngStream(mix(seed, "gradcheck"))
    results = []

    def margin_values(shape, lo=0.2, hi=0.9):
        # keep magnitudes away from relu/huber/mae kinks
        vals = rng.uniform(lo, hi, shape)
        signs = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
        return vals * signs

    layers = [
        ("dense", Dense(6, 4, rng=rng.child("d"), dtype=np.float64),
         rng.normal(size=(3, 6)), "eval"),
        ("conv_stride", Conv2D(3, 4, 3, stride=2, padding="same",
                               rng=rng.child("c1"), dtype=np.float64),
         rng.normal(size=(2, 3, 8, 8)), "eval"),
        ("conv_dilated", Conv2D(2, 3, 3, dilation=2, padding="valid",
                                rng=rng.child("c2"), dtype=np.float64),
         rng.normal(size=(2, 2, 9, 9)), "eval"),
        ("relu", ReLU(), margin_values((4, 5)), "eval"),
        ("global_avg_pool", GlobalAvgPool(), rng.normal(size=(2, 3, 4, 4)), "eval"),
        ("dropout_train", Dropout(0.5), rng.normal(size=(4, 6)), "train"),
        ("softmax", Softmax(), rng.normal(size=(3, 5)), "eval"),
    ]
    for name, layer, x, mode in layers:
        layer_rng = rng.child("mask", name) if mode == "train" else None
        report = grad_check_layer(layer, x, mode=mode, rng=layer_rng)
        results.append((name, max(report.values())))

    pred_1d = rng.uniform(0.2, 0.45, (12,))
    target_1d = rng.uniform(0.55, 0.8, (12,))
    logits = rng.normal(size=(4, 5))
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    onehot = np.eye(5)[rng.integers(0, 5, size=4)]
    for kind in LOSS_KINDS:
        if kind == "cross_entropy":
            p, target = probs.copy(), onehot
        else:
            p, target = pred_1d.copy(), target_1d

        def scalar():
            return loss_value_and_grad(kind, p, target)[0]

        _, grad = loss_value_and_grad(kind, p, target)
        err = relative_error(grad, finite_difference(scalar, p))
        results.append((f"loss_{kind}", err))

    for fuse in ("concat_then_gap", "gap_then_concat"):
        cfg = EnsembleConfig(
            input_size=12,
            branch_a=(ConvSpec(2, 3, stride=2),),
            branch_b=(ConvSpec(2, 3, stride=2),),
            fuse=fuse,
            head_widths=(4, 1),
        )
        model = EnsembleModel(cfg, "regressor", mix(seed, fuse), dtype=np.float64)
        x = rng.normal(size=(2, 3, 12, 12))
        out0, trace = model.forward(x, mode="eval")
        probe = np.cos(np.arange(out0.size, dtype=np.float64) * 0.7311)
        probe = probe.reshape(out0.shape)
        grads = model.backward(trace, probe)
        worst = 0.0
        for pname, arr in model.parameters().items():
            def scalar():
                y, _ = model.forward(x, mode="eval")
                return float(np.sum(y * probe))

            worst = max(worst, relative_error(grads[pname],
                                              finite_difference(scalar, arr)))
        results.append((f"ensemble_{fuse}", worst))
    return results


def cmd_gradcheck(args, config: dict) -> int:
    from .errors import DegenerateInputError

    tolerance = float(config.get("tolerance", GRADCHECK_TOLERANCE))
    results = _gradcheck_battery(args.seed)
    failures = []
    for name, err in results:
        status = "ok  " if err <= tolerance else "FAIL"
        print(f"gradcheck: {status} {name:<24} max relative error {err:.3e}")
        if err > tolerance:
            failures.append(name)
    if failures:
        raise DegenerateInputError(
            f"gradient checks failed at tolerance {tolerance}: {failures}")
    print(f"gradcheck: {len(results)} checks passed at tolerance {tolerance}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------


HANDLERS = {
    "distort": cmd_distort,
    "pretrain": cmd_pretrain,
    "transfer": cmd_transfer,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "crossval": cmd_crossval,
    "ablate": cmd_ablate,
    "mos": cmd_mos,
    "serve": cmd_serve,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iqalab",
        description="Blind image-quality assessment workbench.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in HANDLERS.items():
        p = sub.add_parser(name, help=handler.__doc__)
        p.add_argument("--config", help="YAML config file for this run")
        p.add_argument("--seed", type=int, default=0,
                       help="base seed for every derived random stream")
        p.add_argument("--threads", type=int,
                       help="BLAS/OpenMP thread cap (set before numpy loads)")
        p.add_argument("--out", help="output directory")
        if name == "serve":
            p.add_argument("--check", action="store_true",
                           help="validate config and exit without serving")
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
        return EXIT_OK if code == 0 else EXIT_USAGE
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        for var in THREAD_ENV_VARS:
            os.environ[var] = str(args.threads)

    from .errors import DataError, IqaError, NumericError, UsageError

    try:
        config = _load_config(args.config)
        return args.handler(args, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except IqaError as exc:  # uncategorized library error: treat as data
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
