"""Experiment orchestration: manifests, splits, repeats, significance.

A Manifest is a list of (path, mos) records with scores normalized to
[0, 1].  `run_experiment` repeats the split/train/evaluate pipeline with
derived seeds and reports median/mean/min/max per metric over the
completed splits; per-split failures are recorded, not raised.
`ablation_sweep` runs the same experiment per architecture variant with
shared split seeds, so variant comparisons are paired.
`cross_dataset` trains on concatenated manifests and evaluates on a
disjoint one; train/test path overlap is a hard error, and the same
leakage assertion also guards every ordinary split.

Significance of "is this sample of correlations better than a baseline"
is a one-sample one-sided t test; its p-value comes from the regularized
incomplete beta function implemented here by continued fraction.

Box-plot quartiles use linear interpolation (type 7); normal-probability
plotting positions are (i - 0.5) / n.  Both conventions are recorded in
the emitted file headers.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .ensemble import (
    EnsembleConfig,
    ablated_config,
    build,
    finetune,
    load_model,
    predict_image,
    transfer_to_regressor,
)
from .errors import (
    ConfigError,
    DegenerateInputError,
    DuplicatePathError,
    EmptySourceError,
    IqaError,
    LeakageError,
    ManifestError,
    MissingFileError,
    RangeError,
)
from .metrics import MetricReport, PwrcParams, evaluate_pair, normalize_scores
from .net import LrSchedule
from .raster import load_image
from .rng import RngStream, mix

MANIFEST_HEADER = ("path", "score")
QUARTILE_RULE = "linear interpolation (type 7)"
PLOTTING_POSITIONS = "(i - 0.5) / n"
METRIC_NAMES = ("rmse", "plcc", "srocc", "pwrc")


@dataclass(frozen=True)
class SampleRecord:
    path: str
    mos: float
    variance: float | None = None
    split: str | None = None


@dataclass(frozen=True)
class Manifest:
    dataset: str
    records: tuple

    def __post_init__(self):
        for rec in self.records:
            if not 0.0 <= rec.mos <= 1.0:
                raise RangeError(f"MOS must be in [0, 1], got {rec.mos} for {rec.path}")
        paths = [rec.path for rec in self.records]
        if len(set(paths)) != len(paths):
            dupes = sorted({p for p in paths if paths.count(p) > 1})
            raise DuplicatePathError(f"duplicate manifest paths: {dupes[:3]}")

    def __len__(self):
        return len(self.records)

    def paths(self) -> set:
        return {rec.path for rec in self.records}

    def scores(self) -> np.ndarray:
        return np.array([rec.mos for rec in self.records])

    def tagged(self, tag: str) -> "Manifest":
        return Manifest(self.dataset,
                        tuple(replace(r, split=tag) for r in self.records))


def manifest_from_pairs(dataset: str, pairs) -> Manifest:
    return Manifest(dataset, tuple(SampleRecord(str(p), float(s)) for p, s in pairs))


def load_manifest(path, score_lo: float, score_hi: float,
                  invert: bool = False) -> Manifest:
    """Read "path,score" CSV rows and normalize scores to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0][:2]) != MANIFEST_HEADER:
        raise ManifestError(f"expected header {','.join(MANIFEST_HEADER)} in {path}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) < 2:
            raise ManifestError(f"{path}:{lineno}: expected path,score")
        try:
            raw = float(row[1])
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: bad score {row[1]!r}") from exc
        if not score_lo <= raw <= score_hi:
            raise RangeError(
                f"{path}:{lineno}: score {raw} outside declared range "
                f"[{score_lo}, {score_hi}]")
        mos = float(normalize_scores([raw], score_lo, score_hi, invert=invert)[0])
        records.append(SampleRecord(path=row[0], mos=mos))
    return Manifest(path.stem, tuple(records))


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for rec in manifest.records:
            w.writerow([rec.path, repr(rec.mos)])


def split(manifest: Manifest, train_fraction: float, seed: int):
    """Disjoint, exhaustive (train, test) split; train size round(f * n)."""
    if not 0.0 < train_fraction < 1.0:
        raise RangeError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(manifest)
    if n < 2:
        raise DegenerateInputError(f"need at least 2 records to split, have {n}")
    n_train = int(round(train_fraction * n))
    if n_train < 1 or n_train > n - 1:
        raise DegenerateInputError(
            f"fraction {train_fraction} of {n} leaves an empty side")
    perm = RngStream(mix(seed, "split")).permutation(n)
    train_idx = sorted(perm[:n_train].tolist())
    test_idx = sorted(perm[n_train:].tolist())

    def pick(idx, tag):
        return Manifest(manifest.dataset,
                        tuple(replace(manifest.records[i], split=tag) for i in idx))

    return pick(train_idx, "train"), pick(test_idx, "test")


def assert_no_leakage(train: Manifest, test: Manifest) -> None:
    overlap = train.paths() & test.paths()
    if overlap:
        raise LeakageError(f"test paths appear in training data: {sorted(overlap)[:3]}")


# --- single split pipeline ----------------------------------------------------

@dataclass(frozen=True)
class ExperimentOptions:
    """Training and evaluation knobs for one experiment pipeline."""
    train_fraction: float = 0.8
    val_fraction: float = 0.1       # carved from the training side for the log
    epochs: int = 10
    batch_size: int = 16
    base_lr: float = 1e-3
    n_crops: int = 10
    pretrained_path: str | None = None  # classifier checkpoint to transfer from

    def schedule(self) -> LrSchedule:
        return LrSchedule(base_lr=self.base_lr)


@dataclass
class SplitReport:
    index: int
    seed: int
    report: MetricReport
    residuals: list  # (image id, y_s, y_p, y_p - y_s)
    train_log: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "seed": self.seed,
            "report": self.report.to_dict(),
            "residuals": [[i, s, p, r] for i, s, p, r in self.residuals],
        }


def _model_for_run(config: EnsembleConfig, options: ExperimentOptions, init_seed: int):
    if options.pretrained_path is None:
        # min_head_depth=1 admits the single-layer head of the drop_head variant
        return build(config, init_seed, head_kind="regressor", min_head_depth=1)
    model = load_model(options.pretrained_path)
    if model.head_kind == "classifier":
        model = transfer_to_regressor(model)
    return model


def run_split(manifest: Manifest, config: EnsembleConfig, loss: str,
              seed: int, options: ExperimentOptions, index: int = 0) -> SplitReport:
    """split -> finetune -> crop-averaged predict -> metric report."""
    train_m, test_m = split(manifest, options.train_fraction, seed)
    assert_no_leakage(train_m, test_m)
    val_n = int(round(options.val_fraction * len(train_m)))
    fit_recs, val_recs = train_m.records[val_n:], train_m.records[:val_n]
    model = _model_for_run(config, options, mix(seed, "init"))
    model = finetune(
        model,
        [(r.path, r.mos) for r in fit_recs],
        loss=loss,
        epochs=options.epochs,
        batch_size=options.batch_size,
        rng=RngStream(mix(seed, "train")),
        schedule=options.schedule(),
        validation_pairs=[(r.path, r.mos) for r in val_recs] or None,
    )
    y_s, y_p, residuals = [], [], []
    for i, rec in enumerate(test_m.records):
        pred = predict_image(model, load_image(rec.path), n_crops=options.n_crops,
                             rng=RngStream(mix(seed, "crops", i)))
        y_s.append(rec.mos)
        y_p.append(pred)
        residuals.append((rec.path, rec.mos, pred, pred - rec.mos))
    report = evaluate_pair(y_p, y_s)
    return SplitReport(index=index, seed=seed, report=report,
                       residuals=residuals, train_log=model.last_log)


# --- repeated experiment ---------------------------------------------------------

@dataclass
class ExperimentSummary:
    metrics: dict          # name -> {median, mean, min, max, values}
    histograms: dict       # name -> {edges, counts}
    metadata: dict
    failures: list         # (split index, error class, message)

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "histograms": self.histograms,
                "metadata": self.metadata,
                "failures": [[i, kind, msg] for i, kind, msg in self.failures]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def thread_count() -> int:
    """Configured BLAS/OpenMP thread cap; 0 means library default."""
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        val = os.environ.get(var)
        if val:
            return int(val)
    return 0


def _metric_values(report: MetricReport) -> dict:
    return {name: getattr(report, name) for name in METRIC_NAMES}


def summarize(reports: list, metadata: dict, failures: list,
              histogram_bins: int = 10) -> ExperimentSummary:
    if not reports:
        raise EmptySourceError("no completed splits to summarize")
    metrics = {}
    histograms = {}
    for name in METRIC_NAMES:
        values = [_metric_values(r.report)[name] for r in reports]
        arr = np.asarray(values)
        metrics[name] = {
            "median": float(np.median(arr)),
            "mean": float(arr.mean()),
            "min": float(arr.min()),
            "max": float(arr.max()),
            "values": [float(v) for v in values],
        }
        counts, edges = np.histogram(arr, bins=histogram_bins)
        histograms[name] = {"edges": edges.tolist(), "counts": counts.tolist()}
    return ExperimentSummary(metrics=metrics, histograms=histograms,
                             metadata=metadata, failures=failures)


def run_experiment(manifest: Manifest, config: EnsembleConfig, loss: str = "mse",
                   repeats: int = 10, base_seed: int = 0,
                   options: ExperimentOptions | None = None):
    """Repeated split pipeline: returns (ExperimentSummary, [SplitReport])."""
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    options = options if options is not None else ExperimentOptions()
    reports, failures, seeds = [], [], []
    for i in range(repeats):
        seed = mix(base_seed, "split", i)
        seeds.append(seed)
        try:
            reports.append(run_split(manifest, config, loss, seed, options, index=i))
        except IqaError as exc:
            failures.append((i, type(exc).__name__, str(exc)))
    metadata = {
        "dataset": manifest.dataset,
        "n_records": len(manifest),
        "repeats": repeats,
        "base_seed": base_seed,
        "split_seeds": seeds,
        "loss": loss,
        "config": config.to_dict(),
        "options": {
            "train_fraction": options.train_fraction,
            "val_fraction": options.val_fraction,
            "epochs": options.epochs,
            "batch_size": options.batch_size,
            "base_lr": options.base_lr,
            "n_crops": options.n_crops,
            "pretrained_path": options.pretrained_path,
        },
        "threads": thread_count(),
    }
    summary = summarize(reports, metadata, failures)
    return summary, reports


# --- residual analysis -------------------------------------------------------------

def quartiles_type7(values) -> tuple:
    """(q1, median, q3) by linear interpolation between order statistics."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size < 1:
        raise EmptySourceError("no values for quartiles")

    def at(q):
        pos = q * (arr.size - 1)
        lo = int(math.floor(pos))
        hi = min(lo + 1, arr.size - 1)
        frac = pos - lo
        return float(arr[lo] * (1.0 - frac) + arr[hi] * frac)

    return at(0.25), at(0.5), at(0.75)


def normal_quantiles(n: int) -> np.ndarray:
    """Standard-normal quantiles of the plotting positions (i - 0.5) / n."""
    if n < 1:
        raise EmptySourceError("need at least one residual")
    positions = (np.arange(1, n + 1) - 0.5) / n
    return ndtri(positions)


def residual_report(split_report: SplitReport, out_dir) -> dict:
    """Write residual data files for bar/box/scatter/probability plots."""
    if not split_report.residuals:
        raise EmptySourceError("split has no residuals")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    res = [r[3] for r in split_report.residuals]
    paths["residuals"] = out / "residuals.csv"
    with open(paths["residuals"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "image", "y_s", "y_p", "residual"])
        for i, (img, ys, yp, r) in enumerate(split_report.residuals):
            w.writerow([i, img, repr(ys), repr(yp), repr(r)])

    q1, med, q3 = quartiles_type7(res)
    paths["box"] = out / "residual_box.csv"
    with open(paths["box"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# quartile rule: {QUARTILE_RULE}"])
        w.writerow(["min", "q1", "median", "q3", "max"])
        w.writerow([repr(float(min(res))), repr(q1), repr(med), repr(q3),
                    repr(float(max(res)))])

    paths["scatter"] = out / "residual_scatter.csv"
    with open(paths["scatter"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y_s", "residual"])
        for _, ys, _, r in split_report.residuals:
            w.writerow([repr(ys), repr(r)])

    paths["probability"] = out / "residual_probability.csv"
    quantiles = normal_quantiles(len(res))
    with open(paths["probability"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# plotting positions: {PLOTTING_POSITIONS}"])
        w.writerow(["normal_quantile", "residual"])
        for q, r in zip(quantiles, sorted(res)):
            w.writerow([repr(float(q)), repr(float(r))])
    return paths


# --- one-sample t test ----------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    # continued fraction for the incomplete beta (modified Lentz)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise DegenerateInputError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise RangeError("beta parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise RangeError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return float(x)
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: int) -> float:
    """P(T > t) for Student's t with df degrees of freedom."""
    if df < 1:
        raise RangeError(f"degrees of freedom must be >= 1, got {df}")
    x = df / (df + t * t)
    p = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return p if t >= 0 else 1.0 - p


def t_test_superiority(sample, baseline: float, alpha: float = 0.05) -> int:
    """1 if sample mean significantly exceeds baseline, -1 if below, else 0."""
    arr = np.asarray(sample, dtype=np.float64)
    if arr.size < 2:
        raise DegenerateInputError(f"need at least 2 values, have {arr.size}")
    if not 0.0 < alpha < 1.0:
        raise RangeError(f"alpha must be in (0, 1), got {alpha}")
    sd = float(arr.std(ddof=1))
    if sd == 0.0:
        raise DegenerateInputError("sample variance is zero")
    t = (float(arr.mean()) - baseline) * math.sqrt(arr.size) / sd
    df = arr.size - 1
    if student_t_sf(t, df) < alpha:
        return 1
    if student_t_sf(-t, df) < alpha:
        return -1
    return 0


def t_statistic(sample, baseline: float) -> float:
    arr = np.asarray(sample, dtype=np.float64)
    sd = float(arr.std(ddof=1))
    if arr.size < 2 or sd == 0.0:
        raise DegenerateInputError("t statistic needs n >= 2 and nonzero variance")
    return (float(arr.mean()) - baseline) * math.sqrt(arr.size) / sd


# --- cross-dataset and ablation protocols ------------------------------------------------

def concat_manifests(manifests) -> Manifest:
    manifests = list(manifests)
    if not manifests:
        raise EmptySourceError("no training manifests")
    records = []
    for m in manifests:
        records.extend(m.records)
    name = "+".join(m.dataset for m in manifests)
    return Manifest(name, tuple(records))


def cross_dataset(train_manifests, test_manifest: Manifest, config: EnsembleConfig,
                  loss: str = "mse", seed: int = 0,
                  options: ExperimentOptions | None = None) -> SplitReport:
    """Train once on concatenated manifests, evaluate on the held-out one."""
    options = options if options is not None else ExperimentOptions()
    train_m = concat_manifests(train_manifests)
    assert_no_leakage(train_m, test_manifest)
    if not test_manifest.records:
        raise EmptySourceError("test manifest is empty")
    val_n = int(round(options.val_fraction * len(train_m)))
    fit_recs, val_recs = train_m.records[val_n:], train_m.records[:val_n]
    model = _model_for_run(config, options, mix(seed, "init"))
    model = finetune(
        model,
        [(r.path, r.mos) for r in fit_recs],
        loss=loss,
        epochs=options.epochs,
        batch_size=options.batch_size,
        rng=RngStream(mix(seed, "train")),
        schedule=options.schedule(),
        validation_pairs=[(r.path, r.mos) for r in val_recs] or None,
    )
    y_s, y_p, residuals = [], [], []
    for i, rec in enumerate(test_manifest.records):
        pred = predict_image(model, load_image(rec.path), n_crops=options.n_crops,
                             rng=RngStream(mix(seed, "crops", i)))
        y_s.append(rec.mos)
        y_p.append(pred)
        residuals.append((rec.path, rec.mos, pred, pred - rec.mos))
    return SplitReport(index=0, seed=seed, report=evaluate_pair(y_p, y_s),
                       residuals=residuals, train_log=model.last_log)


def ablation_sweep(manifest: Manifest, base_config: EnsembleConfig, variants,
                   repeats: int = 5, base_seed: int = 0, loss: str = "mse",
                   options: ExperimentOptions | None = None) -> dict:
    """run_experiment per variant with shared split seeds (paired runs)."""
    variants = list(variants)
    if not variants:
        raise ConfigError("variant list is empty")
    out = {}
    for variant in variants:
        cfg = base_config if variant == "full" else ablated_config(base_config, variant)
        out[variant] = run_experiment(manifest, cfg, loss=loss, repeats=repeats,
                                      base_seed=base_seed, options=options)
    return out
