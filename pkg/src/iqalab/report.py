"""Rendered reports: delimited data files with matplotlib figures beside them.

Every figure has a data-file twin (CSV or JSON) carrying the exact
numbers, so downstream tooling never has to scrape pixels.  Rendering
uses the Agg backend and writes PNGs without timestamp metadata, keeping
rerun outputs byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .harness import ExperimentSummary, SplitReport, residual_report  # noqa: E402
from .metrics import MetricReport  # noqa: E402

FIGURE_DPI = 110
_SAVE_KWARGS = {"dpi": FIGURE_DPI, "format": "png",
                "metadata": {"Software": "iqalab"}}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def write_json(payload: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def write_jsonl(records, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


# --- residual diagnostics -------------------------------------------------------


def residual_figures(split_report: SplitReport, out_dir) -> dict:
    """Residual CSVs plus bar/box/scatter/normal-probability figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = residual_report(split_report, out)
    res = np.array([r[3] for r in split_report.residuals])
    truth = np.array([r[1] for r in split_report.residuals])

    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(np.arange(res.size), res, color="#4878d0")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("test image index")
    ax.set_ylabel("residual")
    paths["bar_png"] = _save(fig, out / "residual_bar.png")

    fig, ax = plt.subplots(figsize=(3, 4))
    ax.boxplot(res, showfliers=True)
    ax.set_ylabel("residual")
    ax.set_xticklabels(["test split"])
    paths["box_png"] = _save(fig, out / "residual_box.png")

    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(truth, res, s=14, color="#4878d0")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("subjective score")
    ax.set_ylabel("residual")
    paths["scatter_png"] = _save(fig, out / "residual_scatter.png")

    rows = np.loadtxt(paths["probability"], delimiter=",", skiprows=2)
    rows = np.atleast_2d(rows)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(rows[:, 0], rows[:, 1], s=14, color="#4878d0")
    span = np.array([rows[:, 0].min(), rows[:, 0].max()])
    # a normally distributed sample tracks the line mean + std * quantile
    ax.plot(span, res.mean() + res.std() * span, color="gray", linewidth=0.8)
    ax.set_xlabel("standard normal quantile")
    ax.set_ylabel("sorted residual")
    paths["probability_png"] = _save(fig, out / "residual_probability.png")
    return paths


# --- experiment summaries ----------------------------------------------------------


def experiment_files(summary: ExperimentSummary, out_dir) -> dict:
    """summary.json plus one histogram figure per metric."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"summary": Path(out / "summary.json")}
    paths["summary"].write_text(summary.to_json() + "\n")
    for name, hist in summary.histograms.items():
        edges = np.asarray(hist["edges"])
        counts = np.asarray(hist["counts"])
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge",
               color="#4878d0", edgecolor="white")
        ax.set_xlabel(name)
        ax.set_ylabel("splits")
        med = summary.metrics[name]["median"]
        ax.axvline(med, color="black", linewidth=0.9, linestyle="--")
        fig.tight_layout()
        paths[f"hist_{name}"] = _save(fig, out / f"hist_{name}.png")
    return paths


def training_files(log: list, out_dir, stem: str = "training") -> dict:
    """JSON-lines training log plus a loss/validation curve figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"log": write_jsonl(log, out / f"{stem}_log.jsonl")}
    epochs = [rec["epoch"] for rec in log]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(epochs, [rec["train_loss"] for rec in log], marker="o",
            label="train loss")
    val = [(rec["epoch"], rec["val_rmse"]) for rec in log
           if rec.get("val_rmse") is not None]
    if val:
        ax.plot([e for e, _ in val], [v for _, v in val], marker="s",
                label="validation rmse")
    ax.set_xlabel("epoch")
    ax.set_ylabel("value")
    ax.legend()
    fig.tight_layout()
    paths["curve"] = _save(fig, out / f"{stem}_curve.png")
    return paths


# --- single evaluations --------------------------------------------------------------


def evaluation_files(report: MetricReport, pairs, out_dir) -> dict:
    """Prediction CSV, metric JSON, correlation scatter, and pwrc curve.

    pairs: iterable of (image id, subjective score, predicted score).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = list(pairs)
    paths = {"report": write_json(report.to_dict(), out / "report.json")}

    pred_path = out / "predictions.csv"
    with open(pred_path, "w", newline="") as fh:
        fh.write("image,subjective,predicted\n")
        for img, ys, yp in pairs:
            fh.write(f"{img},{ys!r},{yp!r}\n")
    paths["predictions"] = pred_path

    ys = np.array([p[1] for p in pairs])
    yp = np.array([p[2] for p in pairs])
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(ys, yp, s=14, color="#4878d0")
    ax.plot([0, 1], [0, 1], color="gray", linewidth=0.8)
    ax.set_xlabel("subjective score")
    ax.set_ylabel("predicted score")
    ax.set_title(f"plcc={report.plcc:.4f} srocc={report.srocc:.4f}")
    fig.tight_layout()
    paths["scatter_png"] = _save(fig, out / "correlation_scatter.png")

    curve_path = out / "pwrc_curve.csv"
    report.write_curve_csv(curve_path)
    paths["pwrc_curve"] = curve_path
    if report.pwrc_curve:
        ts = [t for t, _ in report.pwrc_curve]
        ss = [s for _, s in report.pwrc_curve]
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(ts, ss)
        ax.set_xlabel("threshold T")
        ax.set_ylabel("S(T)")
        fig.tight_layout()
        paths["pwrc_png"] = _save(fig, out / "pwrc_curve.png")
    return paths


# --- ablation comparisons --------------------------------------------------------------


def ablation_files(results: dict, out_dir) -> dict:
    """Per-variant summaries plus a median-comparison table and figure.

    results: variant name -> (ExperimentSummary, [SplitReport]).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    variants = list(results)
    metric_names = None
    for variant, (summary, _) in results.items():
        paths[f"summary_{variant}"] = Path(out / f"summary_{variant}.json")
        paths[f"summary_{variant}"].write_text(summary.to_json() + "\n")
        if metric_names is None:
            metric_names = list(summary.metrics)

    table_path = out / "ablation_medians.csv"
    with open(table_path, "w", newline="") as fh:
        fh.write("variant," + ",".join(metric_names) + "\n")
        for variant in variants:
            summary = results[variant][0]
            row = [repr(summary.metrics[m]["median"]) for m in metric_names]
            fh.write(variant + "," + ",".join(row) + "\n")
    paths["medians"] = table_path

    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(variants))
    width = 0.8 / len(metric_names)
    for k, m in enumerate(metric_names):
        vals = [results[v][0].metrics[m]["median"] for v in variants]
        ax.bar(x + k * width, vals, width=width, label=m)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(variants, rotation=20)
    ax.set_ylabel("median over splits")
    ax.legend(fontsize=8)
    fig.tight_layout()
    paths["medians_png"] = _save(fig, out / "ablation_medians.png")
    return paths


# --- subjective-score views -------------------------------------------------------------


def mos_histogram_figure(counts, edges, out_dir, stem: str = "mos_histogram") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = np.asarray(counts)
    edges = np.asarray(edges)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge",
           color="#4878d0", edgecolor="none")
    ax.set_xlabel("mean opinion score")
    ax.set_ylabel("images")
    fig.tight_layout()
    return _save(fig, out / f"{stem}.png")
