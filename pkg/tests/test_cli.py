"""End-to-end command-line runs: artifacts, exit codes, determinism."""

import json
import os

import pytest
import yaml

from iqalab.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from iqalab.ensemble import ConvSpec, EnsembleConfig, build, load_model, save_model
from iqalab.mos import Rating, RatingTable
from iqalab.raster import save_image
from iqalab.rng import RngStream
from iqalab.synth import make_source_images

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

TINY = EnsembleConfig(
    input_size=32,
    branch_a=(ConvSpec(4, 3, stride=2),),
    branch_b=(ConvSpec(4, 5, stride=2),),
    head_widths=(8, 1),
)
FAST_TRAIN = {"epochs": 1, "batch_size": 8, "n_crops": 1,
              "model": TINY.to_dict()}


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(payload))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Sources on disk plus a generated five-level corpus (one family)."""
    root = tmp_path_factory.mktemp("cli")
    sources = root / "sources"
    sources.mkdir()
    for i, img in enumerate(make_source_images(2, 48, RngStream(42))):
        save_image(img, sources / f"src_{i}.png")

    corpus = root / "corpus"
    config = write_config(root, "distort.yaml",
                          {"sources": str(sources), "types": [1]})
    rc = main(["distort", "--config", config, "--out", str(corpus), "--seed", "5"])
    assert rc == EXIT_OK
    return root, sources, corpus


@pytest.fixture(scope="module")
def mos_manifest(workspace):
    """Manifest over the corpus images with distinct normalized scores."""
    root, _, corpus = workspace
    images = sorted(corpus.glob("*.png"))
    assert len(images) == 10
    path = root / "manifest.csv"
    rows = ["path,score"]
    rows += [f"{p},{i / 9.0!r}" for i, p in enumerate(images)]
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture(scope="module")
def finetuned_ckpt(workspace, mos_manifest):
    root, _, _ = workspace
    out = root / "finetune"
    config = write_config(root, "finetune.yaml",
                          {"manifest": str(mos_manifest), **FAST_TRAIN})
    rc = main(["finetune", "--config", config, "--out", str(out), "--seed", "3"])
    assert rc == EXIT_OK
    return out / "model.ckpt"


class TestDistort:
    def test_corpus_and_manifest_written(self, workspace):
        _, _, corpus = workspace
        assert len(list(corpus.glob("*.png"))) == 10  # 2 sources x 5 levels
        manifest = (corpus / "manifest.csv").read_text().strip().splitlines()
        assert len(manifest) == 11
        assert manifest[0] == "source,distorted,type_id,level,label,seed"

    def test_missing_sources_key_is_usage(self, workspace, tmp_path):
        config = write_config(tmp_path, "bad.yaml", {"types": [1]})
        assert main(["distort", "--config", config,
                     "--out", str(tmp_path / "o")]) == EXIT_USAGE

    def test_empty_source_dir_is_data_error(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        config = write_config(tmp_path, "c.yaml", {"sources": str(empty)})
        assert main(["distort", "--config", config,
                     "--out", str(tmp_path / "o")]) == EXIT_DATA


class TestPretrainTransferChain:
    def test_pretrain_then_transfer(self, workspace, tmp_path):
        root, _, corpus = workspace
        pre_out = tmp_path / "pretrain"
        config = write_config(tmp_path, "pretrain.yaml", {
            "corpus": str(corpus), "epochs": 1, "batch_size": 8,
            "model": {**TINY.to_dict(), "n_classes_pretrain": 5}})
        assert main(["pretrain", "--config", config,
                     "--out", str(pre_out), "--seed", "1"]) == EXIT_OK
        model = load_model(pre_out / "model.ckpt")
        assert model.head_kind == "classifier"
        assert len(model.class_labels) == 5
        assert (pre_out / "pretrain_log.jsonl").exists()
        assert (pre_out / "pretrain_curve.png").read_bytes()[:8] == PNG_MAGIC

        tr_out = tmp_path / "transfer"
        tconfig = write_config(tmp_path, "transfer.yaml",
                               {"model": str(pre_out / "model.ckpt")})
        assert main(["transfer", "--config", tconfig,
                     "--out", str(tr_out)]) == EXIT_OK
        transferred = load_model(tr_out / "model.ckpt")
        assert transferred.head_kind == "regressor"
        assert transferred.provenance[-1] == "transfer(regression head)"

    def test_finetune_from_pretrained_checkpoint(self, workspace, mos_manifest,
                                                 tmp_path):
        clf = build(EnsembleConfig.from_dict(
            {**TINY.to_dict(), "n_classes_pretrain": 5}), 9, "classifier")
        ckpt = tmp_path / "clf.ckpt"
        save_model(clf, ckpt)
        config = write_config(tmp_path, "ft.yaml", {
            "manifest": str(mos_manifest), "epochs": 1, "batch_size": 8,
            "pretrained_path": str(ckpt)})
        out = tmp_path / "ft"
        assert main(["finetune", "--config", config, "--out", str(out)]) == EXIT_OK
        model = load_model(out / "model.ckpt")
        assert model.head_kind == "regressor"
        assert any(p.startswith("finetuned(") for p in model.provenance)


class TestFinetuneAndEvaluate:
    def test_finetune_artifacts(self, finetuned_ckpt):
        model = load_model(finetuned_ckpt)
        assert model.head_kind == "regressor"
        out = finetuned_ckpt.parent
        assert (out / "finetune_log.jsonl").exists()
        assert (out / "finetune_curve.png").read_bytes()[:8] == PNG_MAGIC

    def test_bad_loss_is_usage_error(self, workspace, mos_manifest, tmp_path):
        config = write_config(tmp_path, "bad.yaml", {
            "manifest": str(mos_manifest), "loss": "cross_entropy", **FAST_TRAIN})
        assert main(["finetune", "--config", config,
                     "--out", str(tmp_path / "o")]) == EXIT_USAGE

    def test_evaluate_writes_reports(self, workspace, mos_manifest,
                                     finetuned_ckpt, tmp_path):
        root, _, _ = workspace
        out = tmp_path / "eval"
        config = write_config(tmp_path, "eval.yaml", {
            "manifest": str(mos_manifest), "model": str(finetuned_ckpt),
            "n_crops": 2})
        assert main(["evaluate", "--config", config, "--out", str(out),
                     "--seed", "2"]) == EXIT_OK
        rows = (out / "predictions.csv").read_text().strip().splitlines()
        assert len(rows) == 11
        report = json.loads((out / "report.json").read_text())
        assert set(report) >= {"rmse", "plcc", "srocc", "pwrc"}
        for png in ("correlation_scatter.png", "pwrc_curve.png"):
            assert (out / png).read_bytes()[:8] == PNG_MAGIC

    def test_constant_scores_exit_numeric(self, workspace, finetuned_ckpt,
                                          tmp_path):
        _, _, corpus = workspace
        images = sorted(corpus.glob("*.png"))[:4]
        manifest = tmp_path / "const.csv"
        manifest.write_text("path,score\n" +
                            "".join(f"{p},0.5\n" for p in images))
        config = write_config(tmp_path, "c.yaml", {
            "manifest": str(manifest), "model": str(finetuned_ckpt),
            "n_crops": 1})
        assert main(["evaluate", "--config", config,
                     "--out", str(tmp_path / "o")]) == EXIT_NUMERIC

    def test_missing_manifest_is_data_error(self, finetuned_ckpt, tmp_path):
        config = write_config(tmp_path, "c.yaml", {
            "manifest": str(tmp_path / "nope.csv"), "model": str(finetuned_ckpt)})
        assert main(["evaluate", "--config", config,
                     "--out", str(tmp_path / "o")]) == EXIT_DATA


class TestExperimentCommands:
    def test_experiment_outputs_and_determinism(self, mos_manifest, tmp_path):
        config = write_config(tmp_path, "exp.yaml", {
            "manifest": str(mos_manifest), "repeats": 2, **FAST_TRAIN})
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["experiment", "--config", config, "--out", str(out_a),
                     "--seed", "11"]) == EXIT_OK
        assert main(["experiment", "--config", config, "--out", str(out_b),
                     "--seed", "11"]) == EXIT_OK
        summary_a = (out_a / "summary.json").read_bytes()
        assert summary_a == (out_b / "summary.json").read_bytes()
        decoded = json.loads(summary_a)
        assert decoded["metadata"]["repeats"] == 2
        assert (out_a / "split_00" / "residuals.csv").exists()
        assert (out_a / "split_00" / "residual_bar.png").exists()
        assert (out_a / "split_01" / "residuals.csv").exists()
        for name in ("rmse", "plcc", "srocc", "pwrc"):
            assert (out_a / f"hist_{name}.png").read_bytes()[:8] == PNG_MAGIC

    def test_crossval(self, workspace, mos_manifest, tmp_path):
        rows = mos_manifest.read_text().strip().splitlines()
        train_csv = tmp_path / "train.csv"
        test_csv = tmp_path / "test.csv"
        train_csv.write_text("\n".join(rows[:7]) + "\n")
        test_csv.write_text("\n".join([rows[0]] + rows[7:]) + "\n")
        config = write_config(tmp_path, "cv.yaml", {
            "train": [str(train_csv)], "test": str(test_csv), **FAST_TRAIN})
        out = tmp_path / "cv"
        assert main(["crossval", "--config", config, "--out", str(out)]) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert set(report) >= {"rmse", "plcc", "srocc", "pwrc"}
        assert (out / "residual_probability.png").exists()

    def test_ablate(self, mos_manifest, tmp_path):
        config = write_config(tmp_path, "ab.yaml", {
            "manifest": str(mos_manifest), "repeats": 1,
            "variants": ["full", "drop_head"], **FAST_TRAIN})
        out = tmp_path / "ab"
        assert main(["ablate", "--config", config, "--out", str(out)]) == EXIT_OK
        rows = (out / "ablation_medians.csv").read_text().strip().splitlines()
        assert {r.split(",")[0] for r in rows[1:]} == {"full", "drop_head"}
        assert (out / "summary_full.json").exists()
        assert (out / "summary_drop_head.json").exists()
        assert (out / "ablation_medians.png").read_bytes()[:8] == PNG_MAGIC


class TestMosCommand:
    def test_aggregate_screen_histogram(self, tmp_path):
        ratings = []
        for img in range(6):
            base = img / 10 + 0.2
            for k, obs in enumerate(("o1", "o2", "o3", "o4", "o5")):
                ratings.append(Rating(f"im{img}", obs,
                                      min(1.0, base + 0.01 * k), float(img)))
        csv_path = tmp_path / "ratings.csv"
        RatingTable(ratings).write_csv(csv_path)
        config = write_config(tmp_path, "mos.yaml", {"ratings": str(csv_path)})
        out = tmp_path / "mos"
        assert main(["mos", "--config", config, "--out", str(out)]) == EXIT_OK
        mos_rows = (out / "mos.csv").read_text().strip().splitlines()
        assert mos_rows[0] == "image_id,mos,variance,n_raters"
        assert len(mos_rows) == 7
        assert json.loads((out / "rejected.json").read_text()) == {
            "rejected_observers": []}
        assert (out / "histogram.csv").exists()
        assert (out / "mos_histogram.png").read_bytes()[:8] == PNG_MAGIC

    def test_too_few_observers_is_numeric(self, tmp_path):
        table = RatingTable([Rating("im0", "o1", 0.5, 0.0),
                             Rating("im0", "o2", 0.6, 0.0)])
        csv_path = tmp_path / "r.csv"
        table.write_csv(csv_path)
        config = write_config(tmp_path, "m.yaml", {"ratings": str(csv_path)})
        assert main(["mos", "--config", config,
                     "--out", str(tmp_path / "o")]) == EXIT_NUMERIC


class TestServeAndGradcheck:
    def test_serve_check(self, workspace, tmp_path):
        _, sources, _ = workspace
        config = write_config(tmp_path, "serve.yaml", {
            "image_sets": {"default": str(sources)},
            "state_dir": str(tmp_path / "state")})
        assert main(["serve", "--config", config, "--check",
                     "--out", str(tmp_path / "srv")]) == EXIT_OK

    def test_gradcheck_passes(self, capsys):
        assert main(["gradcheck"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "checks passed" in out
        assert "FAIL" not in out


class TestUsageAndFlags:
    def test_no_command(self):
        assert main([]) == EXIT_USAGE

    def test_unknown_command(self):
        assert main(["bogus"]) == EXIT_USAGE

    def test_help_exits_zero(self):
        assert main(["--help"]) == EXIT_OK

    def test_missing_required_config_key(self, tmp_path):
        config = write_config(tmp_path, "empty.yaml", {})
        assert main(["evaluate", "--config", config,
                     "--out", str(tmp_path / "o")]) == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        assert main(["evaluate", "--config", str(tmp_path / "nope.yaml"),
                     "--out", str(tmp_path / "o")]) == EXIT_DATA

    def test_threads_flag_sets_env(self, tmp_path):
        saved = {var: os.environ.get(var) for var in
                 ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")}
        try:
            for var in saved:
                os.environ.pop(var, None)
            config = write_config(tmp_path, "empty.yaml", {})
            main(["evaluate", "--config", config, "--threads", "2",
                  "--out", str(tmp_path / "o")])
            for var in saved:
                assert os.environ[var] == "2"
        finally:
            for var, value in saved.items():
                if value is None:
                    os.environ.pop(var, None)
                else:
                    os.environ[var] = value

    def test_bad_threads_value(self):
        assert main(["gradcheck", "--threads", "0"]) == EXIT_USAGE
