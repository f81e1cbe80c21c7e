"""iqalab: a desk-scale blind image quality assessment workbench.

Submodules are imported on first attribute access so that the command
line can configure BLAS thread caps via environment variables before
numpy is loaded.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "rng": ["RngStream", "mix"],
    "raster": ["Raster", "load_image", "save_image", "random_crop",
               "center_crop", "augment"],
    "metrics": ["MetricReport", "PwrcParams", "evaluate_pair", "normalize_scores",
                "plcc", "srocc", "pwrc", "rmse"],
    "synth": ["make_source_images"],
    "distort": ["DistortionSpec", "generate_corpus", "read_corpus_manifest",
                "catalogue"],
    "mos": ["Rating", "RatingTable", "aggregate", "screen_outliers",
            "mos_histogram"],
    "ensemble": ["ConvSpec", "EnsembleConfig", "EnsembleModel", "build",
                 "pretrain", "transfer_to_regressor", "finetune",
                 "predict_image", "ablate", "ablated_config", "save_model",
                 "load_model"],
    "harness": ["Manifest", "SampleRecord", "load_manifest", "split",
                "run_experiment", "cross_dataset", "ablation_sweep",
                "t_test_superiority", "ExperimentOptions"],
    "service": ["RatingService", "build_app", "ACR_LABEL_SCORES"],
}

_ATTR_TO_MODULE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_ATTR_TO_MODULE) + ["__version__"]


def __getattr__(name):
    module_name = _ATTR_TO_MODULE.get(name)
    if module_name is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    module = importlib.import_module(f".{module_name}", __name__)
    return getattr(module, name)


def __dir__():
    return __all__
