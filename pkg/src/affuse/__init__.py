"""Audio-visual valence/arousal fusion model.

Multi-scale causal TCN branches per modality, cross-modal attention with
visual queries over each audio stream, and a CCC-optimized regression
head, all built on an in-package reverse-mode autodiff engine verified
against finite differences.

Submodule imports are lazy so the CLI can apply the AFFUSE_THREADS cap
before any BLAS pool spins up.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "Node": "autodiff",
    "backward": "autodiff",
    "parameter": "autodiff",
    "constant": "autodiff",
    "gradcheck": "gradcheck",
    "GradCheckReport": "gradcheck",
    "TrainConfig": "config",
    "TcnBranchConfig": "tcn",
    "receptive_field": "tcn",
    "tcn_forward": "tcn",
    "CrossModalAttention": "fusion",
    "attend": "fusion",
    "fuse_all": "fusion",
    "RegressionHead": "head",
    "head_forward": "head",
    "ccc": "metrics",
    "ccc_loss": "metrics",
    "combined_score": "metrics",
    "format_report_line": "metrics",
    "EvalReport": "metrics",
    "FeatureSequence": "data",
    "LabelSequence": "data",
    "AlignedSample": "data",
    "load_feature_file": "data",
    "write_feature_file": "data",
    "align": "data",
    "make_windows": "data",
    "eval_windows": "data",
    "fold_split": "data",
    "synth_generate": "data",
    "write_dataset": "data",
    "load_dataset": "data",
    "param_specs": "model",
    "parameter_count": "model",
    "init_params": "model",
    "model_forward": "model",
    "full_model_gradcheck": "model",
    "save_checkpoint": "checkpoint",
    "load_checkpoint": "checkpoint",
    "Adam": "trainer",
    "train": "trainer",
    "evaluate": "trainer",
    "predict_sample": "trainer",
    "clip_gradients": "trainer",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name: str):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    return getattr(import_module(f".{module}", __name__), name)
