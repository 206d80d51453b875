"""Command-line interface: synth, train, eval, predict, gradcheck.

Heavy imports are deferred until after the AFFUSE_THREADS cap is applied
so the BLAS thread pool can still pick up the environment variables.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import AffuseError, ConfigError

log = logging.getLogger("affuse")

_THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_cap() -> None:
    """Honor AFFUSE_THREADS (absent -> machine default)."""
    raw = os.environ.get("AFFUSE_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"AFFUSE_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"AFFUSE_THREADS must be >= 1, got {n}")
    for var in _THREAD_ENV_VARS:
        os.environ.setdefault(var, str(n))
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:  # env vars above still cap freshly-started pools
        pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affuse",
        description="Audio-visual valence/arousal fusion model: data synthesis,"
        " training, evaluation, prediction, gradient verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sequences", type=int, default=40)
    p.add_argument("--frames", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", type=float, default=10.0, help="signal-to-noise power ratio ('inf' for clean)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train on all folds except --fold")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset manifest CSV")
    p.add_argument("--fold", type=int, required=True, help="held-out validation fold")
    p.add_argument("--out", required=True, help="output directory for checkpoint and log")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one fold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="per-frame predictions for one sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument(
        "--features", nargs=3, required=True, metavar=("VISUAL", "VGGISH", "LOGMEL"),
        help="three feature files, visual then vggish then logmel",
    )
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gradcheck", help="verify gradients by finite differences")
    p.add_argument("--config", required=True)
    p.add_argument("--tiny", action="store_true", help="use the tiny verification sizing")
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def _cmd_synth(args) -> int:
    from .data import synth_generate, write_dataset

    samples = synth_generate(args.sequences, args.frames, seed=args.seed, snr=args.snr)
    manifest = write_dataset(samples, args.out)
    print(manifest)
    return 0


def _cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .config import TrainConfig
    from .data import load_dataset
    from .trainer import train

    cfg = TrainConfig.from_file(args.config)
    dataset = load_dataset(args.data, dims=cfg.modality_dims())
    params, stats = train(cfg, dataset, args.fold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "checkpoint.bin")
    cfg.to_file(out / "config.conf")
    with open(out / "log.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_p\n")
        for s in stats:
            fh.write(f"{s.epoch},{s.train_loss!r},{s.val_p!r}\n")
    best = max(stats, key=lambda s: s.val_p)
    print(f"best epoch {best.epoch}: val_P={best.val_p:.4f}")
    print(out / "checkpoint.bin")
    return 0


def _cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .config import TrainConfig
    from .data import load_dataset
    from .metrics import format_report_line
    from .trainer import evaluate

    cfg = TrainConfig.from_file(args.config)
    params = load_checkpoint(args.checkpoint, cfg)
    dataset = load_dataset(args.data, dims=cfg.modality_dims())
    report = evaluate(params, cfg, dataset, args.fold)
    print(format_report_line(args.fold, report))
    return 0


def _cmd_predict(args) -> int:
    from .checkpoint import load_checkpoint
    from .config import TrainConfig
    from .data import AlignedSample, LabelSequence, load_feature_file
    from .errors import FormatError
    from .head import clamp_predictions
    from .trainer import predict_sample

    cfg = TrainConfig.from_file(args.config)
    params = load_checkpoint(args.checkpoint, cfg)
    seqs = {}
    for modality, path in zip(("visual", "vggish", "logmel"), args.features):
        seq = load_feature_file(path, sequence_id="predict")
        if seq.modality != modality:
            raise FormatError(
                f"{path}: expected {modality} features, file declares {seq.modality}"
            )
        seqs[modality] = seq
    min_t = min(s.frames.shape[0] for s in seqs.values())
    placeholder = LabelSequence.from_raw("predict", [0.0] * min_t, [0.0] * min_t)
    sample = AlignedSample(
        sequence_id="predict",
        visual=seqs["visual"].frames[:min_t],
        vggish=seqs["vggish"].frames[:min_t],
        logmel=seqs["logmel"].frames[:min_t],
        labels=placeholder,
    )
    pred = clamp_predictions(predict_sample(params, cfg, sample))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("frame,valence,arousal\n")
        for i in range(pred.shape[0]):
            fh.write(f"{i},{pred[i, 0]:.6f},{pred[i, 1]:.6f}\n")
    print(args.out)
    return 0


def _cmd_gradcheck(args) -> int:
    from .config import TrainConfig
    from .model import full_model_gradcheck, parameter_count

    cfg = TrainConfig.from_file(args.config)
    if args.tiny:
        cfg = TrainConfig.tiny(seed=cfg.seed)
    n = parameter_count(cfg)
    if n > 20_000:
        log.warning(
            "finite differences over %d parameters; consider --tiny", n
        )
    report = full_model_gradcheck(cfg)
    print(report.summary())
    return 0 if report.passed else 1


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("AFFUSE_LOGLEVEL", "INFO"),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _apply_thread_cap()
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except AffuseError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
