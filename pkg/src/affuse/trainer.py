"""End-to-end optimization and fold-based evaluation.

A run is fully determined by (config, dataset, seed): initialization,
window shuffling, and dropout each draw from their own child stream of the
run seed, so two identical runs produce byte-identical checkpoints.
Training minimizes the CCC loss per window with Adam and global
gradient-norm clipping; the checkpoint with the best validation score is
retained.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Node, backward
from .config import TrainConfig
from .data import AlignedSample, eval_windows, fold_split, make_windows
from .errors import ConfigError, EvaluationError, TrainingError
from .metrics import EvalReport, ccc, ccc_loss, combined_score, gold_is_degenerate
from .model import ModelParams, init_params, model_forward

log = logging.getLogger(__name__)


class Adam:
    """Adam with bias correction; state lives in the parameter dtype."""

    def __init__(
        self,
        params: ModelParams,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.value)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.lr == 0.0:  # null update stays bit-exact
                continue
            m_hat = m / bc1
            v_hat = v / bc2
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def global_grad_norm(params: ModelParams) -> float:
    """Global L2 norm over all parameter gradients (f64 accumulation)."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            g = p.grad.astype(np.float64, copy=False)
            total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    return float(np.sqrt(total))


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``;
    returns the pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= np.asarray(factor, dtype=p.grad.dtype)
    return norm


def scale_gradients(params: ModelParams, factor: float) -> None:
    for p in params.values():
        if p.grad is not None:
            p.grad *= np.asarray(factor, dtype=p.grad.dtype)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_p: float


def _split_dataset(
    cfg: TrainConfig, dataset: list[AlignedSample], fold: int
) -> tuple[list[AlignedSample], list[AlignedSample]]:
    if not 0 <= fold < cfg.folds:
        raise ConfigError(f"fold must be in [0, {cfg.folds}), got {fold}")
    assignment = fold_split([s.sequence_id for s in dataset], cfg.folds, cfg.seed)
    train = [s for s in dataset if assignment[s.sequence_id] != fold]
    val = [s for s in dataset if assignment[s.sequence_id] == fold]
    if not val:
        raise EvaluationError(f"fold {fold} holds no sequences")
    if not train:
        raise EvaluationError(f"no training sequences outside fold {fold}")
    return train, val


def predict_sample(params: ModelParams, cfg: TrainConfig, sample: AlignedSample) -> np.ndarray:
    """Raw [T, 2] predictions for a full sequence via disjoint windows."""
    parts = [
        model_forward(params, cfg, w, training=False).value
        for w in eval_windows(sample, cfg.window)
    ]
    return np.concatenate(parts, axis=0)


def evaluate(
    params: ModelParams, cfg: TrainConfig, dataset: list[AlignedSample], fold: int
) -> EvalReport:
    """Concatenate all validation-sequence predictions, then score the
    pooled valid frames per dimension."""
    _, val = _split_dataset(cfg, dataset, fold)
    preds, golds, valids = [], [], []
    for sample in val:
        preds.append(predict_sample(params, cfg, sample))
        golds.append(sample.labels.stacked())
        valids.append(sample.labels.valid)
    pred = np.concatenate(preds, axis=0)
    gold = np.concatenate(golds, axis=0)
    valid = np.concatenate(valids, axis=0)
    if not valid.any():
        raise EvaluationError(f"fold {fold} has no valid frames")
    ccc_v = ccc(pred[:, 0], gold[:, 0], valid)
    ccc_a = ccc(pred[:, 1], gold[:, 1], valid)
    return combined_score(
        ccc_v, ccc_a, frames_used=int(valid.sum()), frames_masked=int((~valid).sum())
    )


def train(
    cfg: TrainConfig, dataset: list[AlignedSample], fold: int
) -> tuple[ModelParams, list[EpochStats]]:
    """Optimize on all folds except ``fold``; return the parameters of the
    best validation epoch plus the per-epoch log."""
    cfg.validate()
    train_samples, _ = _split_dataset(cfg, dataset, fold)

    windows = [
        w for s in train_samples for w in make_windows(s, cfg.window, cfg.stride)
    ]
    usable = []
    skipped = 0
    for w in windows:
        if gold_is_degenerate(w.labels.stacked(), w.labels.valid):
            skipped += 1
        else:
            usable.append(w)
    if skipped:
        log.warning(
            "skipping %d window(s) with constant or too-sparse gold labels", skipped
        )
    if not usable:
        raise TrainingError("no trainable windows after filtering degenerate gold")

    init_ss, shuffle_ss, dropout_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    params = init_params(cfg, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    opt = Adam(params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    best_p = -np.inf
    best_values: dict[str, np.ndarray] = {n: p.value.copy() for n, p in params.items()}
    stats: list[EpochStats] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(usable))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            opt.zero_grad()
            for wi in batch:
                w = usable[int(wi)]
                pred = model_forward(params, cfg, w, training=True, rng=dropout_rng)
                loss = ccc_loss(pred, w.labels.stacked(), w.labels.valid)
                value = float(loss.value)
                if not np.isfinite(value):
                    raise TrainingError(
                        f"non-finite loss {value} at step {step}"
                        f" (epoch {epoch}, window {w.sequence_id})"
                    )
                losses.append(value)
                backward(loss)
            scale_gradients(params, 1.0 / len(batch))
            clip_gradients(params, cfg.grad_clip)
            opt.step()
            step += 1
        report = evaluate(params, cfg, dataset, fold)
        train_loss = float(np.mean(losses)) if losses else float("nan")
        stats.append(EpochStats(epoch=epoch, train_loss=train_loss, val_p=report.score_p))
        log.info(
            "epoch %d: train_loss=%.4f val_P=%.4f (ccc_v=%.4f ccc_a=%.4f)",
            epoch, train_loss, report.score_p, report.ccc_valence, report.ccc_arousal,
        )
        if report.score_p > best_p:
            best_p = report.score_p
            best_values = {n: p.value.copy() for n, p in params.items()}

    best_params: ModelParams = {n: Node(v, role="parameter") for n, v in best_values.items()}
    return best_params, stats
