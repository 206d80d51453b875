"""Concordance correlation coefficient, combined score, and training loss.

CCC follows Lin's definition with population (1/N) moments, which makes
``ccc(x, x) == 1`` exact. The competition score averages the valence and
arousal CCCs. The training objective is ``1 - 0.5 * (CCC_v + CCC_a)``,
differentiable through the moment computations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import DimensionError, EvaluationError

DEGENERATE_DENOM = 1e-12


def ccc(pred, gold, mask=None) -> float:
    """Concordance correlation over valid frames.

    ``2*cov / (var_p + var_g + (mu_p - mu_g)^2)`` with population moments.
    A vanishing denominator means both sequences are constant: identical
    constants score 1, anything else 0.
    """
    x = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(gold, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DimensionError(f"ccc: length mismatch {x.shape} vs {y.shape}")
    if mask is not None:
        m = np.asarray(mask, dtype=bool).reshape(-1)
        if m.shape != x.shape:
            raise DimensionError(f"ccc: mask length {m.shape} does not match {x.shape}")
        x, y = x[m], y[m]
    if x.size == 0:
        raise EvaluationError("ccc: no valid frames")
    mu_x = x.mean()
    mu_y = y.mean()
    var_x = ((x - mu_x) ** 2).mean()
    var_y = ((y - mu_y) ** 2).mean()
    cov = ((x - mu_x) * (y - mu_y)).mean()
    denom = var_x + var_y + (mu_x - mu_y) ** 2
    if denom < DEGENERATE_DENOM:
        return 1.0 if np.array_equal(x, y) else 0.0
    return float(2.0 * cov / denom)


@dataclass
class EvalReport:
    """Per-fold evaluation outcome (score_p = mean of the two CCCs)."""

    ccc_valence: float
    ccc_arousal: float
    score_p: float
    frames_used: int = 0
    frames_masked: int = 0


def combined_score(
    ccc_valence: float,
    ccc_arousal: float,
    frames_used: int = 0,
    frames_masked: int = 0,
) -> EvalReport:
    return EvalReport(
        ccc_valence=ccc_valence,
        ccc_arousal=ccc_arousal,
        score_p=0.5 * (ccc_valence + ccc_arousal),
        frames_used=frames_used,
        frames_masked=frames_masked,
    )


def format_report_line(fold: int, report: EvalReport) -> str:
    """One line per fold: ``fold,ccc_valence,ccc_arousal,P`` at 4 decimals."""
    return (
        f"{fold},{report.ccc_valence:.4f},{report.ccc_arousal:.4f},"
        f"{report.score_p:.4f}"
    )


def gold_is_degenerate(gold: np.ndarray, mask=None) -> bool:
    """True when any target dimension is constant (or has < 2 valid frames)
    over the valid frames, which makes the CCC gradient degenerate."""
    g = np.asarray(gold, dtype=np.float64)
    if mask is not None:
        g = g[np.asarray(mask, dtype=bool)]
    if g.shape[0] < 2:
        return True
    return bool(np.any(g.max(axis=0) - g.min(axis=0) < 1e-12))


def _ccc_node(p: Node, g: np.ndarray) -> Node:
    """Differentiable CCC of a predicted vector against constant targets."""
    n = g.size
    mu_g = g.mean(dtype=g.dtype)
    gc = g - mu_g
    var_g = float((gc**2).mean())
    mu_p = ad.mean_all(p)
    dp = ad.sub_scalar(p, mu_p)
    cov = ad.scale(ad.sum_all(ad.mul_const(dp, gc)), 1.0 / n)
    var_p = ad.scale(ad.sum_all(ad.mul(dp, dp)), 1.0 / n)
    dmu = ad.add_scalar(mu_p, float(-mu_g))
    denom = ad.add_scalar(ad.add(var_p, ad.mul(dmu, dmu)), var_g)
    return ad.div(ad.scale(cov, 2.0), denom)


def ccc_loss(pred: Node, gold: np.ndarray, mask=None) -> Node:
    """Scalar loss ``1 - 0.5 * (CCC_valence + CCC_arousal)`` over valid frames.

    ``pred`` is a [T, 2] node, ``gold`` a [T, 2] array; masked frames carry
    no gradient. Raises on degenerate targets (constant gold or fewer than
    two valid frames) - callers should skip such windows.
    """
    gold = np.asarray(gold, dtype=pred.value.dtype)
    if pred.value.shape != gold.shape or pred.value.shape[1] != 2:
        raise DimensionError(
            f"ccc_loss: pred {pred.value.shape} vs gold {gold.shape}, expected [T, 2]"
        )
    if mask is None:
        idx = np.arange(gold.shape[0])
    else:
        idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size < 2:
        raise EvaluationError(
            f"ccc_loss: need >= 2 valid frames, got {idx.size}"
        )
    gold_valid = gold[idx]
    if gold_is_degenerate(gold_valid):
        raise EvaluationError("ccc_loss: constant gold makes the CCC gradient degenerate")
    pv = ad.take_rows(pred, idx)
    ccc_v = _ccc_node(ad.column(pv, 0), gold_valid[:, 0])
    ccc_a = _ccc_node(ad.column(pv, 1), gold_valid[:, 1])
    return ad.add_scalar(ad.scale(ad.add(ccc_v, ccc_a), -0.5), 1.0)
