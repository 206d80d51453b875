"""Regression head: fused features to per-frame (valence, arousal).

LayerNorm -> linear + GELU -> dropout -> linear, with no output
nonlinearity; raw values feed the loss and are clamped to [-1, 1] only
when predictions are exported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError, DimensionError

OUTPUT_DIM = 2  # (valence, arousal), fixed order everywhere


@dataclass
class RegressionHead:
    ln_gamma: Node
    ln_beta: Node
    w1: Node  # [Dcat, H]
    b1: Node
    w2: Node  # [H, 2]
    b2: Node
    dropout_p: float = 0.3
    ln_eps: float = 1e-5

    @property
    def input_dim(self) -> int:
        return self.w1.value.shape[0]


def head_param_specs(fused_dim: int, hidden: int) -> list[tuple[str, tuple[int, ...]]]:
    return [
        ("ln.gamma", (fused_dim,)),
        ("ln.beta", (fused_dim,)),
        ("fc1.w", (fused_dim, hidden)),
        ("fc1.b", (hidden,)),
        ("fc2.w", (hidden, OUTPUT_DIM)),
        ("fc2.b", (OUTPUT_DIM,)),
    ]


def bind_head(params, prefix: str, dropout_p: float = 0.3) -> RegressionHead:
    return RegressionHead(
        ln_gamma=params[f"{prefix}.ln.gamma"],
        ln_beta=params[f"{prefix}.ln.beta"],
        w1=params[f"{prefix}.fc1.w"],
        b1=params[f"{prefix}.fc1.b"],
        w2=params[f"{prefix}.fc2.w"],
        b2=params[f"{prefix}.fc2.b"],
        dropout_p=dropout_p,
    )


def head_forward(
    head: RegressionHead,
    fcat: Node,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    """Map ``[T, Dcat]`` fused features to raw ``[T, 2]`` predictions."""
    if fcat.value.ndim != 2 or fcat.value.shape[1] != head.input_dim:
        raise DimensionError(
            f"head_forward: input shape {fcat.value.shape} does not match"
            f" head width {head.input_dim}"
        )
    if training and rng is None:
        raise ContractError("training-mode head_forward requires an explicit rng")
    h = ad.layer_norm(fcat, head.ln_gamma, head.ln_beta, head.ln_eps)
    h = ad.gelu(ad.linear(h, head.w1, head.b1))
    h = ad.dropout(h, head.dropout_p, training, rng)
    return ad.linear(h, head.w2, head.b2)


def clamp_predictions(pred: np.ndarray) -> np.ndarray:
    """Clip exported predictions to the label range [-1, 1]."""
    return np.clip(pred, -1.0, 1.0)
