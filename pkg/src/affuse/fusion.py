"""Cross-modal attention: visual queries pool audio keys/values.

Each audio stream gets its own projection set. Attention is full
(non-causal) scaled dot-product over all frames; the temporal ordering
signal is already injected upstream by the TCNs, so no positional encoding
is added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Node
from .errors import AlignmentError, ConfigError, DimensionError


@dataclass
class CrossModalAttention:
    """Projection weights for one query-stream/key-value-stream pair."""

    wq: Node  # [Dv, dk]
    wk: Node  # [Da, dk]
    wv: Node  # [Da, dv_out]
    heads: int = 1

    @property
    def dk(self) -> int:
        return self.wq.value.shape[1]

    @property
    def dv_out(self) -> int:
        return self.wv.value.shape[1]

    def validate(self) -> None:
        if self.wq.value.shape[1] != self.wk.value.shape[1]:
            raise DimensionError(
                f"attention: wq {self.wq.value.shape} and wk {self.wk.value.shape}"
                " disagree on key dimension"
            )
        if self.wk.value.shape[0] != self.wv.value.shape[0]:
            raise DimensionError(
                f"attention: wk {self.wk.value.shape} and wv {self.wv.value.shape}"
                " disagree on audio width"
            )
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if self.heads > 1 and (self.dk % self.heads or self.dv_out % self.heads):
            raise ConfigError(
                f"dk={self.dk} and dv_out={self.dv_out} must be divisible by"
                f" heads={self.heads}"
            )


def attention_param_specs(
    query_dim: int, audio_dim: int, dk: int, dv_out: int
) -> list[tuple[str, tuple[int, ...]]]:
    return [
        ("wq", (query_dim, dk)),
        ("wk", (audio_dim, dk)),
        ("wv", (audio_dim, dv_out)),
    ]


def bind_attention(params, prefix: str, heads: int = 1) -> CrossModalAttention:
    att = CrossModalAttention(
        wq=params[f"{prefix}.wq"],
        wk=params[f"{prefix}.wk"],
        wv=params[f"{prefix}.wv"],
        heads=heads,
    )
    att.validate()
    return att


def attend(att: CrossModalAttention, visual: Node, audio: Node) -> Node:
    """``softmax(Q K^T / sqrt(dk)) V`` with Q from the visual stream and
    K, V from one audio stream; full attention over all audio frames."""
    att.validate()
    if visual.value.shape[0] != audio.value.shape[0]:
        raise AlignmentError(
            f"attend: visual has {visual.value.shape[0]} frames,"
            f" audio has {audio.value.shape[0]}"
        )
    if visual.value.shape[1] != att.wq.value.shape[0]:
        raise DimensionError(
            f"attend: visual width {visual.value.shape} does not match"
            f" wq {att.wq.value.shape}"
        )
    if audio.value.shape[1] != att.wk.value.shape[0]:
        raise DimensionError(
            f"attend: audio width {audio.value.shape} does not match"
            f" wk {att.wk.value.shape}"
        )
    q = ad.matmul(visual, att.wq)
    k = ad.matmul(audio, att.wk)
    v = ad.matmul(audio, att.wv)
    if att.heads == 1:
        return _single_head(q, k, v, att.dk)
    dkh = att.dk // att.heads
    dvh = att.dv_out // att.heads
    outs = []
    for h in range(att.heads):
        qh = ad.slice_cols(q, h * dkh, (h + 1) * dkh)
        kh = ad.slice_cols(k, h * dkh, (h + 1) * dkh)
        vh = ad.slice_cols(v, h * dvh, (h + 1) * dvh)
        outs.append(_single_head(qh, kh, vh, dkh))
    return ad.concat_features(outs)


def _single_head(q: Node, k: Node, v: Node, dk: int) -> Node:
    logits = ad.scale(ad.matmul_nt(q, k), 1.0 / math.sqrt(dk))
    return ad.matmul(ad.softmax_rows(logits), v)


def attention_weights(att: CrossModalAttention, visual: Node, audio: Node) -> Node:
    """Row-stochastic attention matrix (first head), for inspection/tests."""
    att.validate()
    q = ad.matmul(visual, att.wq)
    k = ad.matmul(audio, att.wk)
    if att.heads > 1:
        dkh = att.dk // att.heads
        q = ad.slice_cols(q, 0, dkh)
        k = ad.slice_cols(k, 0, dkh)
        return ad.softmax_rows(ad.scale(ad.matmul_nt(q, k), 1.0 / math.sqrt(dkh)))
    return ad.softmax_rows(ad.scale(ad.matmul_nt(q, k), 1.0 / math.sqrt(att.dk)))


def fuse_all(
    vtcn: Node,
    vgg_tcn: Node,
    lm_tcn: Node,
    att_vgg: CrossModalAttention,
    att_lm: CrossModalAttention,
) -> Node:
    """Concatenate visual TCN features with both audio-attended views, in
    that order: ``[visual | attend(vggish) | attend(logmel)]``."""
    return ad.concat_features(
        [
            vtcn,
            attend(att_vgg, vtcn, vgg_tcn),
            attend(att_lm, vtcn, lm_tcn),
        ]
    )
