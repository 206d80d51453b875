"""Full fusion model: parameter layout, initialization, forward pass.

Parameters live in an ordered name -> Node map whose layout is a pure
function of the config, so checkpoints can be validated structurally. The
forward pass runs each modality through its multi-scale TCN, fuses with
the two cross-modal attention blocks, and applies the regression head.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .config import TrainConfig
from .data import AlignedSample
from .errors import ContractError
from .fusion import attention_param_specs, bind_attention, fuse_all
from .gradcheck import GradCheckReport, gradcheck
from .head import bind_head, head_forward, head_param_specs
from .metrics import ccc_loss
from .tcn import TcnBranchConfig, bind_multiscale, branch_param_specs, tcn_forward

ModelParams = dict[str, Node]

MODALITY_ORDER = ("visual", "vggish", "logmel")


def branch_configs(cfg: TrainConfig) -> list[TcnBranchConfig]:
    return [
        TcnBranchConfig(
            kernel_size=k,
            blocks=cfg.tcn_blocks,
            channels=cfg.tcn_channels,
            dilation_base=cfg.tcn_dilation_base,
            dropout_p=cfg.tcn_dropout,
        )
        for k in cfg.tcn_kernel_sizes
    ]


def param_specs(cfg: TrainConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs for every trainable tensor."""
    cfg.validate()
    specs: list[tuple[str, tuple[int, ...]]] = []
    dims = cfg.modality_dims()
    configs = branch_configs(cfg)
    for modality in MODALITY_ORDER:
        for bc in configs:
            prefix = f"tcn.{modality}.k{bc.kernel_size}"
            specs.extend(
                (f"{prefix}.{suffix}", shape)
                for suffix, shape in branch_param_specs(dims[modality], bc)
            )
    for stream in ("vggish", "logmel"):
        specs.extend(
            (f"attn.{stream}.{suffix}", shape)
            for suffix, shape in attention_param_specs(
                cfg.tcn_output_dim, cfg.tcn_output_dim, cfg.attn_dk, cfg.attn_dv
            )
        )
    specs.extend(
        (f"head.{suffix}", shape)
        for suffix, shape in head_param_specs(cfg.fused_dim, cfg.head_hidden)
    )
    return specs


def parameter_count(cfg: TrainConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_specs(cfg))


def init_params(
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> ModelParams:
    """Fan-in-scaled uniform weights, zero biases, identity LayerNorm."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    params: ModelParams = {}
    for name, shape in param_specs(cfg):
        if name.endswith(".gamma"):
            value = np.ones(shape, dtype=dtype)
        elif name.endswith((".b", ".beta")):
            value = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = 1.0 / np.sqrt(fan_in)
            value = rng.uniform(-bound, bound, size=shape).astype(dtype)
        params[name] = ad.parameter(value)
    return params


def model_forward(
    params: Mapping[str, Node],
    cfg: TrainConfig,
    sample: AlignedSample,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    """Per-frame raw (valence, arousal) predictions for one window."""
    if training and rng is None:
        raise ContractError("training-mode model_forward requires an explicit rng")
    dtype = next(iter(params.values())).value.dtype
    configs = branch_configs(cfg)
    dims = cfg.modality_dims()
    tcn_out = {}
    for modality in MODALITY_ORDER:
        model = bind_multiscale(params, f"tcn.{modality}", dims[modality], configs)
        x = ad.constant(np.asarray(getattr(sample, modality), dtype=dtype))
        tcn_out[modality] = tcn_forward(model, x, training, rng)
    att_vgg = bind_attention(params, "attn.vggish", cfg.attn_heads)
    att_lm = bind_attention(params, "attn.logmel", cfg.attn_heads)
    fused = fuse_all(tcn_out["visual"], tcn_out["vggish"], tcn_out["logmel"], att_vgg, att_lm)
    head = bind_head(params, "head", cfg.head_dropout)
    return head_forward(head, fused, training, rng)


def full_model_gradcheck(
    cfg: TrainConfig,
    h: float = 1e-4,
    tol: float = 1e-6,
    seed: int = 7,
    pin_dropout: bool = True,
) -> GradCheckReport:
    """Finite-difference check of the CCC loss through the whole model.

    Runs in double precision on one random window of ``cfg.window`` frames
    with dropout active but pinned (the mask generator is reseeded on every
    evaluation). ``pin_dropout=False`` exercises the invalid-use detection.
    """
    data_rng = np.random.default_rng(seed)
    t_len = cfg.window
    sample = AlignedSample(
        sequence_id="gradcheck",
        visual=data_rng.normal(size=(t_len, cfg.visual_dim)),
        vggish=data_rng.normal(size=(t_len, cfg.vggish_dim)),
        logmel=data_rng.normal(size=(t_len, cfg.logmel_dim)),
        labels=None,  # targets passed directly below
    )
    gold = np.tanh(data_rng.normal(size=(t_len, 2)))
    params = init_params(cfg, np.random.default_rng(seed + 1), dtype=np.float64)
    shared_rng = np.random.default_rng(seed + 2)

    def loss_fn(p: Mapping[str, Node]) -> Node:
        rng = np.random.default_rng(seed + 2) if pin_dropout else shared_rng
        pred = model_forward(p, cfg, sample, training=True, rng=rng)
        return ccc_loss(pred, gold)

    return gradcheck(loss_fn, params, h=h, tol=tol)
