"""Multi-scale temporal modeling.

Each modality is processed by parallel branches of causal dilated
convolutions with kernel sizes 3, 5 and 7; branch outputs are concatenated
in kernel-size order. A branch is a stack of residual blocks, each two
convolutions (GELU + dropout after each) with a 1x1 projection shortcut
when the channel count changes. Block ``i`` dilates by ``base**i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, ContractError, DimensionError


@dataclass
class TcnBranchConfig:
    kernel_size: int
    blocks: int = 2
    channels: int = 64
    dilation_base: int = 2
    dropout_p: float = 0.1

    def validate(self) -> None:
        if self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.dilation_base < 1:
            raise ConfigError(f"dilation_base must be >= 1, got {self.dilation_base}")

    def dilations(self) -> list[int]:
        return [self.dilation_base**i for i in range(self.blocks)]


def receptive_field(cfg: TcnBranchConfig) -> int:
    """Frames of history visible to one output frame: two convolutions per
    block, each widening the field by ``(k-1) * dilation``."""
    cfg.validate()
    return 1 + 2 * (cfg.kernel_size - 1) * sum(cfg.dilations())


@dataclass
class TcnBlock:
    """Parameter bundle for one residual block."""

    conv1_w: Node
    conv1_b: Node
    conv2_w: Node
    conv2_b: Node
    proj_w: Node | None  # 1x1 shortcut, present only on channel mismatch
    dilation: int


@dataclass
class TcnBranch:
    config: TcnBranchConfig
    blocks: list[TcnBlock]


@dataclass
class MultiScaleTcn:
    """One modality's branch set, ordered by kernel size."""

    input_dim: int
    branches: list[TcnBranch] = field(default_factory=list)

    @property
    def output_dim(self) -> int:
        return sum(b.config.channels for b in self.branches)


def branch_param_specs(
    input_dim: int, cfg: TcnBranchConfig
) -> list[tuple[str, tuple[int, ...]]]:
    """Name/shape pairs for one branch, relative to the branch prefix."""
    cfg.validate()
    specs: list[tuple[str, tuple[int, ...]]] = []
    in_ch = input_dim
    for i in range(cfg.blocks):
        base = f"b{i}"
        specs.append((f"{base}.conv1.w", (cfg.kernel_size, in_ch, cfg.channels)))
        specs.append((f"{base}.conv1.b", (cfg.channels,)))
        specs.append((f"{base}.conv2.w", (cfg.kernel_size, cfg.channels, cfg.channels)))
        specs.append((f"{base}.conv2.b", (cfg.channels,)))
        if in_ch != cfg.channels:
            specs.append((f"{base}.proj.w", (in_ch, cfg.channels)))
        in_ch = cfg.channels
    return specs


def bind_branch(params, prefix: str, input_dim: int, cfg: TcnBranchConfig) -> TcnBranch:
    """Assemble a branch from named parameter nodes (``{prefix}.b0.conv1.w``...)."""
    blocks = []
    in_ch = input_dim
    for i, dilation in enumerate(cfg.dilations()):
        base = f"{prefix}.b{i}"
        blocks.append(
            TcnBlock(
                conv1_w=params[f"{base}.conv1.w"],
                conv1_b=params[f"{base}.conv1.b"],
                conv2_w=params[f"{base}.conv2.w"],
                conv2_b=params[f"{base}.conv2.b"],
                proj_w=params.get(f"{base}.proj.w") if in_ch != cfg.channels else None,
                dilation=dilation,
            )
        )
        in_ch = cfg.channels
    return TcnBranch(config=cfg, blocks=blocks)


def bind_multiscale(
    params, prefix: str, input_dim: int, configs: list[TcnBranchConfig]
) -> MultiScaleTcn:
    branches = [
        bind_branch(params, f"{prefix}.k{cfg.kernel_size}", input_dim, cfg)
        for cfg in configs
    ]
    return MultiScaleTcn(input_dim=input_dim, branches=branches)


def branch_forward(
    branch: TcnBranch, x: Node, training: bool, rng: np.random.Generator
) -> Node:
    h = x
    p = branch.config.dropout_p
    for blk in branch.blocks:
        y = ad.dilated_conv1d(h, blk.conv1_w, blk.conv1_b, blk.dilation)
        y = ad.dropout(ad.gelu(y), p, training, rng)
        y = ad.dilated_conv1d(y, blk.conv2_w, blk.conv2_b, blk.dilation)
        y = ad.dropout(ad.gelu(y), p, training, rng)
        shortcut = h if blk.proj_w is None else ad.matmul(h, blk.proj_w)
        h = ad.add(y, shortcut)
    return h


def tcn_forward(
    model: MultiScaleTcn, x: Node, training: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    """Run every branch and concatenate ``[T, C]`` outputs in branch order.

    Output length equals input length and frame ``t`` depends only on
    inputs at or before ``t``.
    """
    if x.value.ndim != 2 or x.value.shape[1] != model.input_dim:
        raise DimensionError(
            f"tcn_forward: input shape {x.value.shape} does not match"
            f" input_dim {model.input_dim}"
        )
    if training and rng is None:
        raise ContractError("training-mode tcn_forward requires an explicit rng")
    outs = [branch_forward(b, x, training, rng) for b in model.branches]
    return ad.concat_features(outs)
