"""Run configuration: every hyperparameter and seed in one flat structure.

The on-disk format is one ``key = value`` per line with ``#`` comments.
Unknown keys are rejected so typos cannot silently fall back to defaults,
and a config round-trips through the file losslessly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class TrainConfig:
    """Single source of determinism and sizing for a training run."""

    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 50
    seed: int = 0
    grad_clip: float = 5.0

    visual_dim: int = 512
    vggish_dim: int = 128
    logmel_dim: int = 128

    tcn_kernel_sizes: tuple[int, ...] = (3, 5, 7)
    tcn_blocks: int = 2
    tcn_channels: int = 64
    tcn_dilation_base: int = 2
    tcn_dropout: float = 0.1

    attn_dk: int = 64
    attn_dv: int = 64
    attn_heads: int = 1

    head_hidden: int = 256
    head_dropout: float = 0.3

    window: int = 256
    stride: int = 128
    folds: int = 6

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be > 0, got {self.adam_eps}")
        for name in (
            "batch_size",
            "epochs",
            "visual_dim",
            "vggish_dim",
            "logmel_dim",
            "tcn_blocks",
            "tcn_channels",
            "tcn_dilation_base",
            "attn_dk",
            "attn_dv",
            "attn_heads",
            "head_hidden",
            "stride",
        ):
            v = getattr(self, name)
            if v < 1:
                raise ConfigError(f"{name} must be >= 1, got {v}")
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in u64, got {self.seed}")
        if self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be > 0, got {self.grad_clip}")
        for name in ("tcn_dropout", "head_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        if not self.tcn_kernel_sizes:
            raise ConfigError("tcn_kernel_sizes must not be empty")
        if any(k < 1 for k in self.tcn_kernel_sizes):
            raise ConfigError(f"kernel sizes must be >= 1, got {self.tcn_kernel_sizes}")
        if self.attn_heads > 1 and (
            self.attn_dk % self.attn_heads or self.attn_dv % self.attn_heads
        ):
            raise ConfigError(
                f"attn_dk={self.attn_dk} and attn_dv={self.attn_dv} must be"
                f" divisible by attn_heads={self.attn_heads}"
            )

    # -- derived sizes -----------------------------------------------------

    @property
    def tcn_output_dim(self) -> int:
        return len(self.tcn_kernel_sizes) * self.tcn_channels

    @property
    def fused_dim(self) -> int:
        return self.tcn_output_dim + 2 * self.attn_dv

    def modality_dims(self) -> dict[str, int]:
        return {
            "visual": self.visual_dim,
            "vggish": self.vggish_dim,
            "logmel": self.logmel_dim,
        }

    @classmethod
    def tiny(cls, seed: int = 0) -> "TrainConfig":
        """Desk-checkable sizing used for gradient verification."""
        return cls(
            seed=seed,
            visual_dim=8,
            vggish_dim=4,
            logmel_dim=4,
            tcn_channels=4,
            attn_dk=4,
            attn_dv=4,
            head_hidden=8,
            window=10,
            stride=10,
        )

    # -- file round-trip ---------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "tcn_kernel_sizes":
                v = ",".join(str(k) for k in v)
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values: dict[str, object] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in fields:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            values[key] = _parse_value(key, value, fields[key].type, source, lineno)
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), source=str(path))


def _parse_value(key: str, value: str, ftype: str, source: str, lineno: int):
    try:
        if key == "tcn_kernel_sizes":
            return tuple(int(p) for p in value.split(",") if p.strip())
        if "int" in str(ftype):
            return int(value)
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {value!r}") from exc
