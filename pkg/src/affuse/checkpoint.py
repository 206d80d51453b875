"""Binary checkpoint format for named model parameters.

Little-endian layout: magic ``AFCKPT01`` | u32 version=1 | u32 tensor
count | per tensor: u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims,
float32 row-major payload. Loading is all-or-nothing: any inconsistency
raises and no partial model escapes.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .config import TrainConfig
from .errors import CheckpointError

CHECKPOINT_MAGIC = b"AFCKPT01"
CHECKPOINT_VERSION = 1


def _tensor_value(v) -> np.ndarray:
    arr = v.value if isinstance(v, Node) else np.asarray(v)
    return np.ascontiguousarray(arr, dtype="<f4")


def save_checkpoint(params: Mapping[str, object], path: str | Path) -> None:
    """Write parameters in their map order as float32 tensors."""
    chunks = [struct.pack("<8sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(params))]
    for name, value in params.items():
        arr = _tensor_value(value)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name!r}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointError(
                f"{self.path}: truncated while reading {what}"
                f" (need {n} bytes at offset {self.offset}, have {len(self.blob)})"
            )
        out = self.blob[self.offset : self.offset + n]
        self.offset += n
        return out


def load_checkpoint(path: str | Path, cfg: TrainConfig | None = None) -> dict[str, Node]:
    """Read a checkpoint back into parameter nodes.

    With a config, every tensor's shape is validated against the declared
    parameter layout; unknown, missing, or misshapen tensors raise a
    CheckpointError naming the offender.
    """
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    magic, version, count = struct.unpack("<8sII", reader.take(16, "header"))
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    params: dict[str, Node] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", reader.take(2, "tensor name length"))
        name = reader.take(name_len, "tensor name").decode("utf-8")
        (ndim,) = struct.unpack("<B", reader.take(1, f"{name}: ndim"))
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim, f"{name}: dims"))
        numel = 1
        for d in shape:
            numel *= d
        payload = reader.take(4 * numel, f"{name}: payload")
        value = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        if name in params:
            raise CheckpointError(f"{path}: duplicate tensor {name!r}")
        params[name] = ad.parameter(value)
    if reader.offset != len(reader.blob):
        raise CheckpointError(
            f"{path}: {len(reader.blob) - reader.offset} trailing bytes after"
            f" {count} tensors"
        )
    if cfg is not None:
        _validate_against_config(params, cfg, path)
    return params


def _validate_against_config(params: dict[str, Node], cfg: TrainConfig, path: Path) -> None:
    from .model import param_specs  # local import: model depends on config only

    expected = dict(param_specs(cfg))
    for name, node in params.items():
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected tensor {name!r} for this config")
        if tuple(node.value.shape) != tuple(expected[name]):
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {tuple(node.value.shape)},"
                f" config declares {tuple(expected[name])}"
            )
    missing = [name for name in expected if name not in params]
    if missing:
        raise CheckpointError(
            f"{path}: {len(missing)} tensors missing, first: {missing[0]!r}"
        )
