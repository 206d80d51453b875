"""Feature/label ingestion, alignment, windowing, folds, synthetic data.

The package never touches raw video or audio: upstream extractors are an
I/O boundary and their outputs arrive as binary per-frame feature files
(512-d visual, 128-d vggish, 128-d logmel by default) plus a CSV of
per-frame valence/arousal labels. A seeded synthetic generator produces
datasets with a known cross-modal structure so end-to-end training can be
verified without the real corpus.
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    AlignmentError,
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    TruncationError,
)

FEATURE_MAGIC = b"AFFEAT01"
FEATURE_VERSION = 1
MODALITY_CODES = {"visual": 0, "vggish": 1, "logmel": 2}
CODE_MODALITIES = {v: k for k, v in MODALITY_CODES.items()}
DEFAULT_DIMS = {"visual": 512, "vggish": 128, "logmel": 128}
LABEL_HEADER = ["frame", "valence", "arousal"]
MANIFEST_HEADER = ["sequence_id", "visual_path", "vggish_path", "logmel_path", "labels_path"]

_HEADER_STRUCT = struct.Struct("<8sIB3sII")  # magic, version, code, reserved, T, D


class AlignmentWarning(UserWarning):
    """Raised (as a warning) when modality lengths disagree noticeably."""


@dataclass
class FeatureSequence:
    """One modality's per-frame features, [T, D] float32."""

    sequence_id: str
    modality: str
    frames: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITY_CODES:
            raise ConfigError(f"unknown modality {self.modality!r}")
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DimensionError(
                f"feature sequence must be [T>=1, D], got {self.frames.shape}"
            )


@dataclass
class LabelSequence:
    """Per-frame targets with a validity mask.

    Frames whose raw valence or arousal falls outside [-1, 1] (annotation
    sentinels such as -5, or non-finite values) are marked invalid and are
    excluded from loss and metrics.
    """

    sequence_id: str
    valence: np.ndarray
    arousal: np.ndarray
    valid: np.ndarray

    @classmethod
    def from_raw(cls, sequence_id: str, valence, arousal) -> "LabelSequence":
        v = np.asarray(valence, dtype=np.float64).reshape(-1)
        a = np.asarray(arousal, dtype=np.float64).reshape(-1)
        if v.shape != a.shape:
            raise DimensionError(
                f"labels: valence length {v.shape} != arousal length {a.shape}"
            )
        with np.errstate(invalid="ignore"):
            valid = (np.abs(v) <= 1.0) & (np.abs(a) <= 1.0)
        return cls(sequence_id=sequence_id, valence=v, arousal=a, valid=valid)

    def __len__(self) -> int:
        return self.valence.shape[0]

    def stacked(self) -> np.ndarray:
        """[T, 2] (valence, arousal) target matrix."""
        return np.stack([self.valence, self.arousal], axis=1)

    def slice(self, start: int, stop: int) -> "LabelSequence":
        return LabelSequence(
            sequence_id=self.sequence_id,
            valence=self.valence[start:stop],
            arousal=self.arousal[start:stop],
            valid=self.valid[start:stop],
        )


@dataclass
class AlignedSample:
    """All modalities plus labels on one shared time axis."""

    sequence_id: str
    visual: np.ndarray
    vggish: np.ndarray
    logmel: np.ndarray
    labels: LabelSequence

    @property
    def t(self) -> int:
        return self.visual.shape[0]

    def slice(self, start: int, stop: int) -> "AlignedSample":
        return AlignedSample(
            sequence_id=self.sequence_id,
            visual=self.visual[start:stop],
            vggish=self.vggish[start:stop],
            logmel=self.logmel[start:stop],
            labels=self.labels.slice(start, stop),
        )


# ---------------------------------------------------------------------------
# binary feature files
# ---------------------------------------------------------------------------


def write_feature_file(path: str | Path, seq: FeatureSequence) -> None:
    t_len, dim = seq.frames.shape
    header = _HEADER_STRUCT.pack(
        FEATURE_MAGIC, FEATURE_VERSION, MODALITY_CODES[seq.modality], b"\x00\x00\x00",
        t_len, dim,
    )
    payload = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_feature_file(path: str | Path, sequence_id: str | None = None) -> FeatureSequence:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER_STRUCT.size:
        raise TruncationError(
            f"{path}: file shorter than the {_HEADER_STRUCT.size}-byte header"
        )
    magic, version, code, _reserved, t_len, dim = _HEADER_STRUCT.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in CODE_MODALITIES:
        raise FormatError(f"{path}: unknown modality code {code}")
    expected = t_len * dim * 4
    actual = len(blob) - _HEADER_STRUCT.size
    if actual != expected:
        raise TruncationError(
            f"{path}: payload is {actual} bytes, header promises {expected}"
            f" ({t_len}x{dim} float32)"
        )
    frames = np.frombuffer(blob, dtype="<f4", offset=_HEADER_STRUCT.size).reshape(t_len, dim)
    if not np.all(np.isfinite(frames)):
        raise DataError(f"{path}: payload contains NaN or Inf")
    return FeatureSequence(
        sequence_id=sequence_id if sequence_id is not None else path.stem,
        modality=CODE_MODALITIES[code],
        frames=frames.copy(),
    )


# ---------------------------------------------------------------------------
# label and manifest files
# ---------------------------------------------------------------------------


def write_label_file(path: str | Path, labels: LabelSequence) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_HEADER)
        for i in range(len(labels)):
            writer.writerow([i, repr(float(labels.valence[i])), repr(float(labels.arousal[i]))])


def load_label_file(path: str | Path, sequence_id: str | None = None) -> LabelSequence:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != LABEL_HEADER:
            raise FormatError(
                f"{path}: expected header {','.join(LABEL_HEADER)!r}, got {header!r}"
            )
        valence, arousal = [], []
        for lineno, row in enumerate(reader):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}: row {lineno} has {len(row)} fields, expected 3")
            try:
                frame = int(row[0])
                v = float(row[1])
                a = float(row[2])
            except ValueError as exc:
                raise FormatError(f"{path}: row {lineno} not numeric: {row!r}") from exc
            if frame != lineno:
                raise FormatError(
                    f"{path}: frame indices must be 0-based ascending,"
                    f" got {frame} at row {lineno}"
                )
            valence.append(v)
            arousal.append(a)
    if not valence:
        raise DataError(f"{path}: no label rows")
    return LabelSequence.from_raw(
        sequence_id if sequence_id is not None else path.stem, valence, arousal
    )


def write_manifest(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def load_manifest(path: str | Path) -> list[dict]:
    """Manifest rows with paths resolved relative to the manifest file."""
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != MANIFEST_HEADER:
            raise FormatError(
                f"{path}: expected header {','.join(MANIFEST_HEADER)!r},"
                f" got {reader.fieldnames!r}"
            )
        rows = []
        for row in reader:
            resolved = {"sequence_id": row["sequence_id"]}
            for key in MANIFEST_HEADER[1:]:
                resolved[key] = str((base / row[key]).resolve())
            rows.append(resolved)
    if not rows:
        raise DataError(f"{path}: empty manifest")
    return rows


def load_dataset(manifest_path: str | Path, dims: dict[str, int] | None = None) -> list[AlignedSample]:
    """Load and align every sequence in a manifest.

    ``dims`` overrides the expected per-modality widths (defaults follow
    the standard 512/128/128 layout); a mismatch is a dimension error.
    """
    expected = dict(DEFAULT_DIMS if dims is None else dims)
    samples = []
    for row in load_manifest(manifest_path):
        sid = row["sequence_id"]
        seqs = {}
        for modality in MODALITY_CODES:
            seq = load_feature_file(row[f"{modality}_path"], sequence_id=sid)
            if seq.modality != modality:
                raise FormatError(
                    f"{row[f'{modality}_path']}: file declares modality"
                    f" {seq.modality!r}, manifest row expects {modality!r}"
                )
            if seq.frames.shape[1] != expected[modality]:
                raise DimensionError(
                    f"{sid}: {modality} width {seq.frames.shape[1]} does not match"
                    f" expected {expected[modality]}"
                )
            seqs[modality] = seq
        labels = load_label_file(row["labels_path"], sequence_id=sid)
        samples.append(align(seqs["visual"], seqs["vggish"], seqs["logmel"], labels))
    return samples


# ---------------------------------------------------------------------------
# alignment and windowing
# ---------------------------------------------------------------------------


def align(
    visual: FeatureSequence,
    vggish: FeatureSequence,
    logmel: FeatureSequence,
    labels: LabelSequence,
) -> AlignedSample:
    """Truncate all four streams to their shortest length.

    Warns when any stream exceeds the minimum by more than 5% - that
    usually indicates an upstream extraction problem rather than ordinary
    rate jitter.
    """
    ids = {visual.sequence_id, vggish.sequence_id, logmel.sequence_id, labels.sequence_id}
    if len(ids) != 1:
        raise AlignmentError(f"align: sequence ids disagree: {sorted(ids)}")
    lengths = [
        visual.frames.shape[0],
        vggish.frames.shape[0],
        logmel.frames.shape[0],
        len(labels),
    ]
    min_t = min(lengths)
    if min_t == 0:
        raise DataError(f"{labels.sequence_id}: empty sequence after alignment")
    if max(lengths) > min_t * 1.05:
        warnings.warn(
            f"{labels.sequence_id}: stream lengths {lengths} exceed the minimum"
            f" {min_t} by more than 5%; truncating",
            AlignmentWarning,
            stacklevel=2,
        )
    return AlignedSample(
        sequence_id=labels.sequence_id,
        visual=visual.frames[:min_t],
        vggish=vggish.frames[:min_t],
        logmel=logmel.frames[:min_t],
        labels=labels.slice(0, min_t),
    )


def make_windows(sample: AlignedSample, window: int, stride: int) -> list[AlignedSample]:
    """Overlapping training windows covering every frame at least once.

    Start offsets advance by ``stride``; the sweep stops once a window
    reaches the end of the sequence. If that final swept window is partial,
    a full-length window anchored at ``T - window`` is appended so the tail
    is also seen at full context without padding. Windows shorter than two
    frames are dropped (they cannot carry a CCC loss and are always covered
    by the anchored window).
    """
    if window < 2:
        raise ConfigError(f"window must be >= 2, got {window}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    t_len = sample.t
    if t_len <= window:
        return [sample.slice(0, t_len)]
    wins = []
    start = 0
    while True:
        end = min(start + window, t_len)
        wins.append(sample.slice(start, end))
        if end >= t_len:
            break
        start += stride
    if wins[-1].t < window:
        wins.append(sample.slice(t_len - window, t_len))
    return [w for w in wins if w.t >= 2]


def eval_windows(sample: AlignedSample, window: int) -> list[AlignedSample]:
    """Disjoint evaluation windows that concatenate back to the sequence;
    the final partial window keeps its true length."""
    if window < 2:
        raise ConfigError(f"window must be >= 2, got {window}")
    return [sample.slice(s, min(s + window, sample.t)) for s in range(0, sample.t, window)]


# ---------------------------------------------------------------------------
# fold assignment
# ---------------------------------------------------------------------------


def fold_split(ids: list[str], k: int = 6, seed: int = 0) -> dict[str, int]:
    """Deterministic fold assignment: sequences are ordered by a seeded
    hash of their id and dealt round-robin, so folds stay balanced and
    non-empty whenever there are at least ``k`` sequences."""
    if k < 2:
        raise ConfigError(f"folds must be >= 2, got {k}")
    unique = list(dict.fromkeys(ids))
    if len(unique) < k:
        raise ConfigError(f"need at least {k} sequences for {k} folds, got {len(unique)}")

    def keyed(sid: str) -> tuple[bytes, str]:
        digest = hashlib.sha256(f"{seed}:{sid}".encode("utf-8")).digest()
        return (digest, sid)

    ranked = sorted(unique, key=keyed)
    return {sid: rank % k for rank, sid in enumerate(ranked)}


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

SYNTH_LAG = 5  # logmel stream trails the latent trajectory by this many frames
_AR_COEFF = 0.99
_LATENT_STD = 0.8


def synth_generate(
    n_sequences: int,
    t_len: int,
    seed: int = 0,
    snr: float = 10.0,
    dims: dict[str, int] | None = None,
) -> list[AlignedSample]:
    """Generate sequences with a known cross-modal emotion trajectory.

    A smooth 2-d latent (AR(1) random walk squashed by tanh into [-1, 1])
    drives all three modalities through fixed seeded projection matrices;
    labels are the latent itself. The logmel stream observes the latent
    lagged by five frames so attention has a genuine temporal relationship
    to exploit. Observation noise is shared across modalities in latent
    space (so it cannot be averaged away frame-wise across feature columns)
    plus independent per-coordinate noise; both are scaled so the
    signal-to-noise power ratio equals ``snr``. Pass ``snr=inf`` for
    noise-free data.
    """
    if t_len < 32:
        raise ConfigError(f"synthetic sequences need t_len >= 32, got {t_len}")
    if n_sequences < 1:
        raise ConfigError(f"n_sequences must be >= 1, got {n_sequences}")
    if not (snr > 0):
        raise ConfigError(f"snr must be positive (or inf), got {snr}")
    sizes = dict(DEFAULT_DIMS if dims is None else dims)
    root = np.random.SeedSequence(seed)
    proj_ss, *seq_ss = root.spawn(1 + n_sequences)
    proj_rng = np.random.default_rng(proj_ss)
    projections = {
        m: proj_rng.normal(size=(2, sizes[m])) / math.sqrt(2.0) for m in MODALITY_CODES
    }
    noisy = math.isfinite(snr)
    samples = []
    for i, ss in enumerate(seq_ss):
        rng = np.random.default_rng(ss)
        steps = rng.normal(size=(t_len, 2))
        w = np.empty((t_len, 2))
        w[0] = steps[0] * _LATENT_STD
        innov = math.sqrt(1.0 - _AR_COEFF**2) * _LATENT_STD
        for t in range(1, t_len):
            w[t] = _AR_COEFF * w[t - 1] + innov * steps[t]
        z = np.tanh(w)

        if noisy:
            nu = rng.normal(size=(t_len, 2)) * (z.std(axis=0) / math.sqrt(snr))
        else:
            nu = np.zeros_like(z)
        u = z + nu
        u_lag = np.concatenate([np.repeat(u[:1], SYNTH_LAG, axis=0), u[:-SYNTH_LAG]], axis=0)

        feats = {}
        for modality, latent in (("visual", u), ("vggish", u), ("logmel", u_lag)):
            clean = latent @ projections[modality]
            if noisy:
                coord_std = clean.std(axis=0)
                clean = clean + rng.normal(size=clean.shape) * (coord_std / math.sqrt(snr))
            feats[modality] = clean.astype(np.float32)

        sid = f"synth{i:04d}"
        labels = LabelSequence.from_raw(sid, z[:, 0], z[:, 1])
        samples.append(
            AlignedSample(
                sequence_id=sid,
                visual=feats["visual"],
                vggish=feats["vggish"],
                logmel=feats["logmel"],
                labels=labels,
            )
        )
    return samples


def write_dataset(samples: list[AlignedSample], out_dir: str | Path) -> Path:
    """Persist samples as feature/label files plus a manifest; returns the
    manifest path. Paths inside the manifest are relative to it."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for sample in samples:
        sid = sample.sequence_id
        names = {
            "visual_path": f"{sid}.visual.bin",
            "vggish_path": f"{sid}.vggish.bin",
            "logmel_path": f"{sid}.logmel.bin",
            "labels_path": f"{sid}.labels.csv",
        }
        for modality in MODALITY_CODES:
            write_feature_file(
                out / names[f"{modality}_path"],
                FeatureSequence(sid, modality, getattr(sample, modality)),
            )
        write_label_file(out / names["labels_path"], sample.labels)
        rows.append({"sequence_id": sid, **names})
    manifest = out / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest
