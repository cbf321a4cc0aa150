"""
Datasets for O-FNN runs: sMNIST / psMNIST from IDX files, HAR-2 from text,
and a synthetic frequency-detection task.

HAR-2 text layout (one sample per line in the features file):
    1152 numbers separated by commas and/or whitespace, the 128 x 9 window
    flattened timestep-major (t0c0 t0c1 ... t0c8 t1c0 ...). The labels file has
    one UCI HAR activity id (1-6) per line, binarized as
    1 WALKING, 2 WALKING_UPSTAIRS, 3 WALKING_DOWNSTAIRS  -> 1 (moving)
    4 SITTING, 5 STANDING, 6 LAYING                     -> 0 (stationary)

Every loader is a pure function of its inputs; malformed files are rejected, not repaired.
"""

import gzip
import math
import os
import re
import struct
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BadMagicError,
    CountMismatchError,
    DataError,
    Har2FormatError,
    InvalidInputError,
    TruncatedFileError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
MNIST_CLASSES = 10

PSMNIST_LENGTH = 784
DEFAULT_PERMUTATION_SEED = 42

HAR2_SEQ_LEN = 128
HAR2_CHANNELS = 9
HAR2_BINARY_LABELS = {1: 1, 2: 1, 3: 1, 4: 0, 5: 0, 6: 0}

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class Dataset:
    """Labelled sequences sharing one (N, m) shape. Treat as immutable."""

    sequences: np.ndarray  # (S, N, m) float64
    labels: np.ndarray     # (S,) int64
    name: str
    num_classes: int
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None

    def __post_init__(self):
        sequences = np.asarray(self.sequences, dtype=np.float64)
        labels = np.asarray(self.labels)
        if sequences.ndim != 3:
            raise InvalidInputError(f"{self.name}: sequences must be (samples, seq_len, input_dim), got {sequences.shape}")
        if labels.ndim != 1 or labels.shape[0] != sequences.shape[0]:
            raise InvalidInputError(f"{self.name}: {labels.shape} labels for {sequences.shape[0]} sequences")
        if sequences.shape[0] == 0:
            raise InvalidInputError(f"{self.name}: dataset is empty")
        if not np.issubdtype(labels.dtype, np.integer):
            raise InvalidInputError(f"{self.name}: labels must be integers")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise InvalidInputError(f"{self.name}: labels outside [0, {self.num_classes})")
        if not np.all(np.isfinite(sequences)):
            raise InvalidInputError(f"{self.name}: non-finite feature values")
        object.__setattr__(self, "sequences", sequences)
        object.__setattr__(self, "labels", labels.astype(np.int64, copy=False))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def seq_len(self) -> int:
        return int(self.sequences.shape[1])

    @property
    def input_dim(self) -> int:
        return int(self.sequences.shape[2])

    @property
    def metadata(self) -> dict:
        return {
            "name": self.name,
            "N": self.seq_len,
            "m": self.input_dim,
            "num_classes": self.num_classes,
            "samples": len(self),
        }

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            sequences=self.sequences[indices],
            labels=self.labels[indices],
            name=name or self.name,
            num_classes=self.num_classes,
            feature_mean=self.feature_mean,
            feature_std=self.feature_std,
        )

    def head(self, count: Optional[int]) -> "Dataset":
        """First ``count`` samples (all of them when count is None or too large)."""
        if count is None or count >= len(self):
            return self
        return self.subset(np.arange(count))


@dataclass(frozen=True)
class PermutationSpec:
    """Fixed pixel order for psMNIST: sequence'[t] = sequence[perm[t]]."""

    perm: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.shape[0])):
            raise InvalidInputError("permutation must be a bijection on 0..len-1")
        object.__setattr__(self, "perm", perm)

    @classmethod
    def from_seed(cls, seed: int = DEFAULT_PERMUTATION_SEED, length: int = PSMNIST_LENGTH) -> "PermutationSpec":
        return cls(perm=np.random.default_rng(seed).permutation(length), seed=seed)

    @classmethod
    def identity(cls, length: int = PSMNIST_LENGTH) -> "PermutationSpec":
        return cls(perm=np.arange(length))

    @classmethod
    def from_file(cls, path: str) -> "PermutationSpec":
        """Read newline-delimited integers."""
        try:
            with open(path, "r", encoding="utf-8") as f:
                values = [int(line) for line in f if line.strip()]
        except FileNotFoundError as exc:
            raise DataError(f"permutation file not found: {path}") from exc
        except ValueError as exc:
            raise DataError(f"{path}: permutation entries must be integers ({exc})") from exc
        try:
            return cls(perm=np.array(values, dtype=np.int64))
        except InvalidInputError as exc:
            raise DataError(f"{path}: {exc}") from exc

    def to_file(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(str(int(index)) for index in self.perm) + "\n")

    def inverse(self) -> "PermutationSpec":
        return PermutationSpec(perm=np.argsort(self.perm))


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """
    Class k is sin(2 pi f_k t / N + phase) + N(0, noise_sigma^2), t = 1..N,
    with phase ~ U(-phase_jitter, +phase_jitter).
    """

    class_frequencies: Tuple[float, ...]
    seq_len: int = 128
    noise_sigma: float = 0.5
    samples_per_class: int = 200
    seed: int = 0
    phase_jitter: float = math.pi / 4

    def __post_init__(self):
        freqs = tuple(float(f) for f in self.class_frequencies)
        object.__setattr__(self, "class_frequencies", freqs)
        if len(freqs) < 2:
            raise InvalidInputError("synthetic task needs at least 2 classes")
        if len(set(freqs)) != len(freqs):
            raise InvalidInputError(f"class frequencies must be distinct, got {freqs}")
        if self.seq_len <= 0 or self.samples_per_class <= 0:
            raise InvalidInputError("seq_len and samples_per_class must be positive")
        if self.noise_sigma < 0 or self.phase_jitter < 0:
            raise InvalidInputError("noise_sigma and phase_jitter must be non-negative")
        for freq in freqs:
            if not 0 < freq < self.seq_len / 2:
                raise InvalidInputError(
                    f"class frequency {freq} is outside (0, {self.seq_len / 2}) cycles per sequence (aliasing)"
                )

    @property
    def num_classes(self) -> int:
        return len(self.class_frequencies)


def _open_maybe_gzip(path: str):
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path: str, magic: int) -> Tuple[Tuple[int, ...], np.ndarray]:
    """Parse an IDX file of unsigned bytes; returns (dims, flat uint8 payload)."""
    try:
        with _open_maybe_gzip(path) as f:
            raw = f.read()
    except FileNotFoundError as exc:
        raise DataError(f"IDX file not found: {path}") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagicError(f"{path}: magic number 0x{found:08x}, expected 0x{magic:08x}")

    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedFileError(f"{path}: header needs {header_len} bytes, file has {len(raw)}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header_len])

    expected = int(np.prod(dims))
    payload = len(raw) - header_len
    if payload < expected:
        raise TruncatedFileError(f"{path}: expected {expected} data bytes, found {payload}")
    return dims, np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_len)


def load_idx(images_path: str, labels_path: str, name: str = "smnist", num_classes: int = MNIST_CLASSES) -> Dataset:
    """
    Load an IDX image/label pair as pixel sequences.

    Each rows x cols image becomes a (rows*cols, 1) sequence in row-major scan
    order with pixels scaled to [0, 1].
    """
    image_dims, pixels = _read_idx(images_path, IDX_IMAGE_MAGIC)
    (label_count,), labels = _read_idx(labels_path, IDX_LABEL_MAGIC)

    count, rows, cols = image_dims
    if count != label_count:
        raise CountMismatchError(f"{images_path} has {count} images but {labels_path} has {label_count} labels")
    if count == 0:
        raise DataError(f"{images_path}: no images")
    if labels.max() >= num_classes:
        raise DataError(f"{labels_path}: label {int(labels.max())} outside [0, {num_classes})")

    sequences = pixels.reshape(count, rows * cols, 1).astype(np.float64) / 255.0
    return Dataset(sequences=sequences, labels=labels.astype(np.int64), name=name, num_classes=num_classes)


def permute(dataset: Dataset, spec: PermutationSpec) -> Dataset:
    """Apply one fixed pixel permutation to every sample."""
    if dataset.input_dim != 1 or dataset.seq_len != spec.perm.shape[0]:
        raise InvalidInputError(
            f"permutation of length {spec.perm.shape[0]} needs (N={spec.perm.shape[0]}, m=1) sequences, "
            f"got (N={dataset.seq_len}, m={dataset.input_dim})"
        )
    return Dataset(
        sequences=dataset.sequences[:, spec.perm, :],
        labels=dataset.labels,
        name=dataset.name,
        num_classes=dataset.num_classes,
        feature_mean=dataset.feature_mean,
        feature_std=dataset.feature_std,
    )


def _read_numeric_rows(path: str) -> np.ndarray:
    """Rows of numbers separated by commas and/or whitespace; blank lines skipped."""
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    rows: List[List[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            fields = [token for token in re.split(r"[,\s]+", stripped) if token]
            try:
                values = [float(token) for token in fields]
            except ValueError as exc:
                raise Har2FormatError(f"{path}:{line_no}: non-numeric field ({exc})") from exc
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise Har2FormatError(f"{path}:{line_no}: ragged row with {len(values)} fields, expected {width}")
            rows.append(values)
    if not rows:
        raise Har2FormatError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def load_har2(
    features_path: str,
    labels_path: str,
    stats: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    name: str = "har2"
) -> Dataset:
    """
    Load HAR-2 windows as (128, 9) sequences with binarized labels.

    Features are z-scored per inertial channel. Pass the training split's
    (feature_mean, feature_std) as ``stats`` when loading the test split;
    without it the statistics of this file are used. Constant channels map to 0.
    """
    features = _read_numeric_rows(features_path)
    if features.shape[1] != HAR2_SEQ_LEN * HAR2_CHANNELS:
        raise Har2FormatError(
            f"{features_path}: rows have {features.shape[1]} values, expected {HAR2_SEQ_LEN * HAR2_CHANNELS} (128 x 9)"
        )
    if not np.all(np.isfinite(features)):
        raise Har2FormatError(f"{features_path}: non-finite values")

    raw_labels = _read_numeric_rows(labels_path)
    if raw_labels.shape[1] != 1:
        raise Har2FormatError(f"{labels_path}: expected one label per line, got {raw_labels.shape[1]}")
    raw_labels = raw_labels[:, 0]
    if raw_labels.shape[0] != features.shape[0]:
        raise Har2FormatError(
            f"{features_path} has {features.shape[0]} samples but {labels_path} has {raw_labels.shape[0]} labels"
        )
    labels = np.empty(raw_labels.shape[0], dtype=np.int64)
    for i, value in enumerate(raw_labels):
        if value != int(value) or int(value) not in HAR2_BINARY_LABELS:
            raise Har2FormatError(f"{labels_path}: unknown activity label {value} on data row {i + 1}")
        labels[i] = HAR2_BINARY_LABELS[int(value)]

    sequences = features.reshape(-1, HAR2_SEQ_LEN, HAR2_CHANNELS)
    if stats is None:
        mean = sequences.mean(axis=(0, 1))
        std = sequences.std(axis=(0, 1))
    else:
        mean, std = (np.asarray(s, dtype=np.float64) for s in stats)
    usable = std > _NORM_EPS
    normalized = np.where(usable, (sequences - mean) / np.where(usable, std, 1.0), 0.0)

    return Dataset(
        sequences=normalized,
        labels=labels,
        name=name,
        num_classes=2,
        feature_mean=mean,
        feature_std=std,
    )


def synth_frequency_task(spec: SyntheticTaskSpec) -> Dataset:
    """Balanced sinusoid classes, ``samples_per_class`` each, seeded; m = 1."""
    rng = np.random.default_rng(spec.seed)
    t = np.arange(1, spec.seq_len + 1, dtype=np.float64)
    sequences = []
    labels = []
    for label, freq in enumerate(spec.class_frequencies):
        phases = rng.uniform(-spec.phase_jitter, spec.phase_jitter, size=(spec.samples_per_class, 1))
        noise = rng.normal(0.0, spec.noise_sigma, size=(spec.samples_per_class, spec.seq_len))
        sequences.append(np.sin(2.0 * math.pi * freq * t / spec.seq_len + phases) + noise)
        labels.append(np.full(spec.samples_per_class, label, dtype=np.int64))
    return Dataset(
        sequences=np.concatenate(sequences)[:, :, None],
        labels=np.concatenate(labels),
        name="synth",
        num_classes=spec.num_classes,
    )


def dft_oracle_predict(sequences: np.ndarray, class_frequencies: Sequence[float]) -> np.ndarray:
    """Pick the class whose frequency has the largest DFT magnitude (brute-force sum, m = 1)."""
    sequences = np.asarray(sequences, dtype=np.float64)
    if sequences.ndim == 3:
        sequences = sequences[:, :, 0]
    length = sequences.shape[1]
    t = np.arange(1, length + 1, dtype=np.float64)
    freqs = np.asarray(class_frequencies, dtype=np.float64)
    basis = np.exp(-2j * math.pi * np.outer(t, freqs) / length)
    return np.argmax(np.abs(sequences @ basis), axis=1)


def split(dataset: Dataset, train_fraction: float, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Seeded, label-stratified, disjoint and exhaustive train/test split."""
    if not 0 < train_fraction < 1:
        raise InvalidInputError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx: List[np.ndarray] = []
    test_idx: List[np.ndarray] = []
    for label in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == label)
        if members.shape[0] < 2:
            raise InvalidInputError(f"class {int(label)} has {members.shape[0]} sample(s); need at least 2 to split")
        shuffled = rng.permutation(members)
        cut = min(max(int(round(train_fraction * members.shape[0])), 1), members.shape[0] - 1)
        train_idx.append(shuffled[:cut])
        test_idx.append(shuffled[cut:])
    train = dataset.subset(np.sort(np.concatenate(train_idx)), name=f"{dataset.name}-train")
    test = dataset.subset(np.sort(np.concatenate(test_idx)), name=f"{dataset.name}-test")
    return train, test


def iter_batches(count: int, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[np.ndarray]:
    """Index arrays of at most ``batch_size``; shuffled when ``rng`` is given."""
    order = rng.permutation(count) if rng is not None else np.arange(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]
