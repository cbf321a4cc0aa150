"""
Files a run leaves behind: metrics.csv, bench.csv, the parameter blob and manifest.json.

Parameter blob (all integers little-endian uint32):
    b"OFNN" | version=1 | array count=4
    per array, in the order W_x, b_x, W_y, b_y:
        ndim | dim_0 ... dim_{ndim-1} | prod(dims) float64 values (little-endian, row-major)
"""

import csv
import json
import platform
import struct
from datetime import datetime
from importlib import metadata
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from .errors import DataError, InvalidInputError
from .model import PARAM_NAMES, ModelConfig, Params, param_shapes
from .training import EpochRecord

BLOB_MAGIC = b"OFNN"
BLOB_VERSION = 1

METRICS_HEADER = ["epoch", "lr", "train_loss", "train_acc", "test_acc", "wall_ms"]
BENCH_HEADER = ["phase", "multiplies", "adds", "trig_evals", "median_ms"]


def _number(value: Optional[float]) -> str:
    if value is None:
        return ""
    return repr(float(value))


class MetricsWriter:
    """Streams one metrics.csv row per epoch, flushing as it goes."""

    def __init__(self, path: str, wall_clock: bool = False):
        self.path = path
        self.wall_clock = wall_clock
        self._file = open(path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(METRICS_HEADER)
        self._file.flush()

    def write(self, record: EpochRecord):
        self._writer.writerow([
            record.epoch,
            _number(record.lr),
            _number(record.train_loss),
            _number(record.train_acc),
            _number(record.test_acc),
            f"{record.wall_ms:.3f}" if self.wall_clock else "0",
        ])
        self._file.flush()

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def write_bench_csv(path: str, rows: Iterable[Dict[str, Any]]):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=BENCH_HEADER, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row.get(key, "") for key in BENCH_HEADER})


def save_params(path: str, params: Params):
    arrays = params.arrays()
    with open(path, "wb") as f:
        f.write(BLOB_MAGIC)
        f.write(struct.pack("<II", BLOB_VERSION, len(PARAM_NAMES)))
        for name in PARAM_NAMES:
            array = np.ascontiguousarray(arrays[name], dtype="<f8")
            f.write(struct.pack("<I", array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(array.tobytes(order="C"))


def load_params(path: str, config: Optional[ModelConfig] = None) -> Params:
    """
    Read a parameter blob. With ``config``, shapes must match it
    (InvalidInputError otherwise); format problems raise DataError.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError as exc:
        raise DataError(f"parameter file not found: {path}") from exc

    def take(offset: int, size: int) -> bytes:
        if offset + size > len(raw):
            raise DataError(f"{path}: truncated parameter blob")
        return raw[offset:offset + size]

    if take(0, 4) != BLOB_MAGIC:
        raise DataError(f"{path}: not an O-FNN parameter blob")
    version, count = struct.unpack("<II", take(4, 8))
    if version != BLOB_VERSION:
        raise DataError(f"{path}: unsupported blob version {version}")
    if count != len(PARAM_NAMES):
        raise DataError(f"{path}: expected {len(PARAM_NAMES)} arrays, found {count}")

    offset = 12
    arrays = {}
    for name in PARAM_NAMES:
        (ndim,) = struct.unpack("<I", take(offset, 4))
        offset += 4
        shape = struct.unpack(f"<{ndim}I", take(offset, 4 * ndim))
        offset += 4 * ndim
        size = int(np.prod(shape)) * 8
        arrays[name] = np.frombuffer(take(offset, size), dtype="<f8").reshape(shape).astype(np.float64)
        offset += size
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes after the last array")

    params = Params(**arrays)
    if config is not None:
        expected = param_shapes(config)
        for name, array in params.arrays().items():
            if array.shape != expected[name]:
                raise InvalidInputError(
                    f"{path}: {name} has shape {array.shape}, config expects {expected[name]}"
                )
    return params


def _version(package: str) -> str:
    try:
        return metadata.version(package)
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(path: str, command: str, resolved: Dict[str, Any], extra: Optional[Dict[str, Any]] = None):
    """Everything needed to reproduce a run, as JSON."""
    manifest = {
        "command": command,
        "created": datetime.now().isoformat(timespec="seconds"),
        "config": resolved,
        "python": platform.python_version(),
        "libraries": {name: _version(name) for name in ("numpy", "pydantic", "click", "python-dotenv")},
    }
    if extra:
        manifest.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
