"""
Run configuration: schema, key-value loading and layering.

Resolution order, later wins:
    config.json "defaults" -> config.json "tasks.<task>" -> run file -> --set -> dedicated flags
"""

import json
import math
import os
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.kv_config import KeyValueFormatError, format_kv, parse_assignments, read_kv_file

from .data import DEFAULT_PERMUTATION_SEED, SyntheticTaskSpec
from .errors import ConfigError, InvalidInputError
from .model import Activation, InputMode
from .training import TrainingSettings

BASE_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
DEFAULTS_PATH = os.path.join(BASE_DIR, "config.json")


class Task(Enum):
    SMNIST = "smnist"
    PSMNIST = "psmnist"
    HAR2 = "har2"
    SYNTH = "synth"


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ModelSection(_Section):
    """Architecture knobs. Shape fields left unset are taken from the dataset."""

    hidden_dim: int = Field(default=16, gt=0)
    num_channels: int = Field(default=3, ge=1)
    base_freq: float = Field(default=1.0, gt=0, allow_inf_nan=False)
    input_mode: InputMode = InputMode.FULLY_CONNECTED
    conv_window: int = Field(default=3, ge=1)
    conv_stride: int = Field(default=1, ge=1)
    input_dim: Optional[int] = Field(default=None, gt=0)
    seq_len: Optional[int] = Field(default=None, gt=0)
    output_dim: Optional[int] = Field(default=None, gt=0)


class DataSection(_Section):
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_features: Optional[str] = None
    test_features: Optional[str] = None
    train_limit: Optional[int] = Field(default=None, gt=0)
    test_limit: Optional[int] = Field(default=None, gt=0)
    permutation_seed: int = Field(default=DEFAULT_PERMUTATION_SEED, ge=0)
    permutation_path: Optional[str] = None
    train_fraction: float = Field(default=0.8, gt=0, lt=1)
    split_seed: int = Field(default=0, ge=0)


class SynthSection(_Section):
    class_frequencies: Tuple[float, ...] = (2.0, 7.0)
    seq_len: int = Field(default=128, gt=0)
    noise_sigma: float = Field(default=0.5, ge=0, allow_inf_nan=False)
    samples_per_class: int = Field(default=200, gt=0)
    seed: int = Field(default=0, ge=0)
    phase_jitter: float = Field(default=math.pi / 4, ge=0, allow_inf_nan=False)

    @field_validator("class_frequencies", mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(part.strip() for part in value.split(",") if part.strip())
        return value

    def task_spec(self) -> SyntheticTaskSpec:
        return SyntheticTaskSpec(
            class_frequencies=self.class_frequencies,
            seq_len=self.seq_len,
            noise_sigma=self.noise_sigma,
            samples_per_class=self.samples_per_class,
            seed=self.seed,
            phase_jitter=self.phase_jitter,
        )


class MetricsSection(_Section):
    # true writes measured wall_ms into metrics.csv; the default 0 keeps the file byte-stable
    wall_clock: bool = False


class BenchSection(_Section):
    repeats: int = Field(default=7, ge=5)
    batch_size: int = Field(default=8, gt=0)
    parallel: bool = True
    activation: Activation = Activation.RELU


class GradcheckSection(_Section):
    max_parameters: int = Field(default=10_000, gt=0)
    tolerance: float = Field(default=1e-5, gt=0)
    step: float = Field(default=1e-5, gt=0)
    samples: int = Field(default=2, gt=0)
    seed: int = Field(default=0, ge=0)


class RunConfig(_Section):
    """Everything one ``ofnn`` command needs."""

    task: Task
    output_dir: str = "runs"
    workers: int = Field(default=1, ge=1)
    model: ModelSection = ModelSection()
    training: TrainingSettings = TrainingSettings()
    data: DataSection = DataSection()
    synth: SynthSection = SynthSection()
    metrics: MetricsSection = MetricsSection()
    bench: BenchSection = BenchSection()
    gradcheck: GradcheckSection = GradcheckSection()

    @model_validator(mode="after")
    def _task_inputs_present(self) -> "RunConfig":
        if self.task in (Task.SMNIST, Task.PSMNIST):
            required = ("train_images", "train_labels", "test_images", "test_labels")
        elif self.task is Task.HAR2:
            required = ("train_features", "train_labels", "test_features", "test_labels")
        else:
            required = ()
        missing = [f"data.{key}" for key in required if not getattr(self.data, key)]
        if missing:
            raise ValueError(f"task {self.task.value} needs {', '.join(missing)}")
        return self


def load_defaults(path: str = DEFAULTS_PATH) -> Dict[str, Any]:
    """Read config.json; a missing file means no repository defaults."""
    if not os.path.exists(path):
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    """``{"model.hidden_dim": "8"}`` -> ``{"model": {"hidden_dim": "8"}}``."""
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.split(".")
        if len(parts) > 2 or not all(parts):
            raise ConfigError(f"unknown config key '{key}' (expected key or section.key)")
        if len(parts) == 1:
            if isinstance(nested.get(key), dict):
                raise ConfigError(f"'{key}' is a section, not a value")
            nested[key] = value
            continue
        section, name = parts
        bucket = nested.setdefault(section, {})
        if not isinstance(bucket, dict):
            raise ConfigError(f"'{section}' is a value, not a section")
        bucket[name] = value
    return nested


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _describe(exc: ValidationError) -> str:
    first = exc.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or "config"
    more = f" (+{exc.error_count() - 1} more)" if exc.error_count() > 1 else ""
    return f"{location}: {first['msg']}{more}"


def resolve_run_config(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    defaults: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    """
    Layer repository defaults, the run file and overrides into a validated RunConfig.

    Args:
        path: Run file (flat ``section.key = value``); None uses defaults and overrides only
        overrides: Flat ``section.key`` -> value pairs applied last
        defaults: Parsed config.json; None reads it from the repository root

    Raises:
        ConfigError: Unreadable file, unknown key or a value that fails validation
    """
    if defaults is None:
        defaults = load_defaults()

    flat: Dict[str, Any] = {}
    if path is not None:
        try:
            flat.update(read_kv_file(path))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except KeyValueFormatError as exc:
            raise ConfigError(str(exc)) from exc
    flat.update(overrides or {})

    task = flat.get("task") or defaults.get("defaults", {}).get("task")
    if not task:
        raise ConfigError("task: not set (expected one of smnist, psmnist, har2, synth)")
    task_defaults = defaults.get("tasks", {}).get(str(task), {})

    merged = deep_merge(defaults.get("defaults", {}), task_defaults)
    merged = deep_merge(merged, nest(flat))
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from exc
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc


def parse_overrides(assignments) -> Dict[str, str]:
    """``--set`` values to a flat mapping."""
    try:
        return parse_assignments(assignments)
    except KeyValueFormatError as exc:
        raise ConfigError(str(exc)) from exc


def to_flat(run_config: RunConfig) -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in run_config.model_dump(mode="json").items():
        if isinstance(value, dict):
            for name, inner in value.items():
                flat[f"{key}.{name}"] = inner
        else:
            flat[key] = value
    return flat


def write_run_file(path: str, run_config: RunConfig):
    """Write the resolved config so ``--config path`` reproduces the run."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_kv(to_flat(run_config), header="Resolved O-FNN run configuration"))
