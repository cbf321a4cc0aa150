"""
Runner - the train / eval / gradcheck / bench commands behind the CLI.

Every command returns a result dict ``{"status", "message", "exit_code", ...}``;
library errors are caught here and mapped to their exit codes.
"""

import os
from datetime import datetime
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from utils.run_logger import log_run_event

from .artifacts import (
    MetricsWriter,
    load_params,
    save_params,
    write_bench_csv,
    write_manifest,
)
from .bench import (
    Phase,
    count_baseline_ops,
    count_forward_ops,
    multiply_reduction,
    time_baseline,
    time_forward,
    trace_baseline_ops,
    trace_forward_ops,
)
from .data import (
    Dataset,
    PermutationSpec,
    load_har2,
    load_idx,
    permute,
    split,
    synth_frequency_task,
)
from .errors import ConfigError, NumericFailure, OFNNError
from .model import ModelConfig, OscillatoryFourierNetwork, param_count
from .run_config import RunConfig, Task, to_flat, write_run_file
from .training import (
    BackwardMode,
    EpochRecord,
    backward,
    evaluate,
    finite_diff_gradients,
    fit,
    loss_and_output_grad,
    mode_scale_ratios,
    multi_seed_eval,
)

PARALLEL_TOLERANCE = 1e-12
CORRUPTION_FACTOR = 1.5

METRICS_FILE = "metrics.csv"
PARAMS_FILE = "final_params.bin"
MANIFEST_FILE = "manifest.json"
RUN_FILE = "run.cfg"
PERMUTATION_FILE = "permutation.txt"
BENCH_FILE = "bench.csv"

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def _shipped_path(path: str) -> str:
    """Relative paths not found from the working directory resolve against the repository root."""
    if os.path.isabs(path) or os.path.exists(path):
        return path
    return os.path.join(REPO_ROOT, path)


def _error(exc: Exception) -> Dict[str, Any]:
    exit_code = exc.exit_code if isinstance(exc, OFNNError) else ConfigError.exit_code
    return {"status": "error", "message": f"{type(exc).__name__}: {exc}", "exit_code": exit_code}


class Runner:
    """Executes one command for a resolved RunConfig."""

    def __init__(
        self,
        run_config: RunConfig,
        activity_callback: Optional[Callable[[Dict[str, Any]], None]] = None
    ):
        self.run_config = run_config
        self.output_dir = run_config.output_dir
        self.activity_callback = activity_callback
        self.permutation: Optional[PermutationSpec] = None

    def _log_activity(self, command: str, action: str, details: str = ""):
        activity = {
            "timestamp": datetime.now().isoformat(timespec="seconds"),
            "command": command,
            "action": action,
            "details": details,
        }
        if self.activity_callback:
            self.activity_callback(activity)

    def _log_result(self, command: str, result: Dict[str, Any]):
        # an error before any output exists must not create the run directory
        if os.path.isdir(self.output_dir):
            log_run_event(
                self.output_dir,
                command,
                result["status"],
                result["message"],
                details={"task": self.run_config.task.value, "workers": self.run_config.workers},
            )
        return result

    # ------------------------------------------------------------------ data

    def load_datasets(self) -> Tuple[Dataset, Dataset]:
        """Train and test splits for the configured task. Reads every file before anything is written."""
        cfg = self.run_config
        data = cfg.data
        if cfg.task is Task.SYNTH:
            full = synth_frequency_task(cfg.synth.task_spec())
            return split(full, data.train_fraction, data.split_seed)

        if cfg.task is Task.HAR2:
            train = load_har2(data.train_features, data.train_labels, name="har2-train")
            test = load_har2(
                data.test_features,
                data.test_labels,
                stats=(train.feature_mean, train.feature_std),
                name="har2-test",
            )
            return train.head(data.train_limit), test.head(data.test_limit)

        name = cfg.task.value
        train = load_idx(data.train_images, data.train_labels, name=f"{name}-train").head(data.train_limit)
        test = load_idx(data.test_images, data.test_labels, name=f"{name}-test").head(data.test_limit)
        if cfg.task is Task.PSMNIST:
            if data.permutation_path:
                self.permutation = PermutationSpec.from_file(_shipped_path(data.permutation_path))
            else:
                self.permutation = PermutationSpec.from_seed(data.permutation_seed, train.seq_len)
            train, test = permute(train, self.permutation), permute(test, self.permutation)
        return train, test

    def build_model_config(self, shape: Optional[Dataset] = None) -> ModelConfig:
        """ModelConfig from the model section, filling shape fields from ``shape``."""
        section = self.run_config.model
        dims = {"input_dim": section.input_dim, "seq_len": section.seq_len, "output_dim": section.output_dim}
        if shape is not None:
            actual = {"input_dim": shape.input_dim, "seq_len": shape.seq_len, "output_dim": shape.num_classes}
            for key, value in actual.items():
                if dims[key] is not None and dims[key] != value:
                    raise ConfigError(f"model.{key} = {dims[key]} but the {shape.name} data has {value}")
                dims[key] = value
        missing = [f"model.{key}" for key, value in dims.items() if value is None]
        if missing:
            raise ConfigError(f"{', '.join(missing)} not set and no dataset to infer from")
        try:
            return ModelConfig(
                hidden_dim=section.hidden_dim,
                num_channels=section.num_channels,
                base_freq=section.base_freq,
                input_mode=section.input_mode,
                conv_window=section.conv_window,
                conv_stride=section.conv_stride,
                **dims,
            )
        except ValidationError as exc:
            first = exc.errors()[0]
            raise ConfigError(f"model: {first['msg']}") from exc

    def _prepare_output(self, command: str, config: ModelConfig):
        os.makedirs(self.output_dir, exist_ok=True)
        write_run_file(os.path.join(self.output_dir, RUN_FILE), self.run_config)
        write_manifest(
            os.path.join(self.output_dir, MANIFEST_FILE),
            command,
            to_flat(self.run_config),
            extra={
                "model": config.model_dump(mode="json"),
                "param_count": param_count(config),
                "seed": self.run_config.training.seed,
                "workers": self.run_config.workers,
            },
        )
        if self.permutation is not None:
            self.permutation.to_file(os.path.join(self.output_dir, PERMUTATION_FILE))

    # -------------------------------------------------------------- commands

    def train(self) -> Dict[str, Any]:
        cfg = self.run_config
        try:
            train_set, test_set = self.load_datasets()
            config = self.build_model_config(train_set)
            self._prepare_output("train", config)
            self._log_activity(
                "train", "start",
                f"{len(train_set)} train / {len(test_set)} test, {param_count(config)} parameters",
            )

            model = OscillatoryFourierNetwork(config, seed=cfg.training.seed, workers=cfg.workers)
            metrics_path = os.path.join(self.output_dir, METRICS_FILE)
            with MetricsWriter(metrics_path, wall_clock=cfg.metrics.wall_clock) as writer:

                def on_epoch(record: EpochRecord):
                    writer.write(record)
                    self._log_activity(
                        "train", f"epoch {record.epoch}",
                        f"lr={record.lr:.3g} loss={record.train_loss:.4f} "
                        f"train_acc={record.train_acc:.4f} test_acc={record.test_acc:.4f} "
                        f"({record.wall_ms:.0f} ms)",
                    )

                records = fit(model, train_set, test_set, cfg.training, on_epoch=on_epoch)

            save_params(os.path.join(self.output_dir, PARAMS_FILE), model.params)
            final = evaluate(model, test_set, cfg.training.loss)
            result = {
                "status": "success",
                "message": (
                    f"trained {len(records)} epochs in {sum(r.wall_ms for r in records):.0f} ms: "
                    f"test_loss={final.loss:.4f} test_acc={final.accuracy:.4f} "
                    f"-> {self.output_dir}"
                ),
                "exit_code": 0,
                "records": records,
                "test_accuracy": final.accuracy,
            }
        except (OFNNError, ValidationError) as exc:
            result = _error(exc)
        return self._log_result("train", result)

    def evaluate(self, params_path: Optional[str] = None, seeds: int = 1) -> Dict[str, Any]:
        """
        seeds == 1 scores the saved parameters (std 0); seeds >= 2 retrains
        from scratch with seeds seed .. seed+k-1 and reports mean and std.
        """
        cfg = self.run_config
        try:
            if seeds < 1:
                raise ConfigError(f"--seeds must be at least 1, got {seeds}")
            train_set, test_set = self.load_datasets()
            config = self.build_model_config(train_set)

            if seeds == 1:
                path = params_path or os.path.join(self.output_dir, PARAMS_FILE)
                params = load_params(path, config)
                model = OscillatoryFourierNetwork(config, params=params, workers=cfg.workers)
                report = evaluate(model, test_set, cfg.training.loss)
                result = {
                    "status": "success",
                    "message": (
                        f"test_loss={report.loss:.6f} test_acc={report.accuracy:.6f} "
                        f"(mean {report.accuracy:.4f} +/- 0.0000 over 1 seed)"
                    ),
                    "exit_code": 0,
                    "mean": report.accuracy,
                    "std": 0.0,
                }
            else:
                first = cfg.training.seed
                seed_list = list(range(first, first + seeds))
                self._log_activity("eval", "multi-seed", f"retraining with seeds {seed_list}")
                report = multi_seed_eval(config, train_set, test_set, seed_list, cfg.training, cfg.workers)
                per_seed = ", ".join(f"{seed}: {acc:.4f}" for seed, acc in report.accuracies)
                result = {
                    "status": "success",
                    "message": f"test_acc mean {report.mean:.4f} +/- {report.std:.4f} over {seeds} seeds ({per_seed})",
                    "exit_code": 0,
                    "mean": report.mean,
                    "std": report.std,
                }
        except (OFNNError, ValidationError) as exc:
            result = _error(exc)
        return self._log_result("eval", result)

    def gradcheck(self, corrupt_backward: bool = False) -> Dict[str, Any]:
        """Exact-chain-rule backward against central differences on a few training samples."""
        cfg = self.run_config
        check = cfg.gradcheck
        try:
            train_set, _ = self.load_datasets()
            config = self.build_model_config(train_set)
            count = param_count(config)
            if count > check.max_parameters:
                raise ConfigError(
                    f"model has {count} parameters; gradcheck is limited to {check.max_parameters}"
                )

            model = OscillatoryFourierNetwork(config, seed=check.seed)
            worst: Dict[str, float] = {}
            ratios = None
            for index in range(min(check.samples, len(train_set))):
                sequence = train_set.sequences[index]
                label = int(train_set.labels[index])
                logits, cache = model.forward(sequence[None])
                _, dL_dy = loss_and_output_grad(logits[0], label, cfg.training.loss)
                analytic = backward(
                    cache, dL_dy, model.params, model.channels, config, BackwardMode.EXACT_CHAIN_RULE
                )
                if corrupt_backward:
                    analytic.g_Wx = analytic.g_Wx * CORRUPTION_FACTOR
                numeric = finite_diff_gradients(
                    model.params, model.channels, sequence, label, config, cfg.training.loss, check.step
                )
                for name, value in analytic.max_relative_error(numeric).items():
                    worst[name] = max(worst.get(name, 0.0), value)
                if ratios is None:
                    ratios = mode_scale_ratios(cache, dL_dy, model.params, model.channels)

            max_error = max(worst.values())
            passed = max_error <= check.tolerance
            lines = [f"{name}: max_rel_err={value:.3e}" for name, value in worst.items()]
            lines.append(
                "exact/paper scale ratios per channel: "
                + ", ".join(f"c{c}={ratio:.9f}" for c, ratio in enumerate(ratios))
            )
            lines.append(
                f"{'PASS' if passed else 'FAIL'}: max relative error {max_error:.3e} "
                f"(tolerance {check.tolerance:.0e}, {count} parameters, loss {cfg.training.loss.value})"
            )
            result = {
                "status": "success" if passed else "failed",
                "message": "\n".join(lines),
                "exit_code": 0 if passed else 1,
                "max_relative_error": max_error,
                "scale_ratios": ratios,
            }
        except (OFNNError, ValidationError) as exc:
            result = _error(exc)
        return self._log_result("gradcheck", result)

    def bench(self, parallel: Optional[bool] = None) -> Dict[str, Any]:
        """Instrumented op counts and forward timings; writes bench.csv."""
        cfg = self.run_config
        settings = cfg.bench
        parallel = settings.parallel if parallel is None else parallel
        try:
            section = cfg.model
            if None in (section.input_dim, section.seq_len, section.output_dim):
                shape, _ = self.load_datasets()
            else:
                shape = None
            config = self.build_model_config(shape)

            rows = []
            for label, closed_form, tracer in (
                ("ofnn", count_forward_ops(config), trace_forward_ops),
                ("baseline", count_baseline_ops(config), trace_baseline_ops),
            ):
                traced = tracer(config, seed=cfg.training.seed).counts
                for phase in Phase:
                    if traced[phase].as_tuple() != closed_form[phase].as_tuple():
                        raise OFNNError(
                            f"{label}.{phase.value}: instrumented counts {traced[phase].as_tuple()} "
                            f"differ from closed form {closed_form[phase].as_tuple()}"
                        )
                    rows.append({
                        "phase": f"{label}.{phase.value}",
                        "multiplies": traced[phase].multiplies,
                        "adds": traced[phase].adds,
                        "trig_evals": traced[phase].trig_evals,
                    })
            reduction = multiply_reduction(count_forward_ops(config), count_baseline_ops(config))

            self._log_activity("bench", "timing", f"batch {settings.batch_size}, {settings.repeats} repeats")
            timed_parallel = time_forward(
                config, settings.batch_size, True, settings.repeats, cfg.workers, cfg.training.seed
            )
            timed_sequential = time_forward(
                config, settings.batch_size, False, settings.repeats, 1, cfg.training.seed
            )
            gap = float(np.max(np.abs(timed_parallel.hidden - timed_sequential.hidden)))
            if gap > PARALLEL_TOLERANCE:
                raise NumericFailure(f"parallel and sequential hidden states differ by {gap:.3e}")
            timed_baseline = time_baseline(
                config, settings.batch_size, settings.activation, settings.repeats, cfg.training.seed
            )

            chosen = timed_parallel if parallel else timed_sequential
            for label, timing in (("ofnn", chosen), ("baseline", timed_baseline)):
                phase_rows = [row for row in rows if row["phase"].startswith(label + ".")]
                rows.append({
                    "phase": f"{label}.forward",
                    "multiplies": sum(row["multiplies"] for row in phase_rows),
                    "adds": sum(row["adds"] for row in phase_rows),
                    "trig_evals": sum(row["trig_evals"] for row in phase_rows),
                    "median_ms": f"{timing.median_ms:.4f}",
                })

            self._prepare_output("bench", config)
            write_bench_csv(os.path.join(self.output_dir, BENCH_FILE), rows)
            speedup = timed_sequential.median_ms / timed_parallel.median_ms
            result = {
                "status": "success",
                "message": (
                    f"hidden accumulation multiplies: ofnn 0, baseline "
                    f"{count_baseline_ops(config)[Phase.HIDDEN_ACCUMULATION].multiplies} ({reduction}); "
                    f"forward median {chosen.median_ms:.3f} ms ({'parallel' if parallel else 'sequential'}), "
                    f"parallel/sequential speedup {speedup:.2f}x, max gap {gap:.1e} -> {self.output_dir}"
                ),
                "exit_code": 0,
                "rows": rows,
            }
        except (OFNNError, ValidationError) as exc:
            result = _error(exc)
        return self._log_result("bench", result)
