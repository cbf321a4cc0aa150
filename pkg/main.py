"""Main entry point for the O-FNN command line: ofnn train|eval|gradcheck|bench."""

import os
import json
from typing import Any, Dict, Optional, Tuple

import click

from core.errors import ConfigError
from core.run_config import RunConfig, parse_overrides, resolve_run_config
from core.runner import Runner

# Get the base directory
BASE_DIR = os.path.dirname(os.path.abspath(__file__))

# Load repository defaults
config_path = os.path.join(BASE_DIR, "config.json")
with open(config_path, 'r') as f:
    config = json.load(f)


def create_activity_callback(command: str):
    """Echo runner progress to stderr."""
    def callback(activity: Dict[str, Any]):
        details = f" {activity['details']}" if activity.get("details") else ""
        click.echo(f"[{command}] {activity['action']}:{details}", err=True)
    return callback


def _resolve(
    config_file: Optional[str],
    seed: Optional[int],
    workers: Optional[int],
    output_dir: Optional[str],
    assignments: Tuple[str, ...]
) -> RunConfig:
    overrides = parse_overrides(assignments)
    # dedicated flags beat --set
    if seed is not None:
        overrides["training.seed"] = seed
    if workers is not None:
        overrides["workers"] = workers
    if output_dir is not None:
        overrides["output_dir"] = output_dir
    return resolve_run_config(config_file, overrides, config)


def _finish(ctx: click.Context, result: Dict[str, Any]):
    is_error = result["status"] == "error"
    click.echo(result["message"], err=is_error)
    ctx.exit(result["exit_code"])


def run_options(command):
    """Options shared by every subcommand."""
    command = click.option("--output-dir", type=click.Path(file_okay=False), help="Run directory (overrides output_dir).")(command)
    command = click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE", help="Override one config key; repeatable.")(command)
    command = click.option("--workers", type=click.IntRange(min=1), help="Threads for the timestep reduction (1 is deterministic).")(command)
    command = click.option("--seed", type=click.IntRange(min=0), help="Training seed.")(command)
    command = click.option("--config", "config_file", type=click.Path(dir_okay=False), help="Run file of section.key = value lines.")(command)
    return command


def _runner(command: str, config_file, seed, workers, output_dir, assignments) -> Runner:
    run_config = _resolve(config_file, seed, workers, output_dir, assignments)
    return Runner(run_config, activity_callback=create_activity_callback(command))


@click.group()
def cli():
    """O-FNN: oscillatory Fourier neural networks trained without back-propagation through time."""


@cli.command()
@run_options
@click.pass_context
def train(ctx, config_file, seed, workers, output_dir, assignments):
    """Train to the epoch budget; writes metrics.csv, final_params.bin and manifest.json."""
    try:
        runner = _runner("train", config_file, seed, workers, output_dir, assignments)
    except ConfigError as exc:
        _finish(ctx, {"status": "error", "message": f"ConfigError: {exc}", "exit_code": exc.exit_code})
    _finish(ctx, runner.train())


@cli.command(name="eval")
@run_options
@click.option("--params", "params_path", type=click.Path(dir_okay=False), help="Parameter blob (default: <output_dir>/final_params.bin).")
@click.option("--seeds", type=int, default=1, show_default=True, help="Retrain with this many consecutive seeds and report mean +/- std.")
@click.pass_context
def eval_command(ctx, config_file, seed, workers, output_dir, assignments, params_path, seeds):
    """Score saved parameters on the test split, or retrain over several seeds."""
    try:
        runner = _runner("eval", config_file, seed, workers, output_dir, assignments)
    except ConfigError as exc:
        _finish(ctx, {"status": "error", "message": f"ConfigError: {exc}", "exit_code": exc.exit_code})
    _finish(ctx, runner.evaluate(params_path, seeds))


@cli.command()
@run_options
@click.option("--corrupt-backward", is_flag=True, hidden=True)
@click.pass_context
def gradcheck(ctx, config_file, seed, workers, output_dir, assignments, corrupt_backward):
    """Compare the exact backward pass with central finite differences."""
    try:
        runner = _runner("gradcheck", config_file, seed, workers, output_dir, assignments)
    except ConfigError as exc:
        _finish(ctx, {"status": "error", "message": f"ConfigError: {exc}", "exit_code": exc.exit_code})
    _finish(ctx, runner.gradcheck(corrupt_backward=corrupt_backward))


@cli.command()
@run_options
@click.option("--parallel/--no-parallel", default=None, help="Time the blocked parallel path or the sequential reference.")
@click.pass_context
def bench(ctx, config_file, seed, workers, output_dir, assignments, parallel):
    """Count operations per phase and time the forward pass; writes bench.csv."""
    try:
        runner = _runner("bench", config_file, seed, workers, output_dir, assignments)
    except ConfigError as exc:
        _finish(ctx, {"status": "error", "message": f"ConfigError: {exc}", "exit_code": exc.exit_code})
    _finish(ctx, runner.bench(parallel=parallel))


if __name__ == "__main__":
    cli(prog_name="ofnn")
