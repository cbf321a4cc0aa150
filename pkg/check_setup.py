"""Quick check that the O-FNN environment is set up correctly."""

import os
import sys
import json
import tempfile


def check_imports():
    """Check that dependencies and the library modules import."""
    print("Checking imports...")

    try:
        import numpy
        import pydantic
        import click
        import dotenv
        print(f"  [OK] Dependencies installed (numpy {numpy.__version__}, pydantic {pydantic.VERSION})")
    except ImportError as e:
        print(f"  [FAIL] Missing dependency: {e}")
        print("         Run: pip install -r requirements.txt")
        return False

    try:
        from core import OscillatoryFourierNetwork, backward, finite_diff_gradients
        from core.runner import Runner
        print("  [OK] Core module")
    except ImportError as e:
        print(f"  [FAIL] Core module: {e}")
        return False

    return True


def check_config():
    """Check that config.json exists and every task resolves."""
    print("Checking configuration...")

    config_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config.json")
    if not os.path.exists(config_path):
        print(f"  [FAIL] Config file not found: {config_path}")
        return False

    try:
        with open(config_path, 'r') as f:
            config = json.load(f)
        print("  [OK] Config file is valid JSON")
    except json.JSONDecodeError as e:
        print(f"  [FAIL] Invalid JSON: {e}")
        return False

    for key in ("defaults", "tasks"):
        if key not in config:
            print(f"  [FAIL] Missing required config key: {key}")
            return False

    from core.errors import ConfigError
    from core.run_config import resolve_run_config

    try:
        resolve_run_config(overrides={"task": "synth"}, defaults=config)
        print("  [OK] synth task resolves from defaults")
    except ConfigError as e:
        print(f"  [FAIL] synth defaults: {e}")
        return False

    return True


def check_directories():
    """Check that required directories exist."""
    print("Checking directories...")

    base_dir = os.path.dirname(os.path.abspath(__file__))
    all_ok = True
    for dir_name in ("core", "utils", "configs", "tests"):
        if os.path.isdir(os.path.join(base_dir, dir_name)):
            print(f"  [OK] {dir_name}/")
        else:
            print(f"  [FAIL] {dir_name}/ not found")
            all_ok = False
    return all_ok


def check_gradients():
    """Run the tiny gradient check end to end."""
    print("Checking gradients...")

    from core.run_config import resolve_run_config
    from core.runner import Runner

    base_dir = os.path.dirname(os.path.abspath(__file__))
    with tempfile.TemporaryDirectory() as tmp:
        run_config = resolve_run_config(
            os.path.join(base_dir, "configs", "gradcheck_tiny.cfg"),
            overrides={"output_dir": tmp},
        )
        result = Runner(run_config).gradcheck()

    if result["exit_code"] == 0:
        print(f"  [OK] max relative error {result['max_relative_error']:.2e}")
        return True
    print(f"  [FAIL] {result['message']}")
    return False


def main():
    """Run all checks."""
    print("=" * 50)
    print("O-FNN - Setup Check")
    print("=" * 50)
    print()

    results = [("Imports", check_imports())]
    print()
    if results[0][1]:
        results.append(("Configuration", check_config()))
        print()
        results.append(("Directories", check_directories()))
        print()
        results.append(("Gradients", check_gradients()))
        print()

    print("=" * 50)
    print("Results Summary")
    print("=" * 50)

    all_passed = True
    for name, passed in results:
        status = "PASS" if passed else "FAIL"
        print(f"  {name}: {status}")
        if not passed:
            all_passed = False

    print()
    if all_passed:
        print("All checks passed! Try: python main.py train --config configs/synth.cfg")
    else:
        print("Some checks failed. Please fix the issues above.")

    return 0 if all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
