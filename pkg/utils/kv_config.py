"""Flat ``section.key = value`` run files, read with python-dotenv."""

from __future__ import annotations

import os
from typing import Dict, Iterable, Mapping

from dotenv import dotenv_values


class KeyValueFormatError(ValueError):
    """A run file or ``key=value`` assignment could not be parsed."""


def read_kv_file(path: str) -> Dict[str, str]:
    """Load every assignment in ``path``. Comments and blank lines are skipped.

    Values are taken literally (no ``${VAR}`` expansion, no environment lookups).
    A bare key without ``=`` is rejected.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)

    values = dotenv_values(path, interpolate=False)
    entries: Dict[str, str] = {}
    for key, value in values.items():
        if not key:
            continue
        if value is None:
            raise KeyValueFormatError(f"{path}: '{key}' has no value (expected key = value)")
        entries[key] = value.strip()

    return entries


def parse_assignments(assignments: Iterable[str]) -> Dict[str, str]:
    """Parse ``key=value`` strings from the command line, later ones winning."""
    entries: Dict[str, str] = {}
    for item in assignments:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise KeyValueFormatError(f"expected key=value, got '{item}'")
        entries[key] = value.strip()
    return entries


def format_kv(entries: Mapping[str, object], header: str = "") -> str:
    """Render entries as a run file, keys sorted so the output is stable."""
    lines = [f"# {line}" for line in header.splitlines()] if header else []
    for key in sorted(entries):
        value = entries[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        elif value is None:
            continue
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
