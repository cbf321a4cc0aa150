"""Run log - appends timestamped entries to {output_dir}/log.md."""

import os
from datetime import datetime
from typing import Optional


def log_run_event(
    output_dir: str,
    command: str,
    status: str,
    message: str = "",
    details: Optional[dict] = None
):
    """Append one event to {output_dir}/log.md.

    Long messages are truncated. Logging failures are swallowed.
    """
    log_path = os.path.join(output_dir, "log.md")
    timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")

    text = message[:500] + "..." if len(message) > 500 else (message or "(no message)")
    detail_lines = ""
    if details:
        detail_lines = "".join(f"- **{key}:** {value}\n" for key, value in details.items())

    entry = f"""
## {timestamp}
- **Command:** {command}
- **Status:** {status}
{detail_lines}
{text}
---
"""
    try:
        if os.path.exists(log_path):
            with open(log_path, 'a', encoding='utf-8') as f:
                f.write(entry)
        else:
            os.makedirs(output_dir, exist_ok=True)
            with open(log_path, 'w', encoding='utf-8') as f:
                f.write("# O-FNN Run Log\n\nCommands run against this output directory.\n\n---\n")
                f.write(entry)
    except Exception:
        pass  # a run never fails because of its log
