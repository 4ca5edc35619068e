"""Locate a syscall tracer and build the command line that wraps a workload."""

from __future__ import annotations

import os
import shutil

from .errors import TracerUnavailable
from .trace import OPEN_SYSCALLS, STAT_SYSCALLS

INSTALL_HINT = (
    "no syscall tracer found: install strace (e.g. `apt-get install strace`) "
    "or python-ptrace (`pip install python-ptrace`, provides strace.py), "
    "or point DEPPRUNE_TRACER at one"
)


def find_tracer(preferred: str | None = None) -> str:
    """Return the path of the tracer executable to use."""
    candidates = [preferred or os.environ.get("DEPPRUNE_TRACER"), "strace", "strace.py"]
    for name in candidates:
        if not name:
            continue
        path = shutil.which(name)
        if path:
            return path
    raise TracerUnavailable(INSTALL_HINT)


def tracer_command(
    argv, log_path, tracer: str | None = None, include_stat: bool = False
) -> list[str]:
    """Wrap ``argv`` so it runs under the tracer, following children."""
    exe = tracer or find_tracer()
    syscalls = sorted(OPEN_SYSCALLS | (STAT_SYSCALLS if include_stat else frozenset()))
    if os.path.basename(exe).startswith("strace.py"):
        # python-ptrace's clone: pids appear as "[pid]" and strings are single-quoted
        return [exe, "-f", "-q", "-s", "4096", "-e", ",".join(syscalls), "-o", str(log_path), "--", *argv]
    return [
        exe,
        "-f",
        "-qq",
        "-s",
        "4096",
        "-e",
        "trace=" + ",".join(syscalls),
        "-o",
        str(log_path),
        "--",
        *argv,
    ]
