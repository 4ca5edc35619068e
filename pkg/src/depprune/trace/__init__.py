"""Syscall trace ingestion.

Reduces strace-style logs to the set of dependency module files that were
successfully opened under ``<package_root>/node_modules``.  The line scanner
has a compiled implementation (``_ckernel``) and a pure-Python one
(``_pykernel``); the compiled one is used when it imports, unless
``DEPPRUNE_PURE_PYTHON`` is set.
"""

from __future__ import annotations

import os
import posixpath
import sys
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from ..errors import MalformedModulePath
from . import _pykernel

if os.environ.get("DEPPRUNE_PURE_PYTHON"):
    _kernel = _pykernel
else:
    try:
        from . import _ckernel as _kernel
    except ImportError:  # extension not built
        _kernel = _pykernel

KERNEL = "cython" if _kernel is not _pykernel else "python"

OPEN_SYSCALLS = frozenset({"open", "openat", "openat2"})
STAT_SYSCALLS = frozenset(
    {"stat", "lstat", "newfstatat", "statx", "access", "faccessat", "faccessat2"}
)
DEFAULT_EXTENSIONS = (".js", ".json")
EXTRA_EXTENSIONS = (".cjs", ".mjs", ".node")


@dataclass(frozen=True)
class TraceEvent:
    pid: int
    syscall: str
    path: str
    result: int
    errno: str | None = None

    @property
    def ok(self) -> bool:
        return self.result >= 0


@dataclass
class ScanStats:
    lines: int = 0
    events: int = 0
    ignored: int = 0
    malformed: int = 0

    @classmethod
    def from_scanner(cls, scanner) -> "ScanStats":
        return cls(scanner.lines, scanner.events, scanner.ignored, scanner.malformed)


@dataclass(frozen=True)
class AccessSet:
    module_paths: frozenset[str]
    instance_paths: frozenset[str]
    package_root: str = ""
    stats: ScanStats = field(default_factory=ScanStats, compare=False)
    unmappable: frozenset[str] = field(default=frozenset(), compare=False)


def parse_trace_line(line: str, syscalls: Iterable[str] = OPEN_SYSCALLS) -> TraceEvent | None:
    """Parse one complete tracer line; None for anything that is not a file event."""
    scanner = _kernel.Scanner(frozenset(syscalls))
    ev = scanner.feed(line)
    return TraceEvent(*ev) if ev is not None else None


def iter_events(
    lines: Iterable[str], syscalls: Iterable[str] = OPEN_SYSCALLS, stats: ScanStats | None = None
) -> Iterator[TraceEvent]:
    """Yield events from a log, joining ``<unfinished ...>``/``resumed`` pairs."""
    scanner = _kernel.Scanner(frozenset(syscalls))
    for line in lines:
        ev = scanner.feed(line)
        if ev is not None:
            yield TraceEvent(*ev)
    scanner.finish()
    if stats is not None:
        stats.__dict__.update(ScanStats.from_scanner(scanner).__dict__)


def canonical_roots(package_root) -> list[str]:
    """Textual and symlink-resolved forms of the package root, canonical first."""
    absolute = posixpath.normpath(os.path.abspath(os.fspath(package_root)))
    real = os.path.realpath(absolute)
    return [real] if real == absolute else [real, absolute]


def _prefixes(package_root) -> list[str]:
    return [r.rstrip("/") + "/node_modules/" for r in canonical_roots(package_root)]


def map_path_to_instance(module_path: str, package_root: str = "") -> tuple[str, str]:
    """Map a module file to ``(install_path, name)`` of the package holding it."""
    rel = module_path
    root = package_root.rstrip("/") if package_root else ""
    if root and rel.startswith(root + "/"):
        rel = rel[len(root) + 1 :]
    parts = rel.split("/")
    try:
        last = len(parts) - 1 - parts[::-1].index("node_modules")
    except ValueError:
        raise MalformedModulePath(f"no node_modules segment in {module_path!r}") from None
    scoped = last + 1 < len(parts) and parts[last + 1].startswith("@")
    end = last + (3 if scoped else 2)
    # the package directory must be followed by at least one file component
    if end >= len(parts) or not all(parts[last + 1 : end]):
        raise MalformedModulePath(f"no package directory after node_modules in {module_path!r}")
    install_path = "/".join(parts[:end])
    if not install_path.startswith("node_modules/"):
        raise MalformedModulePath(f"{module_path!r} is not under the package's node_modules")
    return install_path, "/".join(parts[last + 1 : end])


def _access_set(module_paths, root) -> AccessSet:
    instances = set()
    unmappable = set()
    for path in module_paths:
        try:
            instances.add(map_path_to_instance(path, root)[0])
        except MalformedModulePath:
            unmappable.add(path)
    return AccessSet(
        module_paths=frozenset(module_paths),
        instance_paths=frozenset(instances),
        package_root=root,
        unmappable=frozenset(unmappable),
    )


def filter_module_accesses(
    events: Iterable[TraceEvent],
    package_root,
    extensions: Iterable[str] = DEFAULT_EXTENSIONS,
) -> AccessSet:
    """Keep successful opens of accepted-extension files under ``node_modules``."""
    prefixes = _prefixes(package_root)
    canonical = prefixes[0]
    exts = tuple(extensions)
    found = set()
    for ev in events:
        if ev.result < 0:
            continue
        path = _pykernel.normalize(ev.path)
        if not path.endswith(exts):
            continue
        for prefix in prefixes:
            if path.startswith(prefix):
                found.add(canonical + path[len(prefix) :])
                break
    return _access_set(found, canonical[: -len("/node_modules/")])


def scan_trace(
    lines: Iterable[str],
    package_root,
    extensions: Iterable[str] = DEFAULT_EXTENSIONS,
    syscalls: Iterable[str] = OPEN_SYSCALLS,
) -> AccessSet:
    """Fast path: parse and filter a whole log in the kernel."""
    prefixes = _prefixes(package_root)
    found, scanner = _kernel.collect_modules(
        lines, frozenset(syscalls), prefixes, tuple(extensions)
    )
    acc = _access_set(found, prefixes[0][: -len("/node_modules/")])
    acc.stats.__dict__.update(ScanStats.from_scanner(scanner).__dict__)
    return acc


def read_trace(
    source,
    package_root,
    extensions: Iterable[str] = DEFAULT_EXTENSIONS,
    syscalls: Iterable[str] = OPEN_SYSCALLS,
) -> AccessSet:
    """Scan a trace file, or standard input when ``source`` is ``"-"``."""
    if source == "-":
        return scan_trace(sys.stdin, package_root, extensions, syscalls)
    with open(source, encoding="utf-8", errors="surrogateescape") as fh:
        return scan_trace(fh, package_root, extensions, syscalls)


def accessed_dependencies(acc: AccessSet, lock) -> set[str]:
    return set(acc.instance_paths) & lock.instances.keys()


def untracked_accesses(acc: AccessSet, lock) -> set[str]:
    """Accessed package directories the lockfile does not know about."""
    return set(acc.instance_paths) - lock.instances.keys()


__all__ = [
    "KERNEL",
    "OPEN_SYSCALLS",
    "STAT_SYSCALLS",
    "DEFAULT_EXTENSIONS",
    "EXTRA_EXTENSIONS",
    "TraceEvent",
    "AccessSet",
    "ScanStats",
    "parse_trace_line",
    "iter_events",
    "filter_module_accesses",
    "scan_trace",
    "read_trace",
    "map_path_to_instance",
    "accessed_dependencies",
    "untracked_accesses",
    "canonical_roots",
]
