"""Rebuild-and-rerun loop that confirms which removals are safe.

Every run happens in a scratch copy of the package: the debloated documents
are staged there, the package manager performs a clean install, and the
workload is executed.  When the workload fails, the removals it needed are
restored and the loop repeats with a strictly smaller candidate set.
"""

from __future__ import annotations

import fcntl
import hashlib
import logging
import os
import re
import shutil
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .detect import BloatReport
from .errors import (
    BadInstallPath,
    InstallFailed,
    SpawnFailed,
    Timeout,
    WorkloadBrokenIndependently,
)
from .lockfile import (
    Lockfile,
    Manifest,
    join_install_path,
    map_path_to_name,
    resolution_closure,
    serialize_lockfile,
    serialize_manifest,
    split_install_path,
)
from .tracer import tracer_command
from .transform import (
    LOCKFILE_NAME,
    MANIFEST_NAME,
    DebloatPlan,
    Strategy,
    apply,
    without_shadow_conflicts,
)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 30 * 60
INSTALL_COMMAND = ("npm", "ci", "--no-audit", "--no-fund")

# Node's loader ("Cannot find module 'x'"), ESM ("Cannot find package 'x'")
# and npm ci's lockfile check ("Missing: x@^1 from lock file").
_MISSING_PATTERNS = (
    re.compile(r"Cannot find module '([^']+)'"),
    re.compile(r'Cannot find module "([^"]+)"'),
    re.compile(r"Cannot find package '([^']+)'"),
    re.compile(r"Missing: (@?[^@\s]+)@\S* from lock file"),
)


@dataclass(frozen=True)
class WorkloadResult:
    returncode: int
    stdout: str = ""
    stderr: str = ""
    duration_s: float = 0.0
    trace_log: str | None = None
    phase: str = "workload"

    @property
    def ok(self) -> bool:
        return self.returncode == 0

    @property
    def output(self) -> str:
        return self.stdout + self.stderr


def _run(argv, cwd, timeout, env) -> WorkloadResult:
    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            list(argv),
            cwd=cwd,
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            errors="replace",
            start_new_session=True,
        )
    except (FileNotFoundError, PermissionError, NotADirectoryError) as exc:
        raise SpawnFailed(f"cannot start {argv[0]!r}: {exc}") from exc
    try:
        out, err = proc.communicate(timeout=timeout)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        proc.communicate()
        raise Timeout(f"{' '.join(argv)} exceeded {timeout}s") from None
    return WorkloadResult(proc.returncode, out, err, time.monotonic() - start)


def filtered_env(allowlist: Iterable[str] | None = None) -> dict[str, str] | None:
    """Environment for child processes; ``None`` means inherit everything."""
    if allowlist is None:
        return None
    keep = set(allowlist) | {"PATH", "HOME"}
    return {k: v for k, v in os.environ.items() if k in keep}


def rebuild(
    package_dir,
    install_command: Sequence[str] = INSTALL_COMMAND,
    timeout: float = DEFAULT_TIMEOUT_S,
    env=None,
) -> WorkloadResult:
    """Clean install: wipe node_modules, then install exactly the lockfile."""
    package_dir = Path(package_dir)
    shutil.rmtree(package_dir / "node_modules", ignore_errors=True)
    result = _run(install_command, package_dir, timeout, env)
    result = replace(result, phase="install")
    if not result.ok:
        raise InstallFailed(
            f"{' '.join(install_command)} exited with {result.returncode}",
            result.returncode,
            result.output,
        )
    return result


def run_workload(
    package_dir,
    command: Sequence[str],
    traced: bool = False,
    timeout: float = DEFAULT_TIMEOUT_S,
    env=None,
    trace_log=None,
    tracer: str | None = None,
    include_stat: bool = False,
) -> WorkloadResult:
    if not command:
        raise SpawnFailed("empty workload command")
    argv = list(command)
    if traced:
        if trace_log is None:
            trace_log = Path(package_dir).resolve().parent / "depprune-trace.log"
        argv = tracer_command(argv, trace_log, tracer, include_stat)
    result = _run(argv, package_dir, timeout, env)
    if traced:
        result = replace(result, trace_log=str(trace_log))
    return result


# -- failure analysis ----------------------------------------------------------


def package_of_specifier(spec: str) -> str | None:
    """Package name a failed ``require`` specifier refers to, if any."""
    if spec.startswith("node:"):
        return None
    if spec.startswith(("/", ".")):
        parts = spec.split("/")
        if "node_modules" not in parts:
            return None
        last = len(parts) - 1 - parts[::-1].index("node_modules")
        rest = parts[last + 1 :]
        if not rest or not rest[0]:
            return None
        return "/".join(rest[:2]) if rest[0].startswith("@") and len(rest) > 1 else rest[0]
    parts = spec.split("/")
    if spec.startswith("@"):
        return "/".join(parts[:2]) if len(parts) > 1 else None
    return parts[0] or None


def extract_missing_modules(output: str) -> set[str]:
    names = set()
    for pattern in _MISSING_PATTERNS:
        for match in pattern.finditer(output):
            name = package_of_specifier(match.group(1))
            if name:
                names.add(name)
    return names


# -- state machine -------------------------------------------------------------


@dataclass(frozen=True)
class ValidationState:
    candidate_bloated: frozenset[str]
    confirmed_restored: frozenset[str] = frozenset()
    iteration: int = 0
    last_failure: WorkloadResult | None = None
    retained: frozenset[str] = frozenset()
    missing_names: frozenset[str] = frozenset()
    last_mode: str = ""


@dataclass
class IterationRecord:
    iteration: int
    candidates: int
    ok: bool
    returncode: int
    phase: str
    restored: list[str] = field(default_factory=list)
    mode: str = ""


@dataclass
class FinalResult:
    bloated: frozenset[str]
    direct_bloated: frozenset[str]
    manifest: Manifest
    lockfile: Lockfile
    iterations: int
    restored: frozenset[str]
    history: list[IterationRecord] = field(default_factory=list)
    strategy: Strategy = Strategy.FULL_SCALE


def _ancestors(path: str) -> set[str]:
    chain = split_install_path(path)
    return {join_install_path(chain[:i]) for i in range(1, len(chain))}


def _restore_closure(lock: Lockfile, paths: Iterable[str], candidates) -> set[str]:
    """``paths`` plus the candidates they need to load: their deps and ancestors."""
    needed = set(paths)
    for path in list(needed):
        needed |= _ancestors(path)
    needed = resolution_closure(lock, needed)
    return needed & set(candidates)


def repair(
    state: ValidationState,
    failure: WorkloadResult,
    lock: Lockfile,
    targeted: bool = True,
    expand_subtrees: bool = False,
) -> ValidationState:
    """Restore some candidates after a failed run; the candidate set always shrinks.

    Targeted mode restores the candidates named in "cannot find module"
    messages (plus what they need to load).  With ``expand_subtrees`` a
    candidate also matches when the missing package sits in its subtree,
    which is how direct-only candidates hide indirect ones.  Without a
    usable name, half of the candidates are restored.
    """
    candidates = set(state.candidate_bloated)
    if not candidates:
        raise WorkloadBrokenIndependently(
            "workload still fails with no dependencies removed"
        )
    restore: set[str] = set()
    names = extract_missing_modules(failure.output) if targeted else set()
    if names:
        hits = {p for p in candidates if map_path_to_name(p) in names}
        if expand_subtrees:
            for p in candidates - hits:
                subtree = resolution_closure(lock, [p])
                if any(map_path_to_name(q) in names for q in subtree):
                    hits.add(p)
        restore = _restore_closure(lock, hits, candidates)
    mode = "targeted"
    if not restore:
        mode = "bisect"
        ordered = sorted(candidates)
        restore = set(ordered[len(ordered) // 2 :])
    log.info("iteration %d: %s restore of %d candidates", state.iteration, mode, len(restore))
    return ValidationState(
        candidate_bloated=frozenset(candidates - restore),
        confirmed_restored=state.confirmed_restored | frozenset(restore),
        iteration=state.iteration,
        last_failure=failure,
        retained=state.retained,
        missing_names=frozenset(names),
        last_mode=mode,
    )


class Runner(Protocol):
    def check(self, manifest: Manifest, lock: Lockfile) -> WorkloadResult: ...


def initial_candidates(lock: Lockfile, report: BloatReport, strategy: Strategy) -> set[str]:
    if strategy is Strategy.DIRECT_ONLY:
        return {f"node_modules/{name}" for name in report.direct_bloated}
    return set(report.unaccessed)


def build_documents(
    lock: Lockfile,
    manifest: Manifest,
    candidates: Iterable[str],
    strategy: Strategy,
    allow_shadow_fallback: bool = False,
) -> tuple[Lockfile, Manifest]:
    candidates = set(candidates)
    if strategy is Strategy.DIRECT_ONLY:
        names = frozenset(map_path_to_name(p) for p in candidates)
        p = DebloatPlan(strategy, names)
    else:
        direct = frozenset(
            lock.instances[p].name for p in candidates if lock.instances[p].is_direct
        )
        p = DebloatPlan(strategy, direct, frozenset(candidates))
    return apply(lock, manifest, p, allow_shadow_fallback)


def _consistent(state, lock, strategy, allow_shadow_fallback) -> ValidationState:
    if strategy is Strategy.DIRECT_ONLY or allow_shadow_fallback:
        return state
    safe, kept = without_shadow_conflicts(lock, state.candidate_bloated)
    if not kept:
        return state
    log.info("keeping %d instances a survivor would otherwise fall back from", len(kept))
    return replace(
        state, candidate_bloated=frozenset(safe), retained=state.retained | frozenset(kept)
    )


def validate_until_stable(
    lock: Lockfile,
    manifest: Manifest,
    report: BloatReport,
    strategy,
    runner: Runner,
    targeted: bool = True,
    allow_shadow_fallback: bool = False,
    baseline: WorkloadResult | None = None,
) -> FinalResult:
    """Remove candidates, rerun, and restore until the workload passes.

    ``baseline`` may carry an already-passing run of the unmodified package;
    otherwise one is made before anything is removed.
    """
    strategy = Strategy.parse(strategy)
    if baseline is None:
        baseline = runner.check(manifest, lock)
    if not baseline.ok:
        raise WorkloadBrokenIndependently(
            f"baseline run failed ({baseline.phase}, exit {baseline.returncode}) "
            "before any dependency was removed"
        )
    state = ValidationState(frozenset(initial_candidates(lock, report, strategy)))
    state = _consistent(state, lock, strategy, allow_shadow_fallback)
    history = []
    while True:
        state = replace(state, iteration=state.iteration + 1)
        new_lock, new_manifest = build_documents(
            lock, manifest, state.candidate_bloated, strategy, allow_shadow_fallback
        )
        result = runner.check(new_manifest, new_lock)
        record = IterationRecord(
            state.iteration, len(state.candidate_bloated), result.ok, result.returncode, result.phase
        )
        history.append(record)
        if result.ok:
            break
        before = state.confirmed_restored
        state = repair(
            state, result, lock, targeted, expand_subtrees=strategy is Strategy.DIRECT_ONLY
        )
        record.restored = sorted(state.confirmed_restored - before)
        record.mode = state.last_mode
        state = _consistent(state, lock, strategy, allow_shadow_fallback)

    if strategy is Strategy.DIRECT_ONLY:
        direct = frozenset(map_path_to_name(p) for p in state.candidate_bloated)
        bloated = frozenset(lock.instances.keys() - new_lock.instances.keys())
    else:
        bloated = frozenset(state.candidate_bloated)
        direct = frozenset(lock.instances[p].name for p in bloated if lock.instances[p].is_direct)
    return FinalResult(
        bloated=bloated,
        direct_bloated=direct,
        manifest=new_manifest,
        lockfile=new_lock,
        iterations=state.iteration,
        restored=state.confirmed_restored | state.retained,
        history=history,
        strategy=strategy,
    )


# -- scratch workspace ---------------------------------------------------------


class ScratchRunner:
    """Runs install + workload in a private copy of the package directory.

    Use as a context manager; an exclusive lock keyed on the package path
    keeps two loops from sharing one package at the same time.
    """

    def __init__(
        self,
        package_dir,
        workload: Sequence[str],
        timeout: float = DEFAULT_TIMEOUT_S,
        install_command: Sequence[str] = INSTALL_COMMAND,
        env=None,
        keep: bool = False,
    ):
        self.package_dir = Path(package_dir).resolve()
        self.workload = list(workload)
        self.timeout = timeout
        self.install_command = list(install_command)
        self.env = env
        self.keep = keep
        self.scratch = None
        self._lock_fh = None
        self._tmp = None

    def __enter__(self):
        digest = hashlib.sha1(str(self.package_dir).encode()).hexdigest()[:16]
        lock_path = Path(tempfile.gettempdir()) / f"depprune-{digest}.lock"
        self._lock_fh = open(lock_path, "w")
        fcntl.flock(self._lock_fh, fcntl.LOCK_EX)
        self._tmp = tempfile.mkdtemp(prefix="depprune-")
        self.scratch = Path(self._tmp) / self.package_dir.name
        shutil.copytree(
            self.package_dir,
            self.scratch,
            symlinks=True,
            ignore=shutil.ignore_patterns("node_modules", ".git"),
        )
        return self

    def __exit__(self, *exc):
        if not self.keep and self._tmp:
            shutil.rmtree(self._tmp, ignore_errors=True)
        if self._lock_fh is not None:
            fcntl.flock(self._lock_fh, fcntl.LOCK_UN)
            self._lock_fh.close()
        return False

    def stage(self, manifest: Manifest, lock: Lockfile) -> None:
        (self.scratch / MANIFEST_NAME).write_text(serialize_manifest(manifest), encoding="utf-8")
        (self.scratch / LOCKFILE_NAME).write_text(serialize_lockfile(lock), encoding="utf-8")

    def check(self, manifest: Manifest, lock: Lockfile) -> WorkloadResult:
        self.stage(manifest, lock)
        try:
            rebuild(self.scratch, self.install_command, self.timeout, self.env)
        except InstallFailed as exc:
            return WorkloadResult(exc.returncode or 1, exc.output, "", phase="install")
        return run_workload(self.scratch, self.workload, timeout=self.timeout, env=self.env)

    def installed_instances(self) -> set[str]:
        """Package directories present under the scratch node_modules."""
        root = self.scratch / "node_modules"
        found = set()
        for pkg_json in root.rglob("package.json"):
            rel = pkg_json.parent.relative_to(self.scratch).as_posix()
            try:
                split_install_path(rel)
            except BadInstallPath:
                continue
            found.add(rel)
        return found
