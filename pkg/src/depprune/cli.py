"""Command-line interface.

Exit codes: 0 success, 1 workload failure passed through (``trace``),
2 input error, 3 the workload fails before anything was removed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .detect import BloatReport, detect
from .errors import DepPruneError, MalformedDocument, WorkloadBrokenIndependently
from .lockfile import read_lockfile, read_manifest, runtime_instances
from .report import CorpusRow, corpus_row, render, render_corpus, report_from_json, summarize
from .trace import (
    DEFAULT_EXTENSIONS,
    OPEN_SYSCALLS,
    STAT_SYSCALLS,
    AccessSet,
    accessed_dependencies,
    read_trace,
    untracked_accesses,
)
from .transform import LOCKFILE_NAME, MANIFEST_NAME, Strategy, apply, plan, write_outputs
from .validate import (
    DEFAULT_TIMEOUT_S,
    ScratchRunner,
    filtered_env,
    rebuild,
    run_workload,
    validate_until_stable,
)

log = logging.getLogger("depprune")

CONFIG_FILE = ".depprune.json"
ENV_PREFIX = "DEPPRUNE_"
DEFAULT_TRACE_NAME = "depprune-trace.log"

EXIT_OK = 0
EXIT_WORKLOAD = 1
EXIT_INPUT = 2
EXIT_BASELINE = 3


@dataclass
class RunConfig:
    package_dir: Path
    trace_input: str | None = None
    workload: list[str] = field(default_factory=list)
    strategy: Strategy = Strategy.FULL_SCALE
    extensions: tuple[str, ...] = DEFAULT_EXTENSIONS
    allow_shadow_fallback: bool = False
    in_place: bool = False
    timeout_s: int = DEFAULT_TIMEOUT_S
    output_format: str = "text"
    include_stat: bool = False
    jobs: int = 1
    env_allowlist: list[str] | None = None
    bisect: bool = False

    @property
    def syscalls(self) -> frozenset[str]:
        return OPEN_SYSCALLS | (STAT_SYSCALLS if self.include_stat else frozenset())

    @property
    def env(self):
        return filtered_env(self.env_allowlist)


def _split_list(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _extensions(value) -> tuple[str, ...]:
    exts = []
    for ext in _split_list(value):
        exts.append(ext if ext.startswith(".") else "." + ext)
    return tuple(exts)


_SETTINGS = {
    # name: (env suffix, converter)
    "strategy": ("STRATEGY", Strategy.parse),
    "extensions": ("EXT", _extensions),
    "allow_shadow_fallback": ("ALLOW_SHADOW_FALLBACK", _as_bool),
    "in_place": ("IN_PLACE", _as_bool),
    "timeout_s": ("TIMEOUT", int),
    "output_format": ("FORMAT", str),
    "include_stat": ("INCLUDE_STAT", _as_bool),
    "jobs": ("JOBS", int),
    "env_allowlist": ("ENV_ALLOWLIST", _split_list),
    "bisect": ("BISECT", _as_bool),
}
_CONFIG_KEYS = {
    "strategy": "strategy",
    "ext": "extensions",
    "extensions": "extensions",
    "allow_shadow_fallback": "allow_shadow_fallback",
    "in_place": "in_place",
    "timeout": "timeout_s",
    "format": "output_format",
    "include_stat": "include_stat",
    "jobs": "jobs",
    "env_allowlist": "env_allowlist",
    "bisect": "bisect",
    "workload": "workload",
}


def load_config_file(package_dir) -> dict:
    path = Path(package_dir) / CONFIG_FILE
    if not path.is_file():
        return {}
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedDocument(exc.msg, exc.lineno, exc.colno, str(path)) from None
    unknown = set(data) - set(_CONFIG_KEYS)
    if unknown:
        log.warning("%s: ignoring unknown keys %s", path, ", ".join(sorted(unknown)))
    return {_CONFIG_KEYS[k]: v for k, v in data.items() if k in _CONFIG_KEYS}


def resolve_config(args, environ=None) -> RunConfig:
    """Merge settings: command-line flags, then environment, then config file."""
    environ = os.environ if environ is None else environ
    package_dir = Path(getattr(args, "package_dir", ".") or ".")
    file_cfg = load_config_file(package_dir) if package_dir.is_dir() else {}
    cfg = RunConfig(package_dir=package_dir)
    for name, (suffix, convert) in _SETTINGS.items():
        flag = getattr(args, name, None)
        if flag is not None:
            value = flag
        elif ENV_PREFIX + suffix in environ:
            value = environ[ENV_PREFIX + suffix]
        elif name in file_cfg:
            value = file_cfg[name]
        else:
            continue
        setattr(cfg, name, convert(value))
    cfg.trace_input = getattr(args, "trace", None)
    workload = list(getattr(args, "workload", None) or [])
    if not workload and isinstance(file_cfg.get("workload"), list):
        workload = [str(a) for a in file_cfg["workload"]]
    cfg.workload = workload
    if cfg.output_format not in ("text", "json"):
        raise DepPruneError(f"unknown output format {cfg.output_format!r}")
    return cfg


# -- shared steps ----------------------------------------------------------------


def _load_documents(package_dir: Path):
    return read_manifest(package_dir / MANIFEST_NAME), read_lockfile(package_dir / LOCKFILE_NAME)


def trace_workload(cfg: RunConfig, package_dir: Path, log_path) -> int:
    result = run_workload(
        package_dir,
        cfg.workload,
        traced=True,
        timeout=cfg.timeout_s,
        env=cfg.env,
        trace_log=log_path,
        include_stat=cfg.include_stat,
    )
    sys.stderr.write(result.stderr)
    sys.stdout.write(result.stdout)
    return result.returncode


def detect_from_access(lock, acc: AccessSet) -> BloatReport:
    runtime = runtime_instances(lock)
    accessed = accessed_dependencies(acc, lock)
    extras = untracked_accesses(acc, lock)
    if extras:
        log.warning(
            "%d accessed package directories are not in the lockfile: %s",
            len(extras),
            ", ".join(sorted(extras)[:5]),
        )
    if not acc.module_paths:
        log.warning("trace contains no node_modules accesses; every runtime dependency is unaccessed")
    if acc.stats.malformed:
        log.warning("skipped %d unparseable trace lines", acc.stats.malformed)
    return detect(lock, accessed & runtime)


def detect_package(cfg: RunConfig, package_dir: Path | None = None) -> BloatReport:
    package_dir = Path(package_dir or cfg.package_dir)
    lock = read_lockfile(package_dir / LOCKFILE_NAME)
    if cfg.trace_input:
        acc = read_trace(cfg.trace_input, package_dir, cfg.extensions, cfg.syscalls)
    elif cfg.workload:
        with tempfile.TemporaryDirectory(prefix="depprune-") as tmp:
            log_path = Path(tmp) / DEFAULT_TRACE_NAME
            code = trace_workload(cfg, package_dir, log_path)
            if code != 0:
                log.warning("workload exited with %d while tracing", code)
            acc = read_trace(log_path, package_dir, cfg.extensions, cfg.syscalls)
    else:
        raise DepPruneError("detect needs --trace FILE or a workload after --")
    return detect_from_access(lock, acc)


def _tail(text: str, lines: int = 20) -> str:
    return "\n".join(text.rstrip().splitlines()[-lines:])


def _emit(text: str, output: str | None):
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- subcommands -----------------------------------------------------------------


def cmd_trace(cfg: RunConfig, args) -> int:
    if not cfg.workload:
        raise DepPruneError("trace needs a workload after --")
    log_path = Path(args.output or (cfg.package_dir / DEFAULT_TRACE_NAME)).resolve()
    code = trace_workload(cfg, cfg.package_dir, log_path)
    print(f"trace written to {log_path}", file=sys.stderr)
    return EXIT_OK if code == 0 else EXIT_WORKLOAD


def cmd_detect(cfg: RunConfig, args) -> int:
    if cfg.trace_input and cfg.workload:
        raise DepPruneError("give either --trace or a workload, not both")
    report = detect_package(cfg)
    _emit(render(report, cfg.output_format), args.output)
    return EXIT_OK


def _report_for(cfg: RunConfig, args) -> BloatReport:
    if getattr(args, "report", None):
        return report_from_json(Path(args.report).read_text(encoding="utf-8"))
    return detect_package(cfg)


def cmd_debloat(cfg: RunConfig, args) -> int:
    manifest, lock = _load_documents(cfg.package_dir)
    report = _report_for(cfg, args)
    p = plan(report, cfg.strategy)
    new_lock, new_manifest = apply(lock, manifest, p, cfg.allow_shadow_fallback)
    m_path, l_path = write_outputs(cfg.package_dir, new_manifest, new_lock, cfg.in_place)
    removed = len(lock.instances) - len(new_lock.instances)
    print(f"removed {removed} of {len(lock.instances)} lockfile entries", file=sys.stderr)
    print(f"wrote {m_path} and {l_path}", file=sys.stderr)
    return EXIT_OK


def _finish(cfg: RunConfig, args, result) -> int:
    write_outputs(cfg.package_dir, result.manifest, result.lockfile, cfg.in_place)
    doc = {
        "strategy": result.strategy.value,
        "iterations": result.iterations,
        "bloated": sorted(result.bloated),
        "direct_bloated": sorted(result.direct_bloated),
        "restored": sorted(result.restored),
        "history": [vars(h) for h in result.history],
    }
    if cfg.output_format == "json":
        _emit(json.dumps(doc, indent=2) + "\n", getattr(args, "output", None))
    else:
        lines = [
            f"confirmed bloated: {len(result.bloated)} ({len(result.direct_bloated)} direct) "
            f"after {result.iterations} iteration(s)"
        ]
        lines += [f"  {p}" for p in sorted(result.bloated)]
        if result.restored:
            lines.append(f"restored: {len(result.restored)}")
            lines += [f"  {p}" for p in sorted(result.restored)]
        _emit("\n".join(lines) + "\n", getattr(args, "output", None))
    return EXIT_OK


def cmd_validate(cfg: RunConfig, args) -> int:
    if not cfg.workload:
        raise DepPruneError("validate needs a workload after --")
    manifest, lock = _load_documents(cfg.package_dir)
    detect_cfg = RunConfig(**{**vars(cfg), "workload": []})
    report = _report_for(detect_cfg, args)
    with ScratchRunner(cfg.package_dir, cfg.workload, cfg.timeout_s, env=cfg.env) as runner:
        result = validate_until_stable(
            lock, manifest, report, cfg.strategy, runner,
            targeted=not cfg.bisect, allow_shadow_fallback=cfg.allow_shadow_fallback,
        )
    return _finish(cfg, args, result)


def cmd_run(cfg: RunConfig, args) -> int:
    """trace -> detect -> debloat -> validate, all inside a scratch copy."""
    if not cfg.workload:
        raise DepPruneError("run needs a workload after --")
    manifest, lock = _load_documents(cfg.package_dir)
    with ScratchRunner(cfg.package_dir, cfg.workload, cfg.timeout_s, env=cfg.env) as runner:
        try:
            rebuild(runner.scratch, runner.install_command, cfg.timeout_s, cfg.env)
        except DepPruneError as exc:
            raise WorkloadBrokenIndependently(f"baseline install failed: {exc}") from exc
        log_path = runner.scratch.parent / DEFAULT_TRACE_NAME
        baseline = run_workload(
            runner.scratch, cfg.workload, traced=True, timeout=cfg.timeout_s, env=cfg.env,
            trace_log=log_path, include_stat=cfg.include_stat,
        )
        if not baseline.ok:
            raise WorkloadBrokenIndependently(
                f"workload fails before any removal (exit {baseline.returncode})\n"
                + _tail(baseline.output)
            )
        acc = read_trace(log_path, runner.scratch, cfg.extensions, cfg.syscalls)
        report = detect_from_access(lock, acc)
        result = validate_until_stable(
            lock, manifest, report, cfg.strategy, runner,
            targeted=not cfg.bisect, allow_shadow_fallback=cfg.allow_shadow_fallback,
            baseline=baseline,
        )
    return _finish(cfg, args, result)


def _corpus_one(cfg: RunConfig, package_dir: str, trace_name: str) -> CorpusRow:
    path = Path(package_dir)
    try:
        trace = path / trace_name
        local = RunConfig(**{**vars(cfg), "package_dir": path})
        if trace.is_file():
            local.trace_input, local.workload = str(trace), []
        report = detect_package(local, path)
        return corpus_row(report, cfg.strategy.value, name=report.package or path.name)
    except DepPruneError as exc:
        return CorpusRow(name=path.name, error=f"{type(exc).__name__}: {exc}")
    except OSError as exc:
        return CorpusRow(name=path.name, error=f"{type(exc).__name__}: {exc}")


def cmd_corpus(cfg: RunConfig, args) -> int:
    dirs = list(args.packages)
    if args.list:
        dirs += [ln.strip() for ln in Path(args.list).read_text().splitlines() if ln.strip()]
    if not dirs:
        raise DepPruneError("corpus needs package directories or --list FILE")
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_corpus_one, [cfg] * len(dirs), dirs, [args.trace_name] * len(dirs)))
    else:
        rows = [_corpus_one(cfg, d, args.trace_name) for d in dirs]
    for row in rows:
        if row.error:
            log.warning("%s: %s", row.name, row.error)
    _emit(render_corpus(summarize(rows), cfg.output_format), args.output)
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depprune",
        description="Find and remove npm dependencies a workload never loads.",
        epilog="Commands that run a workload take it after `--`, e.g. `depprune run ./pkg -- npm test`.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("package_dir", nargs="?", default=".")
        p.add_argument("--ext", dest="extensions", help="accepted module extensions, comma separated")
        p.add_argument("--include-stat", action="store_true", default=None,
                       help="also count stat-family syscalls as accesses")
        p.add_argument("--timeout", dest="timeout_s", type=int, metavar="SECS")
        p.add_argument("--format", dest="output_format", choices=("text", "json"))
        p.add_argument("--env-allowlist", help="only pass these environment variables to the workload")
        p.add_argument("-o", "--output", help="write the result here instead of stdout")

    def strategy(p):
        p.add_argument("--strategy", choices=("direct", "full", "direct_only", "full_scale"))
        p.add_argument("--allow-shadow-fallback", action="store_true", default=None)
        p.add_argument("--in-place", action="store_true", default=None,
                       help="overwrite package.json/package-lock.json (originals kept as .orig)")

    p = sub.add_parser("trace", help="run a workload under the syscall tracer")
    common(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("detect", help="report unaccessed runtime dependencies")
    common(p)
    p.add_argument("--trace", metavar="FILE", help="recorded trace log ('-' for stdin)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("debloat", help="write debloated package.json and package-lock.json")
    common(p)
    strategy(p)
    p.add_argument("--trace", metavar="FILE")
    p.add_argument("--report", metavar="FILE", help="JSON report from `detect --format json`")
    p.set_defaults(func=cmd_debloat)

    p = sub.add_parser("validate", help="confirm removals by reinstalling and rerunning")
    common(p)
    strategy(p)
    p.add_argument("--trace", metavar="FILE")
    p.add_argument("--report", metavar="FILE")
    p.add_argument("--bisect", action="store_true", default=None,
                   help="restore by halving instead of by missing-module names")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="trace, detect, debloat and validate in one go")
    common(p)
    strategy(p)
    p.add_argument("--bisect", action="store_true", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("corpus", help="detect across many packages and summarize")
    p.add_argument("packages", nargs="*")
    p.add_argument("--list", metavar="FILE", help="file with one package directory per line")
    p.add_argument("--trace-name", default=DEFAULT_TRACE_NAME,
                   help="trace log expected inside each package directory")
    p.add_argument("--strategy", choices=("direct", "full", "direct_only", "full_scale"))
    p.add_argument("--ext", dest="extensions")
    p.add_argument("--include-stat", action="store_true", default=None)
    p.add_argument("--format", dest="output_format", choices=("text", "json"))
    p.add_argument("--jobs", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # everything after the first "--" is the workload command, verbatim
    workload = []
    if "--" in argv:
        cut = argv.index("--")
        argv, workload = argv[:cut], argv[cut + 1 :]
    args = parser.parse_args(argv)
    args.workload = workload
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="depprune: %(levelname)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except WorkloadBrokenIndependently as exc:
        print(f"depprune: {exc}", file=sys.stderr)
        return EXIT_BASELINE
    except DepPruneError as exc:
        print(f"depprune: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"depprune: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
