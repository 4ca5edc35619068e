"""Rewrite the manifest and lockfile to drop bloated dependencies."""

from __future__ import annotations

import logging
import os
import shutil
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .detect import BloatReport
from .errors import RemovalBreaksSurvivor, UnknownDirectDependency
from .lockfile import (
    ROOT_DECLARATION_SECTIONS,
    Lockfile,
    Manifest,
    reachable_instances,
    resolution_candidates,
    serialize_lockfile,
    serialize_manifest,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "package.json"
LOCKFILE_NAME = "package-lock.json"
DEBLOATED_SUFFIX = ".debloated"
BACKUP_SUFFIX = ".orig"


class Strategy(str, Enum):
    DIRECT_ONLY = "direct_only"
    FULL_SCALE = "full_scale"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        aliases = {"direct": cls.DIRECT_ONLY, "full": cls.FULL_SCALE}
        return aliases.get(value) or cls(value)


@dataclass(frozen=True)
class DebloatPlan:
    strategy: Strategy
    remove_direct: frozenset[str] = frozenset()
    remove_instances: frozenset[str] = frozenset()

    def __bool__(self):
        return bool(self.remove_direct or self.remove_instances)


def plan(report: BloatReport, strategy) -> DebloatPlan:
    strategy = Strategy.parse(strategy)
    if strategy is Strategy.DIRECT_ONLY:
        return DebloatPlan(strategy, frozenset(report.direct_bloated))
    return DebloatPlan(strategy, frozenset(report.direct_bloated), frozenset(report.unaccessed))


def apply_direct(m: Manifest, p: DebloatPlan) -> Manifest:
    unknown = sorted(set(p.remove_direct) - m.runtime_deps.keys())
    if unknown:
        raise UnknownDirectDependency(
            f"not declared under 'dependencies': {', '.join(unknown)}"
        )
    if not p.remove_direct:
        return m
    kept = {k: v for k, v in m.runtime_deps.items() if k not in p.remove_direct}
    return m.replace(runtime_deps=kept)


def _dangling(lock: Lockfile, survivors: dict, removed: set, requester: str, names):
    """Split ``names`` into references to drop and shadow-fallback conflicts."""
    drop, conflicts = set(), []
    for dep in names:
        before = lock.resolve(requester, dep)
        if before is None or before not in removed:
            continue
        after = None
        for candidate in resolution_candidates(requester, dep):
            if candidate in survivors:
                after = candidate
                break
        if after is None:
            drop.add(dep)
        else:
            conflicts.append((requester, dep, before, after))
    return drop, conflicts


def removal_conflicts(lock: Lockfile, remove: Iterable[str]) -> list[tuple]:
    """Shadow-fallback conflicts ``remove`` would cause, without applying it."""
    removed = set(remove) & lock.instances.keys()
    survivors = {p: i for p, i in lock.instances.items() if p not in removed}
    conflicts = []
    _, c = _dangling(lock, survivors, removed, "", _root_names(lock))
    conflicts.extend(c)
    for path, inst in survivors.items():
        _, c = _dangling(lock, survivors, removed, path, inst.declared_deps)
        conflicts.extend(c)
    return conflicts


def without_shadow_conflicts(lock: Lockfile, remove: Iterable[str]) -> tuple[set, set]:
    """Shrink ``remove`` until no survivor would fall back to another copy.

    Returns ``(safe_removals, kept_because_of_fallback)``.
    """
    remove = set(remove) & lock.instances.keys()
    kept = set()
    while True:
        conflicts = removal_conflicts(lock, remove)
        if not conflicts:
            return remove, kept
        targets = {c[2] for c in conflicts}
        remove -= targets
        kept |= targets


def _root_names(lock: Lockfile):
    names = []
    for section in ROOT_DECLARATION_SECTIONS:
        names.extend((lock.root_entry.get(section) or {}).keys())
    return names


def _clean_sections(doc: dict, names, sections) -> dict:
    if not names:
        return doc
    out = {}
    for key, value in doc.items():
        if key in sections and isinstance(value, dict):
            value = {k: v for k, v in value.items() if k not in names}
        out[key] = value
    return out


def apply_full(
    lock: Lockfile, m: Manifest, p: DebloatPlan, allow_shadow_fallback: bool = False
) -> tuple[Lockfile, Manifest]:
    """Delete ``p.remove_instances`` and every reference that can no longer resolve.

    A survivor whose reference would silently switch to a different copy
    higher up the tree raises RemovalBreaksSurvivor unless
    ``allow_shadow_fallback`` is set, in which case the reference is kept.
    """
    removed = set(p.remove_instances) & lock.instances.keys()
    if not removed:
        return lock, m
    survivors = {path: inst for path, inst in lock.instances.items() if path not in removed}

    conflicts = []
    root_drop, c = _dangling(lock, survivors, removed, "", _root_names(lock))
    conflicts.extend(c)
    cleaned = {}
    for path, inst in survivors.items():
        drop, c = _dangling(lock, survivors, removed, path, inst.declared_deps)
        conflicts.extend(c)
        cleaned[path] = inst.without_declared(drop) if drop else inst
    if conflicts and not allow_shadow_fallback:
        raise RemovalBreaksSurvivor(conflicts)

    passthrough = lock.passthrough
    if "dependencies" in passthrough:
        log.warning("dropping legacy 'dependencies' section of the lockfile (v1 compatibility data)")
        passthrough = {k: v for k, v in passthrough.items() if k != "dependencies"}
    new_lock = lock.replace(
        instances=cleaned,
        root_entry=_clean_sections(lock.root_entry, root_drop, ROOT_DECLARATION_SECTIONS),
        passthrough=passthrough,
    )

    new_manifest = m
    if root_drop:
        new_manifest = m.replace(
            runtime_deps={k: v for k, v in m.runtime_deps.items() if k not in root_drop},
            dev_deps={k: v for k, v in m.dev_deps.items() if k not in root_drop},
            passthrough=_clean_sections(
                m.passthrough, root_drop, ("optionalDependencies", "peerDependencies")
            ),
        )
    return new_lock, new_manifest


def apply(lock: Lockfile, m: Manifest, p: DebloatPlan, allow_shadow_fallback=False):
    """Apply either strategy, returning the debloated ``(Lockfile, Manifest)``.

    For direct-only plans the lockfile is pruned to what is still reachable,
    which is what the package manager drops once the declarations are gone.
    """
    if p.strategy is Strategy.FULL_SCALE:
        return apply_full(lock, m, p, allow_shadow_fallback)
    new_manifest = apply_direct(m, p)
    if not p.remove_direct:
        return lock, new_manifest
    # only what disappears because of the exclusion; dev roots keep their subtrees
    gone = reachable_instances(lock, include_dev=True) - reachable_instances(
        lock, p.remove_direct, include_dev=True
    )
    new_lock, _ = apply_full(
        lock, m, DebloatPlan(Strategy.FULL_SCALE, p.remove_direct, frozenset(gone))
    )
    root_entry = _clean_sections(new_lock.root_entry, p.remove_direct, ("dependencies",))
    return new_lock.replace(root_entry=root_entry), new_manifest


# -- writing -----------------------------------------------------------------


def write_outputs(
    package_dir, manifest: Manifest, lock: Lockfile, in_place: bool = False
) -> tuple[Path, Path]:
    """Write debloated documents next to the originals (or over them).

    In-place writes first copy each original to ``<name>.orig``.
    """
    package_dir = Path(package_dir)
    targets = []
    for name, text in (
        (MANIFEST_NAME, serialize_manifest(manifest)),
        (LOCKFILE_NAME, serialize_lockfile(lock)),
    ):
        original = package_dir / name
        if in_place:
            if original.exists():
                shutil.copy2(original, package_dir / (name + BACKUP_SUFFIX))
            target = original
        else:
            target = package_dir / (name + DEBLOATED_SUFFIX)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, target)
        targets.append(target)
    return targets[0], targets[1]


__all__ = [
    "Strategy",
    "DebloatPlan",
    "plan",
    "apply_direct",
    "apply_full",
    "apply",
    "removal_conflicts",
    "without_shadow_conflicts",
    "write_outputs",
]
