"""Classify runtime dependency instances as accessed or bloated."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from .errors import AccessOutsideLockfile, ZeroTotal
from .lockfile import (
    Lockfile,
    bundled_instances,
    join_install_path,
    orphan_instances,
    reachable_instances,
    runtime_instances,
    split_install_path,
)


@dataclass(frozen=True)
class BloatReport:
    total_runtime: int
    accessed: frozenset[str]
    unaccessed: frozenset[str]
    direct_bloated: frozenset[str]
    indirect_bloated: frozenset[str]
    cascade_from_direct: frozenset[str]
    shadow_candidates: frozenset[str]
    r_d: Fraction
    direct_count: int = 0
    orphans: frozenset[str] = frozenset()
    bundled: frozenset[str] = frozenset()
    package: str = ""
    notes: tuple[str, ...] = field(default=())

    @property
    def full_scale_removed(self) -> int:
        return len(self.unaccessed)

    @property
    def direct_only_removed(self) -> int:
        return len(self.direct_bloated) + len(self.cascade_from_direct)

    @property
    def direct_only_rd(self) -> Fraction:
        if not self.total_runtime:
            return Fraction(0)
        return compute_rd(self.direct_only_removed, self.total_runtime)


def compute_rd(dep_r: int, dep_o: int) -> Fraction:
    """Share of the original tree that was removed, as an exact fraction."""
    if dep_o == 0:
        raise ZeroTotal("cannot compute removal ratio of an empty dependency tree")
    if not 0 <= dep_r <= dep_o:
        raise ValueError(f"removed count {dep_r} outside [0, {dep_o}]")
    return Fraction(dep_r, dep_o)


def format_percent(ratio) -> str:
    """Render a ratio as a percentage rounded half-up to two decimals.

    Trailing zeros are dropped, so 1 renders as ``"100"`` and 0.125 as ``"12.5"``.
    """
    scaled = Fraction(ratio) * 10000  # hundredths of a percent
    hundredths = int(scaled)
    if scaled - hundredths >= Fraction(1, 2):
        hundredths += 1
    whole, frac = divmod(hundredths, 100)
    if frac == 0:
        return str(whole)
    return f"{whole}.{frac:02d}".rstrip("0")


def shadow_candidates(lock: Lockfile, accessed: Iterable[str]) -> set[str]:
    """Accessed nested instances whose name is also installed at an ancestor level.

    Removing one of these would let the runtime resolver fall back to the
    ancestor copy, so they are reported but never removed automatically.
    """
    flagged = set()
    for path in accessed:
        inst = lock.instances.get(path)
        if inst is None:
            continue
        chain = split_install_path(path)
        if len(chain) < 2:
            continue
        name = chain[-1]
        for depth in range(len(chain) - 2, -1, -1):
            if join_install_path(chain[:depth] + [name]) in lock.instances:
                flagged.add(path)
                break
    return flagged


def detect(lock: Lockfile, accessed: Iterable[str]) -> BloatReport:
    runtime = runtime_instances(lock)
    accessed = frozenset(accessed)
    outside = accessed - runtime
    if outside:
        raise AccessOutsideLockfile(
            f"{len(outside)} accessed paths are not runtime instances, e.g. {sorted(outside)[0]!r}"
        )
    unaccessed = frozenset(runtime - accessed)
    direct_paths = {p for p in runtime if lock.instances[p].is_direct}
    direct_bloated = frozenset(lock.instances[p].name for p in unaccessed & direct_paths)
    indirect_bloated = frozenset(unaccessed - direct_paths)
    orphans = frozenset(orphan_instances(lock))
    # orphans are unreachable with or without the removal, so they are not cascade
    cascade = frozenset(
        runtime - orphans - reachable_instances(lock, direct_bloated) - direct_paths
    )

    notes = []
    if orphans:
        notes.append(f"{len(orphans)} runtime instances are unreachable from the root (orphans)")
    bundled = frozenset(bundled_instances(lock) & runtime)
    if bundled:
        notes.append(f"{len(bundled)} bundled instances were treated as ordinary dependencies")

    return BloatReport(
        total_runtime=len(runtime),
        accessed=accessed,
        unaccessed=unaccessed,
        direct_bloated=direct_bloated,
        indirect_bloated=indirect_bloated,
        cascade_from_direct=cascade,
        shadow_candidates=frozenset(shadow_candidates(lock, accessed)),
        r_d=compute_rd(len(unaccessed), len(runtime)) if runtime else Fraction(0),
        direct_count=len(direct_paths),
        orphans=orphans,
        bundled=bundled,
        package=lock.root_name,
        notes=tuple(notes),
    )
