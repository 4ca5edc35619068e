"""Model of ``package.json`` and ``package-lock.json`` (lockfile v2/v3).

The lockfile's ``packages`` map is read into :class:`DependencyInstance`
objects keyed by install path.  Every document fragment the tool does not
interpret is kept as the original ``dict`` so that serialization reproduces
the input with the same key order.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .errors import (
    BadInstallPath,
    DuplicateKey,
    MalformedDocument,
    UnresolvableDependency,
    UnsupportedLockfileVersion,
)

NODE_MODULES = "node_modules"
SUPPORTED_LOCKFILE_VERSIONS = (2, 3)

# Sections of a package entry that contribute resolution edges.  Only
# "dependencies" must resolve; the others are skipped when nothing is
# installed for them.
REQUIRED_EDGE_SECTIONS = ("dependencies",)
OPTIONAL_EDGE_SECTIONS = ("optionalDependencies", "peerDependencies")
EDGE_SECTIONS = REQUIRED_EDGE_SECTIONS + OPTIONAL_EDGE_SECTIONS
ROOT_DECLARATION_SECTIONS = EDGE_SECTIONS + ("devDependencies",)


class Scope(str, Enum):
    RUNTIME = "runtime"
    DEV = "dev"


# -- JSON helpers ------------------------------------------------------------


def _load_json(text, source=None, strict_sections=()):
    """json.loads with line/column errors and duplicate-key detection.

    Duplicate keys inside an object whose parent key is in
    ``strict_sections`` raise DuplicateKey; elsewhere the last value wins,
    matching ``JSON.parse``.
    """

    def hook(pairs):
        seen = {}
        dupes = []
        for key, value in pairs:
            if key in seen:
                dupes.append(key)
            seen[key] = value
        if dupes:
            obj = dict(seen)
            obj["\x00dupes"] = dupes
            return obj
        return seen

    try:
        doc = json.loads(text, object_pairs_hook=hook)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(exc.msg, exc.lineno, exc.colno, source) from None
    return _strip_dupes(doc, strict_sections, source, parent=None)


def _strip_dupes(node, strict_sections, source, parent):
    if isinstance(node, dict):
        dupes = node.pop("\x00dupes", None)
        if dupes and parent in strict_sections:
            raise DuplicateKey(
                f"duplicate key {dupes[0]!r} in section {parent!r}", source=source
            )
        for key, value in node.items():
            node[key] = _strip_dupes(value, strict_sections, source, key)
    elif isinstance(node, list):
        return [_strip_dupes(v, strict_sections, source, parent) for v in node]
    return node


def dump_json(doc) -> str:
    """Serialize the way npm writes its metadata files."""
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


# -- install paths -----------------------------------------------------------


def split_install_path(install_path: str) -> list[str]:
    """Split ``node_modules/a/node_modules/@s/b`` into ``["a", "@s/b"]``."""
    if not install_path or not install_path.startswith(NODE_MODULES + "/"):
        raise BadInstallPath(f"install path must start with 'node_modules/': {install_path!r}")
    parts = install_path.split("/")
    names = []
    i = 0
    while i < len(parts):
        if parts[i] != NODE_MODULES:
            raise BadInstallPath(f"expected 'node_modules' segment in {install_path!r}")
        i += 1
        if i >= len(parts):
            raise BadInstallPath(f"install path ends with 'node_modules': {install_path!r}")
        head = parts[i]
        if head.startswith("@"):
            if i + 1 >= len(parts):
                raise BadInstallPath(f"scope without package name in {install_path!r}")
            name_parts = [head, parts[i + 1]]
            i += 2
        else:
            name_parts = [head]
            i += 1
        for comp in name_parts:
            if comp in ("", ".", "..", NODE_MODULES) or comp == "@":
                raise BadInstallPath(f"invalid component {comp!r} in {install_path!r}")
        names.append("/".join(name_parts))
    return names


def join_install_path(names: Iterable[str]) -> str:
    return "/".join(f"{NODE_MODULES}/{n}" for n in names)


def map_path_to_name(install_path: str) -> str:
    return split_install_path(install_path)[-1]


def parent_install_path(install_path: str) -> str:
    """Install path of the enclosing package, ``""`` for root-level installs."""
    return join_install_path(split_install_path(install_path)[:-1])


def resolution_candidates(requester: str, name: str) -> list[str]:
    """Paths probed, in order, when ``requester`` asks for ``name``.

    ``requester`` is an install path or ``""`` for the package root.
    """
    chain = split_install_path(requester) if requester else []
    return [join_install_path(chain[:depth] + [name]) for depth in range(len(chain), -1, -1)]


# -- manifest ----------------------------------------------------------------


@dataclass(frozen=True)
class Manifest:
    name: str
    runtime_deps: dict[str, str]
    dev_deps: dict[str, str]
    passthrough: dict = field(repr=False)

    def to_document(self) -> dict:
        doc = {}
        for key, value in self.passthrough.items():
            if key == "dependencies":
                doc[key] = dict(self.runtime_deps)
            elif key == "devDependencies":
                doc[key] = dict(self.dev_deps)
            else:
                doc[key] = value
        return doc

    def replace(self, **changes) -> "Manifest":
        fields = dict(
            name=self.name,
            runtime_deps=self.runtime_deps,
            dev_deps=self.dev_deps,
            passthrough=self.passthrough,
        )
        fields.update(changes)
        return Manifest(**fields)


def parse_manifest(text: str, source: str | None = None) -> Manifest:
    doc = _load_json(
        text, source, strict_sections=("dependencies", "devDependencies")
    )
    if not isinstance(doc, dict):
        raise MalformedDocument("manifest must be a JSON object", source=source)
    runtime = doc.get("dependencies") or {}
    dev = doc.get("devDependencies") or {}
    for section, value in (("dependencies", runtime), ("devDependencies", dev)):
        if not isinstance(value, dict):
            raise MalformedDocument(f"{section!r} must be an object", source=source)
    return Manifest(
        name=doc.get("name", ""),
        runtime_deps=dict(runtime),
        dev_deps=dict(dev),
        passthrough=_placeholders(doc, ("dependencies", "devDependencies")),
    )


def _placeholders(doc: dict, modeled) -> dict:
    # modeled sections live in typed fields; keep only their position here
    return {k: (None if k in modeled else v) for k, v in doc.items()}


def serialize_manifest(m: Manifest) -> str:
    return dump_json(m.to_document())


# -- lockfile ----------------------------------------------------------------


@dataclass(frozen=True)
class DependencyInstance:
    install_path: str
    name: str
    version: str
    scope: Scope
    declared_deps: dict[str, str]
    is_direct: bool
    passthrough: dict = field(repr=False, compare=False)

    @property
    def depth(self) -> int:
        return self.install_path.count(NODE_MODULES + "/")

    def required_names(self) -> list[str]:
        return list((self.passthrough.get("dependencies") or {}).keys())

    def optional_names(self) -> list[str]:
        names = []
        for section in OPTIONAL_EDGE_SECTIONS:
            names.extend((self.passthrough.get(section) or {}).keys())
        return names

    def without_declared(self, names: set[str]) -> "DependencyInstance":
        """Copy with ``names`` dropped from every edge section."""
        entry = _drop_names(self.passthrough, names, EDGE_SECTIONS)
        return _build_instance(self.install_path, entry, self.is_direct)


def _drop_names(entry: dict, names, sections) -> dict:
    out = {}
    for key, value in entry.items():
        if key in sections and isinstance(value, dict):
            value = {k: v for k, v in value.items() if k not in names}
        out[key] = value
    return out


def _declared(entry: dict) -> dict[str, str]:
    declared = {}
    for section in EDGE_SECTIONS:
        for dep, rng in (entry.get(section) or {}).items():
            declared.setdefault(dep, rng)
    return declared


def _build_instance(install_path, entry, is_direct) -> DependencyInstance:
    dev = bool(entry.get("dev")) or bool(entry.get("devOptional"))
    return DependencyInstance(
        install_path=install_path,
        name=map_path_to_name(install_path),
        version=str(entry.get("version", "")),
        scope=Scope.DEV if dev else Scope.RUNTIME,
        declared_deps=_declared(entry),
        is_direct=is_direct,
        passthrough=entry,
    )


@dataclass(frozen=True)
class Lockfile:
    lockfile_version: int
    root_name: str
    instances: dict[str, DependencyInstance]
    root_entry: dict = field(repr=False)
    passthrough: dict = field(repr=False)

    def __len__(self):
        return len(self.instances)

    def root_declared(self, sections=ROOT_DECLARATION_SECTIONS) -> dict[str, str]:
        declared = {}
        for section in sections:
            for dep, rng in (self.root_entry.get(section) or {}).items():
                declared.setdefault(dep, rng)
        return declared

    def resolve(self, requester: str, name: str) -> str | None:
        """Install path that ``name`` resolves to from ``requester``, or None."""
        for candidate in resolution_candidates(requester, name):
            if candidate in self.instances:
                return candidate
        return None

    def to_document(self) -> dict:
        doc = {}
        for key, value in self.passthrough.items():
            if key == "packages":
                packages = {"": self.root_entry} if self.root_entry is not None else {}
                for path, inst in self.instances.items():
                    packages[path] = inst.passthrough
                doc[key] = packages
            else:
                doc[key] = value
        return doc

    def replace(self, **changes) -> "Lockfile":
        fields = dict(
            lockfile_version=self.lockfile_version,
            root_name=self.root_name,
            instances=self.instances,
            root_entry=self.root_entry,
            passthrough=self.passthrough,
        )
        fields.update(changes)
        return Lockfile(**fields)


def parse_lockfile(text: str, source: str | None = None) -> Lockfile:
    doc = _load_json(text, source, strict_sections=("packages",) + ROOT_DECLARATION_SECTIONS)
    if not isinstance(doc, dict):
        raise MalformedDocument("lockfile must be a JSON object", source=source)
    version = doc.get("lockfileVersion")
    if version not in SUPPORTED_LOCKFILE_VERSIONS:
        raise UnsupportedLockfileVersion(
            f"lockfileVersion {version!r} is not supported (need 2 or 3; "
            "regenerate with npm >= 7)"
        )
    packages = doc.get("packages")
    if not isinstance(packages, dict):
        raise UnsupportedLockfileVersion("lockfile has no 'packages' map")
    root_entry = packages.get("", {})
    direct_names = set()
    for section in ROOT_DECLARATION_SECTIONS:
        direct_names.update((root_entry.get(section) or {}).keys())

    instances = {}
    for path, entry in packages.items():
        if path == "":
            continue
        if not isinstance(entry, dict):
            raise MalformedDocument(f"package entry {path!r} must be an object", source=source)
        names = split_install_path(path)
        is_direct = len(names) == 1 and names[0] in direct_names
        instances[path] = _build_instance(path, entry, is_direct)
    return Lockfile(
        lockfile_version=version,
        root_name=str(root_entry.get("name", doc.get("name", ""))),
        instances=instances,
        root_entry=root_entry,
        passthrough=_placeholders(doc, ("packages",)),
    )


def serialize_lockfile(lock: Lockfile) -> str:
    return dump_json(lock.to_document())


# -- queries -----------------------------------------------------------------


def runtime_instances(lock: Lockfile) -> set[str]:
    return {p for p, inst in lock.instances.items() if inst.scope is Scope.RUNTIME}


def dev_instances(lock: Lockfile) -> set[str]:
    return {p for p, inst in lock.instances.items() if inst.scope is Scope.DEV}


def _edges(lock: Lockfile, requester: str, required: Iterable[str], optional: Iterable[str]):
    for dep in required:
        target = lock.resolve(requester, dep)
        if target is None:
            raise UnresolvableDependency(requester, dep)
        yield target
    for dep in optional:
        target = lock.resolve(requester, dep)
        if target is not None:
            yield target


def reachable_instances(
    lock: Lockfile, excluded_direct: Iterable[str] = (), include_dev: bool = False
) -> set[str]:
    """Runtime install paths reachable from the root.

    Roots are the package's runtime declarations minus ``excluded_direct``;
    edges follow the node_modules resolution walk.  Dev instances are never
    entered unless ``include_dev`` is set, which also adds the root's
    ``devDependencies`` as starting points.
    """
    excluded = set(excluded_direct)
    root = lock.root_entry or {}
    required = [n for n in (root.get("dependencies") or {}) if n not in excluded]
    if include_dev:
        required += list(root.get("devDependencies") or {})
    optional = [
        n for s in OPTIONAL_EDGE_SECTIONS for n in (root.get(s) or {}) if n not in excluded
    ]
    seen: set[str] = set()
    queue = deque(_edges(lock, "", required, optional))
    while queue:
        path = queue.popleft()
        if path in seen:
            continue
        inst = lock.instances[path]
        if inst.scope is Scope.DEV and not include_dev:
            continue
        seen.add(path)
        queue.extend(_edges(lock, path, inst.required_names(), inst.optional_names()))
    return seen


def orphan_instances(lock: Lockfile) -> set[str]:
    """Runtime instances no root declaration can reach."""
    return runtime_instances(lock) - reachable_instances(lock)


def bundled_instances(lock: Lockfile) -> set[str]:
    return {p for p, inst in lock.instances.items() if inst.passthrough.get("inBundle")}


def resolution_closure(lock: Lockfile, paths: Iterable[str]) -> set[str]:
    """``paths`` plus every instance they resolve to, transitively.

    Missing targets are skipped rather than raised; this is used to restore
    a consistent subtree, not to validate one.
    """
    seen: set[str] = set()
    stack = [p for p in paths if p in lock.instances]
    while stack:
        path = stack.pop()
        if path in seen:
            continue
        seen.add(path)
        for dep in lock.instances[path].declared_deps:
            target = lock.resolve(path, dep)
            if target is not None and target not in seen:
                stack.append(target)
    return seen


def read_manifest(path) -> Manifest:
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh.read(), source=str(path))


def read_lockfile(path) -> Lockfile:
    with open(path, encoding="utf-8") as fh:
        return parse_lockfile(fh.read(), source=str(path))
