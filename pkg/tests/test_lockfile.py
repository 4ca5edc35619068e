import difflib
import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depprune.errors import (
    BadInstallPath,
    DuplicateKey,
    MalformedDocument,
    UnresolvableDependency,
    UnsupportedLockfileVersion,
)
from depprune.lockfile import (
    Scope,
    dev_instances,
    map_path_to_name,
    orphan_instances,
    parse_lockfile,
    parse_manifest,
    reachable_instances,
    resolution_candidates,
    runtime_instances,
    serialize_lockfile,
    serialize_manifest,
)
from lockgen import brute_reachable, dumps, podcast_search_lockfile, random_lockfile

FIXTURES = Path(__file__).parent / "fixtures"


def lock_doc(packages, version=3, root=None):
    return dumps({
        "name": "p",
        "lockfileVersion": version,
        "packages": {"": root or {"name": "p", "version": "1.0.0"}, **packages},
    })


# -- manifest --------------------------------------------------------------------


def test_minimal_manifest():
    m = parse_manifest('{"name":"p","dependencies":{"a":"^1.0.0"}}')
    assert m.name == "p"
    assert m.runtime_deps == {"a": "^1.0.0"}
    assert m.dev_deps == {}


def test_manifest_without_sections():
    m = parse_manifest('{"name":"p"}')
    assert m.runtime_deps == {} and m.dev_deps == {}


def test_forty_field_manifest_round_trips():
    text = (FIXTURES / "manifests" / "forty-fields.json").read_text(encoding="utf-8")
    original = json.loads(text)
    assert len(original) == 40
    m = parse_manifest(text)
    out = serialize_manifest(m)
    again = json.loads(out)
    assert again == original
    assert list(again) == list(original)
    assert list(again["dependencies"]) == list(original["dependencies"])
    assert parse_manifest(out) == m
    assert out.startswith('{\n  "name"')


def test_removing_one_dep_touches_one_line_region():
    text = (FIXTURES / "manifests" / "forty-fields.json").read_text(encoding="utf-8")
    m = parse_manifest(text)
    base = serialize_manifest(m).splitlines()
    deps = {k: v for k, v in m.runtime_deps.items() if k != "lodash"}
    edited = serialize_manifest(m.replace(runtime_deps=deps)).splitlines()
    changed = [
        op for op in difflib.SequenceMatcher(a=base, b=edited).get_opcodes() if op[0] != "equal"
    ]
    assert len(changed) == 1
    tag, i1, i2, j1, j2 = changed[0]
    assert tag == "delete" and i2 - i1 == 1 and '"lodash"' in base[i1]


def test_manifest_syntax_error_reports_position():
    with pytest.raises(MalformedDocument) as info:
        parse_manifest('{\n  "name": "p",\n  "dependencies": {"a": }\n}')
    assert info.value.line == 3
    assert info.value.exit_code == 2


def test_duplicate_dependency_name_rejected():
    with pytest.raises(DuplicateKey):
        parse_manifest('{"name":"p","dependencies":{"a":"1","a":"2"}}')


# -- lockfile --------------------------------------------------------------------


def test_scope_split():
    lock = parse_lockfile(lock_doc({
        "node_modules/a": {"version": "1.0.0"},
        "node_modules/b": {"version": "1.0.0", "dev": True},
    }))
    assert lock.instances["node_modules/a"].scope is Scope.RUNTIME
    assert lock.instances["node_modules/b"].scope is Scope.DEV


def test_dev_optional_counts_as_dev():
    lock = parse_lockfile(lock_doc({"node_modules/a": {"version": "1.0.0", "devOptional": True}}))
    assert dev_instances(lock) == {"node_modules/a"}


def test_nested_instance_name_and_directness():
    lock = parse_lockfile(lock_doc(
        {
            "node_modules/require-uncached": {"version": "1.0.3",
                                              "dependencies": {"resolve-from": "^1.0.0"}},
            "node_modules/require-uncached/node_modules/resolve-from": {"version": "1.0.1"},
            "node_modules/resolve-from": {"version": "2.0.0"},
        },
        root={"name": "p", "dependencies": {"require-uncached": "*", "resolve-from": "*"}},
    ))
    inst = lock.instances["node_modules/require-uncached/node_modules/resolve-from"]
    assert inst.name == "resolve-from"
    assert inst.is_direct is False
    assert lock.instances["node_modules/resolve-from"].is_direct is True
    assert lock.resolve("node_modules/require-uncached", "resolve-from") == (
        "node_modules/require-uncached/node_modules/resolve-from"
    )
    assert lock.resolve("", "resolve-from") == "node_modules/resolve-from"


def test_lockfile_v1_rejected():
    with pytest.raises(UnsupportedLockfileVersion):
        parse_lockfile('{"name":"p","lockfileVersion":1,"dependencies":{}}')


def test_missing_packages_map_rejected():
    with pytest.raises(UnsupportedLockfileVersion):
        parse_lockfile('{"name":"p","lockfileVersion":2}')


@pytest.mark.parametrize("key", ["node_modules", "lib/a", "node_modules/./a",
                                 "node_modules/a/../b", "node_modules/@scope"])
def test_bad_install_path(key):
    with pytest.raises(BadInstallPath):
        parse_lockfile(lock_doc({key: {"version": "1.0.0"}}))


def test_scoped_names():
    assert map_path_to_name("node_modules/@s/x/node_modules/@t/y") == "@t/y"
    assert map_path_to_name("node_modules/a/node_modules/b") == "b"
    assert resolution_candidates("node_modules/a/node_modules/@s/x", "q") == [
        "node_modules/a/node_modules/@s/x/node_modules/q",
        "node_modules/a/node_modules/q",
        "node_modules/q",
    ]


def test_runtime_instances_counts():
    lock = parse_lockfile(lock_doc({
        **{f"node_modules/r{i}": {"version": "1.0.0"} for i in range(3)},
        **{f"node_modules/d{i}": {"version": "1.0.0", "dev": True} for i in range(2)},
    }))
    assert runtime_instances(lock) == {f"node_modules/r{i}" for i in range(3)}
    assert runtime_instances(parse_lockfile(lock_doc({}))) == set()


def test_podcast_shape_counts():
    lock = parse_lockfile(dumps(podcast_search_lockfile()))
    assert len(runtime_instances(lock)) == 681
    assert reachable_instances(lock) == runtime_instances(lock)
    assert reachable_instances(lock, {"npm"}) == {"node_modules/got"}


def test_unresolvable_dependency_names_requester():
    lock = parse_lockfile(lock_doc(
        {"node_modules/a": {"version": "1.0.0", "dependencies": {"ghost": "*"}}},
        root={"name": "p", "dependencies": {"a": "*"}},
    ))
    with pytest.raises(UnresolvableDependency) as info:
        reachable_instances(lock)
    assert info.value.requester == "node_modules/a" and info.value.name == "ghost"


def test_missing_optional_and_peer_edges_are_skipped():
    lock = parse_lockfile(lock_doc(
        {"node_modules/a": {"version": "1.0.0",
                            "optionalDependencies": {"fsevents": "*"},
                            "peerDependencies": {"react": "*"}}},
        root={"name": "p", "dependencies": {"a": "*"}},
    ))
    assert reachable_instances(lock) == {"node_modules/a"}


def test_orphans_are_modeled():
    lock = parse_lockfile(lock_doc(
        {"node_modules/a": {"version": "1.0.0"}, "node_modules/stray": {"version": "1.0.0"}},
        root={"name": "p", "dependencies": {"a": "*"}},
    ))
    assert orphan_instances(lock) == {"node_modules/stray"}


def test_unmodified_lockfile_is_byte_identical():
    text = (FIXTURES / "e2e" / "package-lock.json").read_text()
    assert serialize_lockfile(parse_lockfile(text)) == text


# -- properties over random lockfiles ---------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_and_partition(seed):
    doc = random_lockfile(random.Random(seed), max_instances=80)
    lock = parse_lockfile(dumps(doc))
    again = parse_lockfile(serialize_lockfile(lock))
    assert again == lock
    assert json.loads(serialize_lockfile(lock)) == doc
    rt, dv = runtime_instances(lock), dev_instances(lock)
    assert rt | dv == set(lock.instances) and not rt & dv
    for path, inst in lock.instances.items():
        assert map_path_to_name(path) == inst.name


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.data())
def test_reachability_matches_oracle_and_is_monotone(seed, data):
    doc = random_lockfile(random.Random(seed), max_instances=80)
    lock = parse_lockfile(dumps(doc))
    direct = sorted(doc["packages"][""].get("dependencies", {}))
    small = set(data.draw(st.lists(st.sampled_from(direct), unique=True))) if direct else set()
    big = small | (set(data.draw(st.lists(st.sampled_from(direct), unique=True))) if direct else set())
    r_small = reachable_instances(lock, small)
    r_big = reachable_instances(lock, big)
    assert r_small == brute_reachable(doc, small)
    assert r_big <= r_small
    assert not r_small & dev_instances(lock)
    assert reachable_instances(lock, include_dev=True) == brute_reachable(doc, include_dev=True)
