import json
import math
import random
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from depprune.detect import compute_rd, detect, format_percent
from depprune.errors import LengthMismatch, MalformedDocument, TooFewPoints
from depprune.lockfile import parse_lockfile, runtime_instances
from depprune.report import (
    CorpusRow,
    average_ranks,
    corpus_row,
    render,
    render_corpus,
    report_from_json,
    spearman,
    summarize,
)
from lockgen import dumps, podcast_search_lockfile, random_lockfile

SCHEMA = Path(__file__).resolve().parents[1] / "src" / "depprune" / "schema" / "report.schema.json"


def naive_spearman(xs, ys):
    """Rank by counting, then the textbook Pearson formula."""
    def ranks(v):
        return [1 + sum(b < a for b in v) + (sum(b == a for b in v) - 1) / 2 for a in v]
    rx, ry = ranks(xs), ranks(ys)
    n = len(xs)
    mx, my = sum(rx) / n, sum(ry) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    return cov / math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))


def test_spearman_extremes():
    assert spearman([1, 2, 3, 4], [1, 2, 3, 4])[0] == 1.0
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1])[0] == -1.0


def test_spearman_twenty_points_against_oracle():
    rng = random.Random(2024)
    xs = [rng.random() for _ in range(20)]
    ys = [x + rng.gauss(0, 0.5) for x in xs]
    rs, p = spearman(xs, ys)
    assert abs(rs - naive_spearman(xs, ys)) < 1e-9
    ref = stats.spearmanr(xs, ys)
    assert abs(rs - ref.statistic) < 1e-9 and abs(p - ref.pvalue) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(-3, 3)), min_size=3, max_size=30))
def test_spearman_with_ties(pairs):
    xs, ys = [float(a) for a, _ in pairs], [float(b) for _, b in pairs]
    rs, p = spearman(xs, ys)
    if len(set(xs)) == 1 or len(set(ys)) == 1:
        assert math.isnan(rs)
        return
    assert -1 <= rs <= 1
    assert abs(rs - naive_spearman(xs, ys)) < 1e-9
    ref = stats.spearmanr(xs, ys)
    assert abs(rs - ref.statistic) < 1e-9
    if abs(rs) < 1:
        assert abs(p - ref.pvalue) < 1e-9
    # invariant under strictly increasing transforms
    assert abs(spearman([math.exp(x) for x in xs], [y ** 3 for y in ys])[0] - rs) < 1e-12


def test_spearman_errors():
    with pytest.raises(LengthMismatch):
        spearman([1, 2, 3], [1, 2])
    with pytest.raises(TooFewPoints):
        spearman([1, 2], [1, 2])


def test_average_ranks():
    assert average_ranks([10, 20, 20, 5]) == [2.0, 3.5, 3.5, 1.0]


# -- rendering -------------------------------------------------------------------


def _podcast_report():
    return detect(parse_lockfile(dumps(podcast_search_lockfile())), {"node_modules/got"})


def test_text_rendering_of_podcast_row():
    text = render(_podcast_report(), "text")
    assert "680 / 681" in text and "99.85%" in text
    assert text.isascii()


def test_empty_report_json():
    empty = parse_lockfile(dumps({"name": "e", "lockfileVersion": 3, "packages": {"": {"name": "e"}}}))
    doc = json.loads(render(detect(empty, set()), "json"))
    assert doc["summary"]["total_runtime"] == 0
    assert doc["unaccessed"] == [] and doc["direct_bloated"] == []
    assert doc["summary"]["full_scale"] == {"removed": 0, "original": 0, "r_d": "0"}


def test_json_round_trip_and_schema():
    jsonschema = pytest.importorskip("jsonschema")
    report = _podcast_report()
    text = render(report, "json")
    assert report_from_json(text) == report
    doc = json.loads(text)
    assert doc["summary"]["full_scale"] == {"removed": 680, "original": 681, "r_d": "99.85"}
    jsonschema.validate(doc, json.loads(SCHEMA.read_text()))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_json_round_trip_random(seed):
    rng = random.Random(seed)
    lock = parse_lockfile(dumps(random_lockfile(rng, max_instances=40)))
    accessed = {p for p in sorted(runtime_instances(lock)) if rng.random() < 0.5}
    report = detect(lock, accessed)
    assert report_from_json(render(report, "json")) == report
    assert render(report, "json") == render(report_from_json(render(report, "json")), "json")


def test_rejects_foreign_json():
    with pytest.raises(MalformedDocument):
        report_from_json('{"schema": "something-else"}')
    with pytest.raises(MalformedDocument):
        report_from_json("{not json")


def test_unknown_format():
    with pytest.raises(ValueError):
        render(_podcast_report(), "html")


# -- corpus ----------------------------------------------------------------------


def test_corpus_summary():
    rows = [
        CorpusRow("p1", total_runtime=681, direct_count=2, direct_bloated=1, cascade=679,
                  removed=680, original=681, r_d=680 / 681, bloated=680),
        CorpusRow("p2", total_runtime=22, direct_count=5, direct_bloated=2, cascade=8,
                  removed=12, original=22, r_d=12 / 22, bloated=12),
        CorpusRow("p3", total_runtime=828, direct_count=9, direct_bloated=3, cascade=100,
                  removed=206, original=828, r_d=206 / 828, bloated=206),
        CorpusRow("broken", error="MalformedDocument: bad"),
    ]
    s = summarize(rows)
    assert [r.name for r in s.rows] == ["p1", "p2", "p3", "broken"]
    assert s.aggregate["packages"] == 3 and s.aggregate["errors"] == 1
    assert s.aggregate["removed"] == 898 and s.aggregate["original"] == 1531
    for r in s.rows[:3]:
        assert abs(r.r_d - float(compute_rd(r.removed, r.original))) < 1e-9
    assert s.spearman_rs == pytest.approx(naive_spearman(
        [r.bloat_fraction for r in rows[:3]], [r.total_runtime for r in rows[:3]]))
    text = render_corpus(s)
    assert "680 / 681" in text and "54.55" in text and "24.88" in text and "error" in text
    doc = json.loads(render_corpus(s, "json"))
    assert [row["r_d"] for row in doc["rows"][:3]] == ["99.85", "54.55", "24.88"]


def test_corpus_row_strategies():
    report = _podcast_report()
    full = corpus_row(report, "full_scale")
    direct = corpus_row(report, "direct_only")
    assert (full.removed, full.original) == (680, 681)
    assert (direct.removed, direct.original) == (680, 681)
    assert format_percent(Fraction(full.removed, full.original)) == "99.85"
