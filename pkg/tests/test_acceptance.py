"""Acceptance suite: one test per primary criterion, each printing a
PASS/FAIL line so the run log doubles as a checklist."""

import io
import math
import random
import time
from pathlib import Path

import pytest

from builders import day, random_corpus
from campaign_cases import layered, simulate_campaign
from cause_fixture import OVERRIDES, SIX_CAUSE_TABLE, six_cause_corpus
from cli_fixture import rewrite_poms, write_fixture
from maven_order import EQUAL_GROUPS, ordered_pairs
from oracles import brute_affected
from restore_cases import expected_outcome, make_instance, oracle
from ranger.alsearch import find_affected
from ranger.analytics import (
    PvulSeries,
    SeriesPoint,
    cause_proportions,
    classify_cause,
    full_life,
    half_life,
    new_release_span_from_dates,
)
from ranger.cli import main
from ranger.graph import load_snapshot, save_snapshot
from ranger.monitor import run_campaign
from ranger.restore import restore_range
from ranger.version import compare_versions, parse_version, parse_version_spec, synthesize_range

V = parse_version


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  [{number}] {title}: {detail}")
        assert ok, detail

    return emit


# 1 ----------------------------------------------------------------------


def test_resolver_alsearch_equivalence(report):
    start = time.perf_counter()
    corpora = agree = checked = releases = 0
    mismatches = []
    for seed in range(50):
        g = random_corpus(5000 + seed, max_releases=300, n_libs=40 + seed % 30, dm_rate=0.2)
        corpora += 1
        releases += len(g)
        for v in g.vulnerabilities:
            checked += 1
            got = {r.release: r.depth for r in find_affected(g, v)}
            if got == brute_affected(g, v):
                agree += 1
            else:
                mismatches.append((seed, v.id))
    elapsed = time.perf_counter() - start
    ok = agree == checked and corpora >= 50 and elapsed < 60
    report(1, "Resolver-ALSearch equivalence", ok, f"{corpora} corpora ({releases} releases), {agree}/{checked} vulnerabilities agree, {elapsed:.1f} s {mismatches[:3]}")


# 2 ----------------------------------------------------------------------


def test_maven_version_order(report):
    pairs = ordered_pairs()
    wrong = [(a, b) for a, b in pairs if not (compare_versions(V(a), V(b)) < 0 and compare_versions(V(b), V(a)) > 0)]
    for group in EQUAL_GROUPS:
        for a in group:
            for b in group:
                if compare_versions(V(a), V(b)) != 0:
                    wrong.append((a, b))
    ok = len(pairs) >= 40 and not wrong
    report(2, "Maven version order", ok, f"{len(pairs)} ordered pairs and {len(EQUAL_GROUPS)} equality groups, {len(wrong)} wrong {wrong[:3]}")


# 3 ----------------------------------------------------------------------


def test_restoration_optimality(report):
    start = time.perf_counter()
    agree = 0
    n = 250
    for seed in range(n):
        inst = make_instance(seed)
        res = restore_range(inst.graph, inst.dependent, inst.target, usage=inst.usage, surfaces=inst.surfaces)
        _, best = oracle(inst)
        if set(res.optimum) == best and res.outcome == expected_outcome(inst, best):
            agree += 1
    elapsed = time.perf_counter() - start
    ok = agree == n and elapsed < 30
    report(3, "Restoration optimality", ok, f"{agree}/{n} instances match exhaustive search, {elapsed:.1f} s")


# 4 ----------------------------------------------------------------------


def _series(points, published, end):
    pts = [SeriesPoint(day(d), p, 1 - p, 0, 100) for d, p in points]
    return PvulSeries("X", "day", day(published), day(end), pts)


def _linear_case(n, rate, published, horizon, releases):
    """Affected count falls by ``rate`` a day from ``n``; closed forms follow."""
    points = [(t, max(0, n - rate * t) / n) for t in range(horizon + 1)]
    end = horizon
    cross = math.ceil(n / (2 * rate))
    zero = math.ceil(n / rate)
    return {
        "series": _series(points, published, end),
        "half": cross - published,
        "full": zero - published if zero <= horizon else None,
        "releases": releases,
        "published": published,
        "end": end,
    }


def _hand_case(points, published, end, half, full, releases=(), relative=None):
    return {"series": _series(points, published, end), "half": half, "full": full, "releases": list(releases), "published": published, "end": end, "relative": relative}


def metric_cases():
    cases = [
        _linear_case(10, 1, 0, 20, [3, 8]),
        _linear_case(10, 1, 3, 20, [1]),
        _linear_case(9, 1, 0, 20, []),
        _linear_case(100, 7, 0, 30, [29]),
        _linear_case(100, 7, 20, 30, [25, 12]),  # crossing before publication
        _linear_case(50, 3, -5, 40, [0, 10]),
        _linear_case(64, 4, 0, 15, [15]),  # never reaches zero within the horizon
        _linear_case(30, 30, 0, 5, [2]),
        # never at or below one half: not_reached, normalized 1.0
        _hand_case([(0, 1.0), (50, 0.9), (100, 0.6)], 0, 100, None, None, [40, 90]),
        # falls to zero, then rebounds
        _hand_case([(0, 1.0), (1, 0.0), (2, 0.0), (3, 0.3), (4, 0.3)], 0, 4, 1, None),
        # already below one half when published
        _hand_case([(0, 0.4), (10, 0.3), (20, 0.1)], 10, 110, -10, None, [5]),
        _hand_case([(0, 0.0), (5, 0.0)], 2, 12, -2, -2),
        _hand_case([(0, 0.5), (3, 0.2)], 0, 10, 0, None, [9]),
        _hand_case([(0, 0.9), (31, 0.7), (59, 0.5), (90, 0.0)], 0, 120, 59, 90, [31, 60]),
        _hand_case([(0, 1.0)], 0, 30, None, None),
        _hand_case([(0, 0.6), (10, 0.4), (20, 0.29), (30, 0.0)], 0, 40, 10, 30, [], relative=20),
        _hand_case([(0, 0.8), (7, 0.51), (14, 0.5), (21, 0.49)], 7, 28, 7, None, [6]),
        _hand_case([(0, 1.0), (100, 0.0), (200, 0.0), (300, 0.0)], 0, 300, 100, 100, [150, 299]),
        _hand_case([(-30, 0.2), (0, 0.0)], 0, 60, -30, 0, [-40]),
        _hand_case([(0, 0.75), (45, 0.25), (60, 0.1), (61, 0.05)], 15, 75, 30, None, [70, 20]),
    ]
    return cases


def test_metric_correctness(report):
    cases = metric_cases()
    wrong = []
    for i, case in enumerate(cases):
        exposure = case["end"] - case["published"]
        hl = half_life(case["series"])
        fl = full_life(case["series"])
        norm = 1.0 if case["half"] is None else case["half"] / exposure
        if (hl.days, hl.normalized) != (case["half"], norm):
            wrong.append((i, "half", hl.days, case["half"]))
        if fl.days != case["full"]:
            wrong.append((i, "full", fl.days, case["full"]))
        if case.get("relative") is not None and half_life(case["series"], "relative").days != case["relative"]:
            wrong.append((i, "relative"))
        span = max([0] + [d - case["published"] for d in case["releases"]])
        nrs = new_release_span_from_dates(day(case["published"]), [day(d) for d in case["releases"]], day(case["end"]))
        if (nrs.days, nrs.normalized) != (span, min(1.0, max(0.0, span / exposure))):
            wrong.append((i, "nrs", nrs.days, span))
    negatives = sum(1 for c in cases if c["half"] is not None and c["half"] < 0)
    not_reached = sum(1 for c in cases if c["half"] is None)
    ok = len(cases) == 20 and not wrong and negatives and not_reached
    report(4, "Metric correctness", ok, f"{len(cases)} series ({negatives} negative, {not_reached} not_reached), {len(wrong)} wrong {wrong[:3]}")


# 5 ----------------------------------------------------------------------


def test_cause_partition(report):
    g = six_cause_corpus()
    labels = {}
    multi = 0
    for v in g.vulnerabilities:
        for rec in find_affected(g, v):
            if rec.release.gav in labels:
                multi += 1
            label = classify_cause(g, rec, OVERRIDES, vuln=v)
            labels[rec.release.gav] = label.cause if label else None
    props = cause_proportions(g, g.vulnerabilities, OVERRIDES)
    blocked = props["blocked_paths"]
    excludes_c1 = "C1" not in props["fractions"] and blocked == sum(props["counts"][c] for c in ["C2", "C3", "C4", "C5", "C6"])
    ok = labels == SIX_CAUSE_TABLE and multi == 0 and excludes_c1 and set(props["counts"]) == {f"C{i}" for i in range(1, 7)}
    report(5, "Cause partition", ok, f"{sum(1 for c in labels.values() if c)} labelled paths match the hand table: {labels == SIX_CAUSE_TABLE}; C1 outside the {blocked}-path denominator: {excludes_c1}")


# 6 ----------------------------------------------------------------------


def test_campaign_suppression(report):
    eco = layered(0)
    g = eco.graph()
    v = g.find_vulnerability("CVE-X")
    rep, final = run_campaign(g, v, max_depth=4, surfaces=eco.surfaces(g), usage_for=eco.usage_for)
    by_date = {}
    for row in rep.remaining_libvers:
        by_date.setdefault(row["date"], []).append(row["count"])
    monotone = all(c == sorted(c, reverse=True) for c in by_date.values())
    _, expected = simulate_campaign(eco, 4)
    got = {(r.release.library.artifact, r.release.version.raw): r.depth for r in find_affected(final, v, 4)}
    last = max(by_date)
    stages = [row["count"] for row in rep.remaining_libvers if row["date"] == last]
    drops = [a - b for a, b in zip(stages, stages[1:])]
    depth1_largest = bool(drops) and drops[0] == max(drops) and drops.count(drops[0]) == 1
    ok = len(g) >= 450 and monotone and got == expected and stages[-1] == len(expected) and depth1_largest
    report(
        6, "Campaign suppression", ok,
        f"{len(g)} releases, remaining per stage {stages}, fixed point {len(got)} vs simulator {len(expected)}, non-increasing: {monotone}, depth-1 drop largest: {depth1_largest}",
    )


# 7 ----------------------------------------------------------------------


def test_round_trip_and_determinism(report, tmp_path, monkeypatch):
    snaps = 0
    for seed in range(10):
        g = random_corpus(700 + seed)
        save_snapshot(g, tmp_path / f"{seed}.snap")
        if load_snapshot(tmp_path / f"{seed}.snap") == g:
            snaps += 1

    rng = random.Random(7)
    trips = 0
    for _ in range(1000):
        universe = sorted({V(f"{rng.randint(0, 3)}.{rng.randint(0, 12)}") for _ in range(rng.randint(1, 15))})
        selected = rng.sample(universe, rng.randint(1, len(universe)))
        spec = parse_version_spec(synthesize_range(selected, universe, rng.random() < 0.3))
        if {u for u in universe if spec.contains(u)} == set(selected):
            trips += 1

    monkeypatch.chdir(tmp_path)
    paths = write_fixture(tmp_path / "corpus")
    source = ["--index", paths["index"], "--poms", paths["poms"], "--vulns", paths["vulns"]]
    commands = [
        ["graph", "stats"],
        ["resolve", "--root", "org.demo:app:1", "--json"],
        ["alsearch", "--json"],
        ["metrics"],
        ["causes"],
        ["usage"],
        ["monitor", "--vuln", "CVE-2020-1"],
    ]
    identical = 0
    for cmd in commands:
        outs = []
        for _ in range(2):
            buf = io.StringIO()
            code = main(cmd + source, buf, io.StringIO())
            outs.append((code, buf.getvalue()))
        identical += outs[0] == outs[1] and outs[0][0] == 0
    ok = snaps == 10 and trips == 1000 and identical == len(commands)
    report(7, "Round-trip and determinism", ok, f"snapshots {snaps}/10, synthesize round-trips {trips}/1000, CLI reruns identical {identical}/{len(commands)}")


# 8 ----------------------------------------------------------------------


def _changed_regions(a: bytes, b: bytes):
    """Maximal common prefix and suffix; the rest is the changed region."""
    p = 0
    while p < min(len(a), len(b)) and a[p] == b[p]:
        p += 1
    s = 0
    while s < min(len(a), len(b)) - p and a[-1 - s] == b[-1 - s]:
        s += 1
    return p, len(a) - s, len(b) - s


def test_pom_rewrite_fidelity(report, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    paths = write_fixture(tmp_path / "corpus")
    source = ["--index", paths["index"], "--poms", paths["poms"], "--vulns", paths["vulns"]]
    good = []
    bad = []
    for name, text, (start, end) in rewrite_poms():
        src = Path(tmp_path / f"{name}.xml")
        src.write_bytes(text.encode())
        dst = tmp_path / f"{name}.out.xml"
        code = main(["restore", "--pom", str(src), "--dep", "org.demo:core", "--rewrite", "--out", str(dst)] + source, io.StringIO(), io.StringIO())
        if code != 0:
            bad.append((name, "exit", code))
            continue
        before, after = src.read_bytes(), dst.read_bytes()
        p, end_a, end_b = _changed_regions(before, after)
        # the one differing region must sit inside the targeted version text
        inside = start <= p and end_a <= end and after[start : end_b + (end - end_a)] == b"[1.1,2.0]"
        if inside and before[:start] + b"[1.1,2.0]" + before[end:] == after:
            good.append(name)
        else:
            bad.append((name, p, end_a, end_b))
    ok = len(good) == 10
    report(8, "POM rewrite fidelity", ok, f"{len(good)}/10 POMs changed in exactly one region {bad[:2]}")
