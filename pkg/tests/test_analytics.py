from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import BASE, Corpus, day, lib, random_corpus
from cause_fixture import OVERRIDES, SIX_CAUSE_TABLE, six_cause_corpus
from ranger.alsearch import find_affected
from ranger.analytics import (
    CAUSE_ROLES,
    LifeMetric,
    PvulSeries,
    SeriesPoint,
    bucket_dates,
    cause_proportions,
    classify_cause,
    classify_library_status,
    dependency_management_stats,
    full_life,
    half_life,
    heatmap_csv,
    latest_release,
    new_release_span,
    new_release_span_from_dates,
    pvul_series,
    range_usage_stats,
)
from ranger.errors import EmptySeries, MissingReleaseDates, NoReleaseBefore
from ranger.version import parse_version

V = parse_version


def series(values, published=0, end=None, start=0):
    """Daily series from a list of p_vul values starting at day ``start``."""
    pts = [SeriesPoint(day(start + i), v, 1 - v, 0, 10) for i, v in enumerate(values)]
    last = start + len(values) - 1
    return PvulSeries("X", "day", day(published), day(end if end is not None else last), pts)


def sparse(pairs, published=0, end=None):
    pts = [SeriesPoint(day(d), v, 1 - v, 0, 10) for d, v in pairs]
    return PvulSeries("X", "day", day(published), day(end if end is not None else pairs[-1][0]), pts)


class TestStatus:
    def fixture(self):
        c = Corpus()
        c.release("L", "1.0", 0)
        c.release("L", "1.1", 5)
        c.release("A", "1", 1, [("L", "1.0")])
        c.release("P", "1", 1, [("L", "1.0")])
        c.release("P", "2", 8, [("L", "1.1")])
        c.release("Rm", "1", 1, [("L", "1.0")])
        c.release("Rm", "2", 8, [("Other", "1")])
        c.release("Never", "1", 1, [("Other", "1")])
        c.vuln("CVE-1", "L", "[1.0]", 2)
        return c.build()

    def status(self, g, name, when):
        st_ = classify_library_status(g, lib(name), g.find_vulnerability("CVE-1"), day(when))
        return st_.status if st_ else None

    def test_three_states(self):
        g = self.fixture()
        assert self.status(g, "A", 10) == "Affected"
        assert self.status(g, "P", 10) == "Patched"
        assert self.status(g, "Rm", 10) == "Removed"

    def test_status_over_time(self):
        g = self.fixture()
        assert self.status(g, "P", 7) == "Affected"
        assert self.status(g, "P", 8) == "Patched"

    def test_never_affected(self):
        g = self.fixture()
        assert self.status(g, "Never", 10) is None

    def test_no_release_before(self):
        g = self.fixture()
        with pytest.raises(NoReleaseBefore):
            self.status(g, "A", 0)

    def test_latest_by_date_then_version(self):
        c = Corpus()
        c.release("X", "2.0", 1)
        c.release("X", "1.5", 3)
        c.release("X", "1.6", 3)
        g = c.build()
        assert g.releases[latest_release(g, lib("X"))].version.raw == "1.6"
        assert g.releases[latest_release(g, lib("X"), day(2))].version.raw == "2.0"

    def test_partition_on_random(self):
        g = random_corpus(4, n_vulns=2)
        for v in g.vulnerabilities:
            for rec in find_affected(g, v):
                s = classify_library_status(g, rec.release.library, v, day(2000))
                assert s is not None and s.status in ("Affected", "Patched", "Removed")


class TestSeries:
    def test_two_libraries(self):
        c = Corpus()
        c.release("L", "1.0", 0)
        c.release("L", "1.1", 0)
        c.release("A", "1", 0, [("L", "1.0")])
        c.release("B", "1", 0, [("L", "1.0")])
        c.release("B", "2", 10, [("L", "1.1")])
        c.vuln("CVE-1", "L", "[1.0]", 0)
        g = c.build()
        s = pvul_series(g, g.find_vulnerability("CVE-1"), "day")
        assert [p.p_vul for p in s.points] == [1.0] * 10 + [0.5]
        assert s.points[0].new_affected_releases == 2
        assert half_life(s).days == 10

    def decay_fixture(self):
        """20 libraries affected on day 0. Library i < 14 patches on day 3(i+1),
        14 <= i < 17 drops the dependency on day 50 + i, the rest never move.
        D depends on library 0's first release and stays affected at depth 2."""
        c = Corpus()
        c.release("L", "1.0", 0)
        c.release("L", "1.1", 1)
        for i in range(20):
            c.release(f"U{i:02d}", "1.0", 0, [("L", "1.0")])
            if i < 14:
                c.release(f"U{i:02d}", "1.1", 3 * (i + 1), [("L", "1.1")])
            elif i < 17:
                c.release(f"U{i:02d}", "1.1", 50 + i, [])
        c.release("D", "1.0", 0, [("U00", "1.0")])
        c.release("Late", "1", 90)
        c.vuln("CVE-D", "L", "[1.0]", 0)
        return c.build()

    def expected_day(self, t):
        patched = sum(1 for i in range(14) if 3 * (i + 1) <= t)
        removed = sum(1 for i in range(14, 17) if 50 + i <= t)
        affected = 21 - patched - removed
        return affected / 21, patched / 21, affected + patched + removed

    def test_decay_matches_closed_form(self):
        g = self.decay_fixture()
        s = pvul_series(g, g.find_vulnerability("CVE-D"), "day")
        assert [p.date for p in s.points] == [day(t) for t in range(91)]
        for t, p in enumerate(s.points):
            pv, pp, den = self.expected_day(t)
            assert (p.p_vul, p.p_patch, p.denominator) == pytest.approx((pv, pp, den))
            assert p.p_vul + p.p_patch <= 1 + 1e-12
        assert s.points[0].new_affected_releases == 21
        assert sum(p.new_affected_releases for p in s.points) == 21
        assert set(s.by_depth) == {1, 2}
        assert all(p.p_vul == 1.0 for p in s.by_depth[2].points)
        # 11 of 21 stop being affected on day 33
        assert half_life(s).days == 33
        assert full_life(s).days is None

    def test_monthly_points(self):
        g = self.decay_fixture()
        s = pvul_series(g, g.find_vulnerability("CVE-D"), "month")
        assert [p.date for p in s.points] == [date(2020, 1, 31), date(2020, 2, 29), date(2020, 3, 31)]
        for p in s.points:
            pv, _, _ = self.expected_day((p.date - BASE).days)
            assert p.p_vul == pytest.approx(pv)
        csv_text = heatmap_csv(s)
        assert csv_text.splitlines()[0] == "depth,2020-01-31,2020-02-29,2020-03-31"
        assert csv_text.splitlines()[2].startswith("2,1.000000")

    def test_bucket_dates(self):
        assert bucket_dates(date(2021, 12, 10), date(2022, 2, 3), "month") == [date(2021, 12, 31), date(2022, 1, 31), date(2022, 2, 3)]
        assert len(bucket_dates(date(2021, 1, 1), date(2021, 1, 5), "day")) == 5
        with pytest.raises(ValueError):
            bucket_dates(date(2021, 1, 1), date(2021, 1, 5), "week")


class TestLifeMetrics:
    def test_half_life_definition(self):
        s = sparse([(0, 1.0), (10, 0.8), (20, 0.49)], end=100)
        assert half_life(s) == LifeMetric(20, 0.2)

    def test_not_reached(self):
        s = sparse([(0, 1.0), (50, 0.9), (100, 0.6)], end=100)
        assert half_life(s) == LifeMetric(None, 1.0)
        assert half_life(s).as_dict() == {"days": "not_reached", "normalized": 1.0}

    def test_negative(self):
        s = sparse([(0, 0.7), (5, 0.45), (30, 0.3)], published=10, end=110)
        assert half_life(s) == LifeMetric(-5, -0.05)

    def test_relative_mode(self):
        s = sparse([(0, 0.6), (10, 0.4), (20, 0.29)], end=40)
        assert half_life(s, "relative").days == 20
        assert half_life(s).days == 10

    def test_full_life(self):
        assert full_life(sparse([(0, 1.0), (20, 0.5), (40, 0.0), (60, 0.0)], end=80)).days == 40
        assert full_life(sparse([(0, 1.0), (20, 0.0), (40, 0.2)])).days is None

    def test_empty(self):
        empty = PvulSeries("X", "day", day(0), day(1), [])
        with pytest.raises(EmptySeries):
            half_life(empty)
        with pytest.raises(EmptySeries):
            full_life(empty)

    def test_new_release_span(self):
        assert new_release_span_from_dates(day(0), [day(30)], day(100)) == LifeMetric(30, 0.3)
        assert new_release_span_from_dates(day(50), [day(10), day(20)], day(100)) == LifeMetric(0, 0.0)
        assert new_release_span_from_dates(day(0), [day(5), day(80)], day(160)) == LifeMetric(80, 0.5)

    def test_new_release_span_from_graph(self):
        c = Corpus()
        c.release("L", "1.0", 0)
        c.release("A", "1", 5, [("L", "1.0")])
        c.release("A", "2", 30, [("L", "1.0")])
        c.release("Z", "1", 100)
        c.vuln("CVE-1", "L", "[1.0]", 0)
        g = c.build()
        assert new_release_span(g, g.find_vulnerability("CVE-1")) == LifeMetric(30, 0.3)

    @settings(max_examples=200)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.integers(-20, 20))
    def test_scan_oracle(self, values, published):
        s = series(values, published=published, end=len(values) + 25)
        first = next((i for i, v in enumerate(values) if v <= 0.5), None)
        hl = half_life(s)
        assert hl.days == (None if first is None else first - published)
        if hl.days is not None:
            assert hl.normalized <= 1.0
        tail = len(values)
        while tail > 0 and values[tail - 1] == 0:
            tail -= 1
        fl = full_life(s)
        assert fl.days == (None if tail == len(values) else tail - published)


class TestCauses:
    def labels(self, g, overrides=OVERRIDES):
        out = {}
        for v in g.vulnerabilities:
            for rec in find_affected(g, v):
                label = classify_cause(g, rec, overrides, vuln=v)
                out[rec.release.gav] = label
        return out

    def test_table(self):
        g = six_cause_corpus()
        got = self.labels(g)
        assert {k: (l.cause if l else None) for k, l in got.items()} == SIX_CAUSE_TABLE
        for label in got.values():
            if label is not None:
                assert label.blamed_role == CAUSE_ROLES[label.cause]

    def test_blamed_release(self):
        g = six_cause_corpus()
        got = self.labels(g)
        assert got["g:M4:1.0"].blamed.gav == "g:M4:1.0"
        assert got["g:M5:1.0"].blamed.gav == "g:M5:1.0"
        assert got["g:F2:1.0"].blamed.gav == "g:F2:1.0"
        assert got["g:P1:1.0"].blamed.gav == "g:L1:1.0"

    def test_without_override(self):
        g = six_cause_corpus()
        assert self.labels(g, None)["g:F6:1.0"] is None

    def test_evaluation_date(self):
        g = six_cause_corpus()
        v = g.find_vulnerability("CVE-2")
        (rec,) = find_affected(g, v)
        # before the patch existed the vulnerable library is to blame
        assert classify_cause(g, rec, as_of=day(5), vuln=v).cause == "C1"

    def test_proportions_exclude_c1(self):
        g = six_cause_corpus()
        out = cause_proportions(g, g.vulnerabilities, OVERRIDES)
        assert out["counts"] == {"C1": 1, "C2": 1, "C3": 1, "C4": 1, "C5": 1, "C6": 1}
        assert out["blocked_paths"] == 5 and out["unblocked_paths"] == 2
        assert "C1" not in out["fractions"]
        assert out["fractions"] == {c: pytest.approx(0.2) for c in ["C2", "C3", "C4", "C5", "C6"]}
        assert out["roles"] == {"EndUser": pytest.approx(0.2), "FirstDept": pytest.approx(0.4), "MediumDept": pytest.approx(0.4)}

    def test_all_c2(self):
        c = Corpus()
        c.release("L", "1.0", 0)
        c.release("L", "1.1", 1)
        for i in range(5):
            c.release(f"F{i}", "1", 10 + i, [("L", "1.0")])
        c.vuln("CVE-1", "L", "[1.0]", 0)
        g = c.build()
        assert cause_proportions(g, g.vulnerabilities)["fractions"]["C2"] == 1.0

    def test_missing_dates(self):
        c = Corpus()
        c.release("L", "1.0", 0)
        c.release("F", "1.0", None, [("L", "1.0")])
        c.vuln("CVE-1", "L", "[1.0]", 0)
        g = c.build()
        v = g.vulnerabilities[0]
        with pytest.raises(MissingReleaseDates):
            classify_cause(g, find_affected(g, v)[0], vuln=v)
        assert cause_proportions(g, [v])["undated_paths"] == 1

    def test_every_random_path_gets_at_most_one_label(self):
        g = random_corpus(17, n_vulns=3)
        for v in g.vulnerabilities:
            for rec in find_affected(g, v):
                label = classify_cause(g, rec, vuln=v)
                assert label is None or label.cause in CAUSE_ROLES


class TestUsage:
    def test_one_percent(self):
        c = Corpus()
        c.release("T", "1.0", 0)
        c.release("T", "2.0", 0)
        for i in range(99):
            c.release(f"P{i:02d}", "1", 0, [("T", "1.0")])
        c.release("Rg", "1", 0, [("T", "[1.0,2.0)")])
        g = c.build()
        out = range_usage_stats(g, [])
        assert out["edges_total"] == 100 and out["edges_with_ranges"] == 1
        assert out["pct_ranges"] == pytest.approx(1.0)

    def test_latest_member(self):
        c = Corpus()
        for v in ["1.0", "1.5", "2.0"]:
            c.release("T", v, 0)
        c.release("A", "1", 0, [("T", "[1.0,2.0)")])
        c.release("B", "1", 0, [("T", "[1.0,1.0]")])
        c.release("C", "1", 0, [("T", "[1.5,)")])
        c.vuln("CVE-1", "T", "[1.0]", 0)
        g = c.build()
        out = range_usage_stats(g, g.vulnerabilities)
        assert out["vuln_targeted_ranges"] == 3
        assert out["pct_latest_vulnerable"] == pytest.approx(100 / 3)
        assert out["pct_all_versions_vulnerable"] == pytest.approx(100 / 3)
        assert out["pct_open_upper"] == pytest.approx(50.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_enumeration(self, seed):
        g = random_corpus(seed, n_vulns=3)
        vulns = g.vulnerabilities
        bad = {g.releases[h] for v in vulns for h in g.affected_handles(v)}
        edges = [d for h in range(len(g)) for d in g.edges(h)]
        ranged = [d for d in edges if str(d.spec).startswith(("[", "("))]
        targeted = [d for d in ranged if d.target in {v.library for v in vulns}]

        def top(d):
            hits = [g.releases[h] for h in g.versions_of(d.target) if d.spec.contains(g.releases[h].version)]
            return hits[-1] if hits else None

        latest_vul = sum(1 for d in targeted if top(d) in bad)
        out = range_usage_stats(g, vulns)
        assert out["edges_total"] == len(edges)
        assert out["edges_with_ranges"] == len(ranged)
        assert out["vuln_targeted_ranges"] == len(targeted)
        if targeted:
            assert out["pct_latest_vulnerable"] == pytest.approx(100 * latest_vul / len(targeted))

    def test_management_bypass(self):
        c = Corpus()
        c.release("L", "1.0", 0)
        c.release("L", "1.1", 0)
        c.release("B", "1", 0, [("L", "1.0")])
        c.release("A", "1", 0, [("B", "1")], dm=[("L", "1.1")])
        c.vuln("CVE-1", "L", "[1.0]", 0)
        g = c.build()
        out = dependency_management_stats(g, g.vulnerabilities)
        assert out == {"poms_with_dm": 1, "poms_with_vuln_overrides": 1, "affected": 0, "bypass": 1, "overlapping": 0}

    def test_management_overlapping(self):
        c = Corpus()
        c.release("L", "1.0", 0)
        c.release("L", "1.1", 0)
        c.release("K", "1.0", 0)
        c.release("K", "2.0", 0)
        c.release("B", "1", 0, [("L", "1.0"), ("K", "2.0")])
        c.release("A", "1", 0, [("B", "1")], dm=[("L", "1.1"), ("K", "1.0")])
        c.release("N", "1", 0, dm=[("Q", "1")])
        c.vuln("CVE-1", "L", "[1.0]", 0)
        c.vuln("CVE-2", "K", "[1.0]", 0)
        g = c.build()
        out = dependency_management_stats(g, g.vulnerabilities)
        assert out == {"poms_with_dm": 2, "poms_with_vuln_overrides": 1, "affected": 1, "bypass": 1, "overlapping": 1}
