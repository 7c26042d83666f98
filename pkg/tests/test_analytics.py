import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onionleak import analytics
from onionleak.adversary import DeanonRecord, HijackConnection, Method, domino_link
from onionleak.adversary.domino import build_stream_views
from onionleak.btwire import Endpoint
from onionleak.config import ScenarioConfig
from onionleak.overlay import TO_DESTINATION, ExitObservation, GroundTruthLedger

DAY = 86400


# -- over-representation -------------------------------------------------------

def test_japan_row_ratio():
    ratios = analytics.over_representation({"JP": 13, "rest": 87}, {"JP": 0.024, "rest": 0.976})
    assert abs(ratios["JP"] - 5.4) <= 0.05


def test_default_country_table_reproduces_japan_ratio():
    countries = ScenarioConfig(seed=1).groups.countries
    ratio = countries["JP"]["tor"] / countries["JP"]["baseline"]
    assert abs(ratio - 5.4) <= 0.05


def test_identity_mixture_gives_one():
    counts = {"A": 30, "B": 50, "C": 20}
    assert analytics.over_representation(counts, {"A": 0.3, "B": 0.5, "C": 0.2}) == {
        "A": pytest.approx(1.0), "B": pytest.approx(1.0), "C": pytest.approx(1.0)}
    assert all(v == pytest.approx(1.0) for v in analytics.over_representation(counts, counts).values())


def test_group_without_baseline_is_dashed():
    ratios = analytics.over_representation({"CN": 2, "US": 8}, {"CN": None, "US": 1.0})
    assert ratios["CN"] == "-"
    ratios = analytics.over_representation({"XX": 2, "US": 8}, {"US": 1.0})
    assert ratios["XX"] == "-"
    assert ratios["US"] == pytest.approx(0.8)


def test_group_distribution_counts_distinct_ips():
    labels = {"1.1.1.1": ("JP", "NTT"), "2.2.2.2": ("JP", "other-JP"), "3.3.3.3": ("DE", "Hansenet")}
    ips = ["1.1.1.1", "1.1.1.1", "2.2.2.2", "3.3.3.3", "9.9.9.9"]
    assert analytics.group_distribution(ips, labels) == {"DE": 1, "JP": 2, "unknown": 1}
    assert analytics.group_distribution(ips, labels, level=1)["NTT"] == 1


# -- returning users -----------------------------------------------------------

def test_returning_ip_spacing_rule():
    assert analytics.returning_ips([("a", 0), ("a", 12 * 3600)])["per_ip"] == {"a": 1}
    assert analytics.returning_ips([("a", d * DAY + 100) for d in range(23)])["per_ip"] == {"a": 23}
    assert analytics.returning_ips([("a", 5)])["per_ip"] == {"a": 1}
    assert analytics.returning_ips([("a", 0), ("a", DAY - 1), ("a", DAY)])["per_ip"] == {"a": 2}


def test_returning_ip_histogram_totals():
    rng = random.Random(1)
    sightings = [(f"10.0.0.{rng.randrange(50)}", rng.randrange(23 * DAY)) for _ in range(2000)]
    res = analytics.returning_ips(sightings)
    assert sum(res["histogram"].values()) == len(res["per_ip"])
    assert max(res["per_ip"].values()) <= 23


# -- usage modes ---------------------------------------------------------------

def conn(t, peer, tor):
    return HijackConnection(t, Endpoint("1.1.1.1", 1), b"i" * 20, peer, tor, None)


def test_usage_all_tracker_only():
    est = analytics.usage_mode_estimate([conn(t, bytes([t % 200]) * 20, False) for t in range(1000)])
    assert est["tracker_only_share"] == 1.0


def test_usage_empty_is_undefined():
    est = analytics.usage_mode_estimate([])
    assert est["tracker_only_share"] is None and est["unique_peers"] == 0


def test_usage_counts_peers_once_per_day():
    conns = [conn(10, b"a" * 20, False), conn(20, b"a" * 20, False), conn(30, b"b" * 20, True),
             conn(40, b"b" * 20, True), conn(DAY + 5, b"b" * 20, True)]
    est = analytics.usage_mode_estimate(conns)
    assert [d["peers"] for d in est["daily"]] == [2, 1]
    assert est["daily"][0]["tracker_only_share"] == 0.5
    assert est["tracker_only_share"] == pytest.approx(0.25)


def test_usage_recovers_configured_mix():
    rng = random.Random(3)
    conns = []
    for i in range(1000):
        tracker_only = i < 720
        for _ in range(rng.randrange(1, 4)):
            conns.append(conn(rng.randrange(DAY), i.to_bytes(20, "big"), not tracker_only))
    assert analytics.usage_mode_estimate(conns)["tracker_only_share"] == pytest.approx(0.72)


# -- generic shapes ------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=1, max_size=200))
def test_cdf_monotone_and_ends_at_one(values):
    points = analytics.cdf(values)
    ps = [p for _, p in points]
    assert ps == sorted(ps)
    assert ps[-1] == 1.0
    assert [x for x, _ in points] == sorted(set(values))
    for x, p in points:
        assert analytics.cdf_at(points, x) == p
        assert p == pytest.approx(sum(v <= x for v in values) / len(values))


def test_cdf_of_nothing():
    assert analytics.cdf([]) == []


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("abcdef"), max_size=100), st.integers(1, 5))
def test_partitioned_counts_merge_identically(values, parts):
    chunks = [analytics.histogram(values[i::parts]) for i in range(parts)]
    whole = analytics.histogram(values)
    assert analytics.merge_counts(chunks) == whole
    assert list(analytics.merge_counts(reversed(chunks))) == list(whole)
    assert sum(whole.values()) == len(values)


def test_port_histogram_totals_and_test():
    rng = random.Random(0)
    ports = [rng.randrange(1024, 65536) for _ in range(5000)] + [80, 443]
    hist = analytics.port_histogram(ports)
    assert sum(hist["counts"]) == hist["total"] == 5000
    assert hist["below_range"] == 2
    assert hist["p_value"] > 0.01


def test_torrent_size_fraction():
    rep = analytics.torrent_size_cdf([10, 999, 1000, 5000])
    assert rep["fraction_below"] == 0.5
    assert rep["cdf"][-1] == (5000, 1.0)


# -- HTTP co-occurrence --------------------------------------------------------

def browsing_scenario(n_agents, habit_share, seed=0):
    """Each agent owns one circuit with a de-anonymized announce stream and,
    if it has a browsing habit, a few HTTP streams alongside."""
    rng = random.Random(seed)
    ledger = GroundTruthLedger()
    log, seeds = [], []
    sid = 0
    for a in range(n_agents):
        ip = f"24.0.{a // 250}.{a % 250 + 1}"
        ledger.register_client(a, [ip])
        ledger.record_circuit(a, a)
        sid += 1
        ledger.record_stream(sid, a, a)
        log.append(ExitObservation(0, 0, a, sid, Endpoint("62.210.16.61", 80), b"\x00", TO_DESTINATION))
        seeds.append(DeanonRecord(ip, Method.HIJACK, frozenset({sid})))
        if a < habit_share * n_agents:
            for _ in range(rng.randrange(1, 4)):
                sid += 1
                ledger.record_stream(sid, a, a)
                log.append(ExitObservation(1, 0, a, sid, Endpoint("93.184.0.1", 80),
                                           b"GET / HTTP/1.1\r\nHost: site.example\r\n\r\n", TO_DESTINATION))
    return ledger, log, seeds


def test_cooccurrence_matches_ledger_count():
    ledger, log, seeds = browsing_scenario(1000, 0.7)
    res = domino_link(seeds, log)
    views = build_stream_views(log)
    co = analytics.cooccurrence_cdf(res.attributions, views)
    # oracle: clients with at least one HTTP stream, read from the ledger
    http_streams = {o.stream_id for o in log if o.payload.startswith(b"GET / ")}
    browsing = {ledger.client_of_stream(s) for s in http_streams}
    assert co["compromised_ips"] == 1000
    assert co["share_with_http"] == len(browsing) / 1000 == 0.7
    assert analytics.cdf_at(co["cdf"], 0) == pytest.approx(0.3)


def test_cooccurrence_without_habits_is_zero():
    ledger, log, seeds = browsing_scenario(50, 0.0)
    co = analytics.cooccurrence_cdf(domino_link(seeds, log).attributions, build_stream_views(log))
    assert co["share_with_http"] == 0.0
    assert co["cdf"] == [(0, 1.0)]


def test_cooccurrence_bounded_by_compromised_set():
    # everyone browses, half are compromised: the share is over compromised IPs only
    ledger, log, seeds = browsing_scenario(200, 1.0)
    co = analytics.cooccurrence_cdf(domino_link(seeds[:100], log).attributions, build_stream_views(log))
    assert co["compromised_ips"] == 100
    assert co["share_with_http"] == 1.0
