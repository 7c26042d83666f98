import io
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onionleak import btwire
from onionleak.btwire import Endpoint, Handshake, InfoHash, PeerId
from onionleak.errors import NoRelaysAvailable, StreamClosed
from onionleak.overlay import (
    TO_CLIENT,
    TO_DESTINATION,
    GroundTruthLedger,
    Overlay,
    Relay,
    dump_observations,
    load_observations,
)

CLIENT_IP = "24.0.0.9"
DST = Endpoint("62.210.16.61", 80)


def make_overlay(exits=4, middles=6, seed=1, pool_size=2, tap_all=True):
    relays = [Relay(i, f"171.25.0.{i + 1}", i < exits) for i in range(exits + middles)]
    ledger = GroundTruthLedger()
    ov = Overlay(relays, random.Random(seed), ledger, pool_size=pool_size)
    ov.register_client("alice", CLIENT_IP, ("2001:db8::9",))
    seen = []
    if tap_all:
        for r in ov.exits:
            ov.tap(r.relay_id, seen.append)
    return ov, ledger, seen


def test_first_stream_builds_three_hop_circuit():
    ov, ledger, _ = make_overlay()
    s = ov.open_stream("alice", DST, 0)
    circ = ov.circuits_of("alice")[0]
    assert circ.id == s.circuit_id
    assert len(circ.hops) == 3
    assert len(set(circ.hops)) == 3
    assert circ.hops[-1] in {r.relay_id for r in ov.exits}
    assert ledger.client_of_stream(s.id) == "alice"
    assert ledger.client_of_circuit(s.circuit_id) == "alice"


@pytest.mark.parametrize("gap, same", [(30, True), (599, True), (600, False), (601, False)])
def test_ten_minute_boundary(gap, same):
    ov, _, _ = make_overlay()
    first = ov.open_stream("alice", DST, 1000)
    second = ov.open_stream("alice", DST, 1000 + gap)
    assert (first.circuit_id == second.circuit_id) is same


def test_boundary_counts_from_first_stream_not_latest():
    ov, _, _ = make_overlay()
    a = ov.open_stream("alice", DST, 0)
    b = ov.open_stream("alice", DST, 500)
    c = ov.open_stream("alice", DST, 650)
    assert a.circuit_id == b.circuit_id != c.circuit_id


def _expected_partition(times):
    groups, first = [], None
    for t in times:
        if first is None or t - first >= 600:
            first = t
            groups.append([])
        groups[-1].append(t)
    return [len(g) for g in groups]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 5000), min_size=1, max_size=40), st.integers(0, 3))
def test_multiplexing_matches_reference_rule(times, pool_size):
    times = sorted(times)
    ov, _, _ = make_overlay(pool_size=pool_size)
    circuits = [ov.open_stream("alice", DST, t).circuit_id for t in times]
    sizes = []
    for i, cid in enumerate(circuits):
        if i == 0 or cid != circuits[i - 1]:
            sizes.append(0)
        sizes[-1] += 1
    assert sizes == _expected_partition(times)
    assert len(set(circuits)) == len(sizes)


def test_clients_never_share_circuits():
    ov, _, _ = make_overlay()
    ov.register_client("bob", "24.0.0.10")
    a = ov.open_stream("alice", DST, 0)
    b = ov.open_stream("bob", DST, 0)
    assert a.circuit_id != b.circuit_id


def test_no_exit_relays():
    ov, _, _ = make_overlay(exits=0, tap_all=False)
    with pytest.raises(NoRelaysAvailable):
        ov.open_stream("alice", DST, 0)


def test_send_is_seen_by_tap_without_client_identity():
    ov, _, seen = make_overlay()
    s = ov.open_stream("alice", DST, 5)
    obs = ov.send(s, b"hello", 5)
    assert seen == [obs]
    assert obs.destination == DST and obs.payload == b"hello"
    assert obs.direction == TO_DESTINATION
    assert (obs.circuit_id, obs.stream_id) == (s.circuit_id, s.id)
    assert s.exit_source.ip == s.exit_relay.ip != CLIENT_IP
    fields = set(obs.to_record())
    assert not fields & {"client", "client_id", "client_ip", "source"}


def test_encrypted_stream_is_opaque():
    ov, _, seen = make_overlay()
    s = ov.open_stream("alice", DST, 0, encrypted=True)
    obs = ov.send(s, b"secret", 0)
    assert obs.opaque and obs.payload == b"" and obs.size == 6


def test_reply_is_observed_on_same_stream():
    ov, _, seen = make_overlay()
    s = ov.open_stream("alice", DST, 0)
    ov.send(s, b"ping", 0)
    assert ov.reply(s, b"pong", 1) == b"pong"
    assert [o.direction for o in seen] == [TO_DESTINATION, TO_CLIENT]
    assert seen[1].stream_id == s.id and seen[1].circuit_id == s.circuit_id


def test_tap_can_rewrite_plain_replies_only():
    ov, _, _ = make_overlay(tap_all=False)
    for r in ov.exits:
        ov.tap(r.relay_id, lambda obs: b"rewritten" if obs.direction == TO_CLIENT else None)
    plain = ov.open_stream("alice", DST, 0)
    assert ov.reply(plain, b"original", 0) == b"rewritten"
    hidden = ov.open_stream("alice", DST, 1, encrypted=True)
    assert ov.reply(hidden, b"original", 1) == b"original"


def test_untapped_exit_sees_nothing():
    ov, _, _ = make_overlay(tap_all=False)
    seen = []
    ov.tap(ov.exits[0].relay_id, seen.append)
    for t in range(0, 60000, 601):
        s = ov.open_stream("alice", DST, t)
        ov.send(s, b"x", t)
        assert bool(seen and seen[-1].stream_id == s.id) == (s.exit_relay.relay_id == ov.exits[0].relay_id)


def test_closed_stream():
    ov, _, _ = make_overlay()
    s = ov.open_stream("alice", DST, 0)
    ov.close(s)
    with pytest.raises(StreamClosed):
        ov.send(s, b"x", 1)
    with pytest.raises(StreamClosed):
        ov.reply(s, b"x", 1)


def test_tap_only_on_exits():
    ov, _, _ = make_overlay(tap_all=False)
    with pytest.raises(ValueError):
        ov.tap(ov.non_exits[0].relay_id, print)


def test_udp_bypasses_circuits():
    ov, _, seen = make_overlay()
    dht = Endpoint("87.98.162.88", 6881)
    dgram = ov.udp_send("alice", dht, b"d1:ad2:id20:" + bytes(20) + b"e1:q4:ping1:t1:x1:y1:qe", 51000)
    assert dgram.source == Endpoint(CLIENT_IP, 51000)
    assert dgram.destination == dht
    assert seen == []
    assert ov.circuits_of("alice") == []


def test_ledger_is_write_once():
    ledger = GroundTruthLedger()
    ledger.register_client("c", ["1.2.3.4"])
    ledger.record_circuit(1, "c")
    ledger.record_stream(1, 1, "c")
    with pytest.raises(ValueError):
        ledger.register_client("c", ["5.6.7.8"])
    with pytest.raises(ValueError):
        ledger.record_circuit(1, "d")
    with pytest.raises(ValueError):
        ledger.record_stream(1, 1, "d")
    assert ledger.ips_of_client("c") == ("1.2.3.4",)
    assert ledger.client_of_stream(1) == "c"


def test_serialized_observations_hide_client_ip_outside_payload():
    ov, ledger, seen = make_overlay()
    ih = InfoHash(bytes(20))
    pid = PeerId.build(b"-UT2210-", bytes(12))
    announce = btwire.AnnounceRequest(ih, pid, 40000, ip_field=CLIENT_IP.encode())
    for t in range(0, 4000, 97):
        s = ov.open_stream("alice", Endpoint("80.0.0.1", 40000), t)
        ov.send(s, btwire.encode_announce_request(announce), t)
        ov.send(s, btwire.encode_handshake(Handshake(ih, pid)), t)
        ov.reply(s, b"pong", t)
    buf = io.StringIO()
    dump_observations(seen, buf)
    leaked_in_payload = 0
    for line in buf.getvalue().splitlines():
        rec = json.loads(line)
        rec.pop("payload")
        assert CLIENT_IP not in json.dumps(rec)
        assert "2001:db8::9" not in json.dumps(rec)
        leaked_in_payload += CLIENT_IP.encode() in load_observations([line])[0].payload
    # the address does travel inside the BitTorrent payload itself
    assert leaked_in_payload > 0


def test_observation_log_round_trip():
    ov, _, seen = make_overlay()
    s = ov.open_stream("alice", DST, 0)
    ov.send(s, b"\x00\xffbinary", 0)
    ov.reply(s, b"reply", 1)
    buf = io.StringIO()
    assert dump_observations(seen, buf) == 2
    buf.seek(0)
    assert load_observations(buf) == seen


def test_same_seed_same_circuits():
    def run(seed):
        ov, _, seen = make_overlay(seed=seed)
        for t in range(0, 20000, 300):
            s = ov.open_stream("alice", DST, t)
            ov.send(s, b"%d" % t, t)
        return [o.to_record() for o in seen]

    assert run(3) == run(3)
    assert run(3) != run(4)
