"""Seeded generators of random wire values, shared by the codec tests."""

import random
import socket

from onionleak import btwire
from onionleak.bencode import INT64_MAX, INT64_MIN
from onionleak.btwire import Endpoint, InfoHash, PeerId

TAGS = (b"-UT2210-", b"-AZ4604-", b"-TR2130-", b"-lt0F00-", b"-SP3600-")


def bvalue(rng: random.Random, depth: int = 0):
    kind = rng.randrange(4 if depth < 4 else 2)
    if kind == 0:
        edge = rng.random()
        if edge < 0.05:
            return rng.choice((INT64_MIN, INT64_MAX, 0, -1))
        return rng.randint(-(10 ** rng.randrange(1, 19)), 10 ** rng.randrange(1, 19))
    if kind == 1:
        return rng.randbytes(rng.randrange(0, 40))
    if kind == 2:
        return [bvalue(rng, depth + 1) for _ in range(rng.randrange(0, 5))]
    return {rng.randbytes(rng.randrange(0, 8)): bvalue(rng, depth + 1) for _ in range(rng.randrange(0, 5))}


def ipv4(rng: random.Random) -> str:
    return socket.inet_ntoa(rng.randbytes(4))


def endpoint(rng: random.Random) -> Endpoint:
    return Endpoint(ipv4(rng), rng.getrandbits(16))


def infohash(rng: random.Random) -> InfoHash:
    return InfoHash(rng.randbytes(20))


def peer_id(rng: random.Random) -> PeerId:
    return PeerId.build(rng.choice(TAGS), rng.randbytes(12))


def announce_request(rng: random.Random) -> btwire.AnnounceRequest:
    ip_field = rng.choice((None, b"", ipv4(rng).encode(), b"2001:db8::1", b"999.1.1.1", rng.randbytes(6)))
    extra = tuple(rng.sample((b"compact=1", b"numwant=50", b"key=a%2Fb", b"no_peer_id=1", b"trackerid="),
                             rng.randrange(3)))
    return btwire.AnnounceRequest(
        infohash=infohash(rng),
        peer_id=peer_id(rng),
        port=rng.randrange(65536),
        ip_field=ip_field,
        uploaded=rng.randrange(1 << 40),
        downloaded=rng.randrange(1 << 40),
        left=rng.randrange(1 << 40),
        event=rng.choice((None, "started", "stopped", "completed", "")),
        extra=extra,
    )


def announce_response(rng: random.Random) -> btwire.AnnounceResponse:
    extra = {}
    if rng.random() < 0.5:
        extra[b"complete"] = rng.randrange(10000)
    if rng.random() < 0.3:
        extra[b"tracker id"] = rng.randbytes(4)
    return btwire.AnnounceResponse(
        rng.randrange(1, 7200), [endpoint(rng) for _ in range(rng.randrange(0, 30))], extra
    )


def handshake(rng: random.Random) -> btwire.Handshake:
    return btwire.Handshake(infohash(rng), peer_id(rng), rng.getrandbits(64))


def extended_handshake(rng: random.Random) -> btwire.ExtendedHandshake:
    return btwire.ExtendedHandshake(
        listen_port=rng.choice((None, rng.randrange(65536))),
        self_ip=rng.choice((None, ipv4(rng).encode(), rng.randbytes(4))),
        client_version=rng.choice((None, "uTorrent 2.2.1", "Vuze 4.6.0.4", "Transmission 2.13 é")),
        extensions={b"ut_metadata": rng.randrange(1, 10), b"ut_pex": rng.randrange(1, 10)}
        if rng.random() < 0.7 else {},
    )


def _nodes(rng: random.Random, n: int) -> tuple:
    return tuple(btwire.NodeInfo(rng.randbytes(20), endpoint(rng)) for _ in range(n))


def krpc(rng: random.Random) -> btwire.KrpcMessage:
    tid = rng.randbytes(rng.randrange(1, 5))
    sender = rng.randbytes(20)
    kind = rng.randrange(7)
    if kind == 0:
        body = btwire.FindNodeQuery(rng.randbytes(20))
    elif kind == 1:
        body = btwire.FindNodeResponse(_nodes(rng, rng.randrange(0, 9)))
    elif kind == 2:
        body = btwire.GetPeersQuery(infohash(rng))
    elif kind == 3:
        values = tuple(endpoint(rng) for _ in range(rng.randrange(0, 9))) if rng.random() < 0.6 else None
        nodes = _nodes(rng, rng.randrange(0, 9)) if values is None or rng.random() < 0.2 else None
        body = btwire.GetPeersResponse(rng.randbytes(rng.randrange(0, 9)), values, nodes)
    elif kind == 4:
        body = btwire.AnnouncePeerQuery(infohash(rng), rng.randrange(65536), rng.randbytes(4), rng.random() < 0.3)
    elif kind == 5:
        body = btwire.AnnouncePeerResponse()
    else:
        return btwire.KrpcMessage(tid, btwire.KrpcError(rng.choice((201, 202, 203, 204)), "Generic Error"))
    return btwire.KrpcMessage(tid, body, sender)


def compact_peers(rng: random.Random) -> list:
    return [endpoint(rng) for _ in range(rng.randrange(0, 50))]


# codec name -> (factory, encode, decode)
CODECS = {
    "bencode": (bvalue, None, None),
    "announce_request": (announce_request, btwire.encode_announce_request, btwire.parse_announce_request),
    "announce_response": (announce_response, btwire.encode_announce_response, btwire.parse_announce_response),
    "compact_peers": (compact_peers, btwire.encode_compact_peers, btwire.decode_compact_peers),
    "handshake": (handshake, btwire.encode_handshake, btwire.parse_handshake),
    "extended_handshake": (extended_handshake, btwire.encode_extended_handshake, btwire.parse_extended_handshake),
    "krpc": (krpc, btwire.encode_krpc, btwire.parse_krpc),
}


def round_trip_failures(name: str, count: int, seed: int) -> int:
    """Generate ``count`` values for one codec; return how many fail to round-trip."""
    from onionleak import bencode

    factory, enc, dec = CODECS[name]
    if enc is None:
        enc, dec = bencode.encode, bencode.decode
    rng = random.Random(seed)
    failures = 0
    for _ in range(count):
        value = factory(rng)
        wire = enc(value)
        back = dec(wire)
        if name == "compact_peers":
            ok = back == value
        else:
            ok = back == value and enc(back) == wire
        failures += not ok
    return failures
