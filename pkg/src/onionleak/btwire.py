"""Typed codecs for the BitTorrent messages an exit node can read or rewrite.

Covers the tracker announce (request line and bencoded response), the
68-octet peer handshake, the extension-protocol handshake, a single piece
message, and KRPC (the DHT's bencoded query/response protocol).
"""

from __future__ import annotations

import enum
import functools
import ipaddress
import socket
import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Union
from urllib.parse import quote_from_bytes, unquote_to_bytes

from . import bencode
from .errors import MalformedInput

PROTOCOL_STRING = b"BitTorrent protocol"
HANDSHAKE_LEN = 68
EXTENSION_PROTOCOL_BIT = 1 << 20
DHT_BIT = 1
MSG_PIECE = 7
MSG_EXTENDED = 20
EXT_HANDSHAKE_ID = 0
SELF_IP_KEY = b"ipv4"

_PRIVATE_NETS = tuple(
    ipaddress.ip_network(n)
    for n in (
        "10.0.0.0/8",
        "172.16.0.0/12",
        "192.168.0.0/16",
        "127.0.0.0/8",
        "169.254.0.0/16",
        "fc00::/7",
        "::1/128",
        "fe80::/10",
    )
)


class InfoHash(bytes):
    """160-bit torrent identifier."""

    def __new__(cls, value):
        value = bytes(value)
        if len(value) != 20:
            raise ValueError(f"infohash must be 20 octets, got {len(value)}")
        return super().__new__(cls, value)

    def __repr__(self):
        return f"InfoHash({self.hex()})"


class PeerId(bytes):
    """20-octet peer identifier: client tag followed by a random suffix."""

    TAG_LEN = 8

    def __new__(cls, value):
        value = bytes(value)
        if len(value) != 20:
            raise ValueError(f"peer id must be 20 octets, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def build(cls, client_tag: bytes, suffix: bytes) -> "PeerId":
        return cls(client_tag + suffix)

    @property
    def client_tag(self) -> bytes:
        return bytes(self[: self.TAG_LEN])

    @property
    def random_suffix(self) -> bytes:
        return bytes(self[self.TAG_LEN:])

    def __repr__(self):
        return f"PeerId({bytes(self)!r})"


class Endpoint(NamedTuple):
    ip: str
    port: int

    @classmethod
    def checked(cls, ip, port: int) -> "Endpoint":
        try:
            addr = ipaddress.ip_address(ip)
        except ValueError as exc:
            raise ValueError(f"bad IP {ip!r}") from exc
        if not 0 <= port <= 65535:
            raise ValueError(f"port out of range: {port}")
        return cls(str(addr), int(port))

    def __str__(self):
        if ":" in self.ip:
            return f"[{self.ip}]:{self.port}"
        return f"{self.ip}:{self.port}"


class IpClass(enum.Enum):
    EMPTY = "empty"
    INVALID = "invalid"
    PRIVATE = "private"
    PUBLIC_EXIT = "public_exit"
    PUBLIC_NON_EXIT = "public_non_exit"


def classify_ip(raw: Union[bytes, str, None], exit_ips) -> IpClass:
    """Classify a self-reported IP field against the published exit list."""
    if raw is None or len(raw) == 0:
        return IpClass.EMPTY
    if isinstance(raw, (bytes, bytearray)):
        try:
            raw = bytes(raw).decode("ascii")
        except UnicodeDecodeError:
            return IpClass.INVALID
    try:
        addr = ipaddress.ip_address(raw)
    except ValueError:
        return IpClass.INVALID
    if any(addr in net for net in _PRIVATE_NETS if net.version == addr.version):
        return IpClass.PRIVATE
    if str(addr) in exit_ips:
        return IpClass.PUBLIC_EXIT
    return IpClass.PUBLIC_NON_EXIT


def normalize_ip(raw: Union[bytes, str]) -> Optional[str]:
    """Canonical text form of an address, or None if it does not parse."""
    try:
        if isinstance(raw, (bytes, bytearray)):
            raw = bytes(raw).decode("ascii")
        return str(ipaddress.ip_address(raw))
    except (ValueError, UnicodeDecodeError):
        return None


# -- compact peers -----------------------------------------------------------

def encode_compact_peers(peers: Iterable[Endpoint]) -> bytes:
    out = bytearray()
    for ep in peers:
        try:
            packed = socket.inet_pton(socket.AF_INET, ep.ip)
        except OSError as exc:
            raise ValueError(f"compact form is IPv4 only: {ep.ip!r}") from exc
        if not 0 <= ep.port <= 65535:
            raise ValueError(f"port out of range: {ep.port}")
        out += packed
        out += ep.port.to_bytes(2, "big")
    return bytes(out)


@functools.lru_cache(maxsize=1 << 18)
def _compact_endpoint(chunk: bytes) -> Endpoint:
    return Endpoint(socket.inet_ntoa(chunk[:4]), int.from_bytes(chunk[4:], "big"))


def decode_compact_peers(data: bytes) -> list[Endpoint]:
    if len(data) % 6:
        raise MalformedInput(f"compact peer list length {len(data)} is not a multiple of 6")
    return [_compact_endpoint(data[i:i + 6]) for i in range(0, len(data), 6)]


# -- tracker announce --------------------------------------------------------

@dataclass(frozen=True)
class AnnounceRequest:
    infohash: InfoHash
    peer_id: PeerId
    port: int
    ip_field: Optional[bytes] = None
    uploaded: int = 0
    downloaded: int = 0
    left: int = 0
    event: Optional[str] = None
    extra: tuple = ()
    path: str = "/announce"


_ANNOUNCE_EVENTS = ("started", "stopped", "completed", "")


def _q(value: bytes) -> str:
    return quote_from_bytes(value, safe="")


def encode_announce_request(req: AnnounceRequest) -> bytes:
    parts = [
        "info_hash=" + _q(req.infohash),
        "peer_id=" + _q(req.peer_id),
        "port=%d" % req.port,
    ]
    if req.ip_field is not None:
        parts.append("ip=" + _q(req.ip_field))
    parts.append("uploaded=%d" % req.uploaded)
    parts.append("downloaded=%d" % req.downloaded)
    parts.append("left=%d" % req.left)
    if req.event is not None:
        parts.append("event=" + req.event)
    query = "&".join(parts).encode("ascii")
    for raw in req.extra:
        query += b"&" + raw
    return b"GET " + req.path.encode("ascii") + b"?" + query + b" HTTP/1.1\r\n"


_REQUIRED_ANNOUNCE_KEYS = (b"info_hash", b"peer_id", b"port")


def parse_announce_request(data: bytes) -> AnnounceRequest:
    line = data[:-2] if data.endswith(b"\r\n") else data
    if not line.startswith(b"GET ") or b"\r" in line or b"\n" in line:
        raise MalformedInput("not a single GET request line")
    target, sep, version = line[4:].rpartition(b" ")
    if not sep or not version.startswith(b"HTTP/1."):
        raise MalformedInput("missing HTTP version")
    path, sep, query = target.partition(b"?")
    if not sep:
        raise MalformedInput("announce has no query string")
    try:
        path_text = path.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedInput("non-ASCII path") from exc

    fields: dict[bytes, bytes] = {}
    extra = []
    known = {b"info_hash", b"peer_id", b"port", b"ip", b"uploaded", b"downloaded", b"left", b"event"}
    for seg in query.split(b"&"):
        key, eq, value = seg.partition(b"=")
        name = unquote_to_bytes(key)
        if name in known:
            if name in fields:
                raise MalformedInput(f"duplicate key {name!r}")
            if not eq:
                raise MalformedInput(f"key {name!r} without value")
            fields[name] = unquote_to_bytes(value)
        else:
            extra.append(seg)
    for key in _REQUIRED_ANNOUNCE_KEYS:
        if key not in fields:
            raise MalformedInput(f"missing mandatory key {key.decode()}")
    try:
        infohash = InfoHash(fields[b"info_hash"])
        peer_id = PeerId(fields[b"peer_id"])
    except ValueError as exc:
        raise MalformedInput(str(exc)) from exc
    port = _parse_uint(fields[b"port"], "port")
    if port > 65535:
        raise MalformedInput(f"port out of range: {port}")
    event = None
    if b"event" in fields:
        event = fields[b"event"].decode("ascii", "replace")
        if event not in _ANNOUNCE_EVENTS:
            raise MalformedInput(f"unknown event {event!r}")
    return AnnounceRequest(
        infohash=infohash,
        peer_id=peer_id,
        port=port,
        ip_field=fields.get(b"ip"),
        uploaded=_parse_uint(fields.get(b"uploaded", b"0"), "uploaded"),
        downloaded=_parse_uint(fields.get(b"downloaded", b"0"), "downloaded"),
        left=_parse_uint(fields.get(b"left", b"0"), "left"),
        event=event,
        extra=tuple(extra),
        path=path_text,
    )


def _parse_uint(raw: bytes, name: str) -> int:
    if not raw or not raw.isdigit() or (raw[:1] == b"0" and len(raw) > 1):
        raise MalformedInput(f"bad {name} value {raw!r}")
    value = int(raw)
    if value > bencode.INT64_MAX:
        raise MalformedInput(f"{name} out of range")
    return value


@dataclass(frozen=True)
class AnnounceResponse:
    interval: int
    peers: tuple
    extra: dict = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("interval must be positive")
        object.__setattr__(self, "peers", tuple(self.peers))


def encode_announce_response(resp: AnnounceResponse) -> bytes:
    body = dict(resp.extra)
    body[b"interval"] = resp.interval
    body[b"peers"] = encode_compact_peers(resp.peers)
    return bencode.encode(body)


def parse_announce_response(data: bytes) -> AnnounceResponse:
    body = bencode.decode(data)
    if not isinstance(body, dict):
        raise MalformedInput("announce response is not a dict")
    interval = body.get(b"interval")
    peers = body.get(b"peers")
    if not isinstance(interval, int) or interval <= 0:
        raise MalformedInput("missing or non-positive interval")
    if not isinstance(peers, bytes):
        raise MalformedInput("missing compact peer list")
    extra = {k: v for k, v in body.items() if k not in (b"interval", b"peers")}
    return AnnounceResponse(interval, decode_compact_peers(peers), extra)


# -- peer wire ---------------------------------------------------------------

@dataclass(frozen=True)
class Handshake:
    infohash: InfoHash
    peer_id: PeerId
    extension_bits: int = EXTENSION_PROTOCOL_BIT

    @property
    def supports_extensions(self) -> bool:
        return bool(self.extension_bits & EXTENSION_PROTOCOL_BIT)


def encode_handshake(hs: Handshake) -> bytes:
    return (
        bytes([len(PROTOCOL_STRING)])
        + PROTOCOL_STRING
        + hs.extension_bits.to_bytes(8, "big")
        + hs.infohash
        + hs.peer_id
    )


def parse_handshake(data: bytes) -> Handshake:
    if len(data) != HANDSHAKE_LEN:
        raise MalformedInput(f"handshake must be {HANDSHAKE_LEN} octets, got {len(data)}")
    if data[0] != len(PROTOCOL_STRING) or data[1:20] != PROTOCOL_STRING:
        raise MalformedInput("wrong protocol string")
    return Handshake(
        infohash=InfoHash(data[28:48]),
        peer_id=PeerId(data[48:68]),
        extension_bits=int.from_bytes(data[20:28], "big"),
    )


@dataclass(frozen=True)
class ExtendedHandshake:
    listen_port: Optional[int] = None
    self_ip: Optional[bytes] = None
    client_version: Optional[str] = None
    extensions: dict = field(default_factory=dict, hash=False)


def encode_extended_handshake(ext: ExtendedHandshake) -> bytes:
    body: dict = {b"m": dict(ext.extensions)}
    if ext.listen_port is not None:
        body[b"p"] = ext.listen_port
    if ext.self_ip is not None:
        body[SELF_IP_KEY] = ext.self_ip
    if ext.client_version is not None:
        body[b"v"] = ext.client_version.encode("utf-8")
    payload = bytes([MSG_EXTENDED, EXT_HANDSHAKE_ID]) + bencode.encode(body)
    return struct.pack(">I", len(payload)) + payload


def parse_extended_handshake(data: bytes) -> ExtendedHandshake:
    if len(data) < 6:
        raise MalformedInput("truncated extension message")
    (length,) = struct.unpack(">I", data[:4])
    if length != len(data) - 4:
        raise MalformedInput("extension message length mismatch")
    if data[4] != MSG_EXTENDED or data[5] != EXT_HANDSHAKE_ID:
        raise MalformedInput("not an extension-protocol handshake")
    body = bencode.decode(data[6:])
    if not isinstance(body, dict):
        raise MalformedInput("extension handshake payload is not a dict")
    ext = body.get(b"m", {})
    if not isinstance(ext, dict):
        raise MalformedInput("'m' is not a dict")
    port = body.get(b"p")
    if port is not None and (not isinstance(port, int) or not 0 <= port <= 65535):
        raise MalformedInput("bad listen port")
    self_ip = body.get(SELF_IP_KEY)
    if self_ip is not None and not isinstance(self_ip, bytes):
        raise MalformedInput("self-reported ip is not a string")
    version = body.get(b"v")
    if version is not None:
        if not isinstance(version, bytes):
            raise MalformedInput("client version is not a string")
        version = version.decode("utf-8", "replace")
    return ExtendedHandshake(port, self_ip, version, ext)


def encode_piece(index: int, begin: int, block: bytes) -> bytes:
    payload = struct.pack(">BII", MSG_PIECE, index, begin) + block
    return struct.pack(">I", len(payload)) + payload


def parse_piece(data: bytes) -> tuple[int, int, bytes]:
    if len(data) < 13:
        raise MalformedInput("truncated piece message")
    (length,) = struct.unpack(">I", data[:4])
    if length != len(data) - 4 or data[4] != MSG_PIECE:
        raise MalformedInput("not a piece message")
    index, begin = struct.unpack(">II", data[5:13])
    return index, begin, data[13:]


# -- KRPC --------------------------------------------------------------------

class NodeInfo(NamedTuple):
    node_id: bytes
    endpoint: Endpoint


@dataclass(frozen=True)
class FindNodeQuery:
    target: bytes


@dataclass(frozen=True)
class FindNodeResponse:
    nodes: tuple


@dataclass(frozen=True)
class GetPeersQuery:
    infohash: InfoHash


@dataclass(frozen=True)
class GetPeersResponse:
    token: bytes
    values: Optional[tuple] = None
    nodes: Optional[tuple] = None


@dataclass(frozen=True)
class AnnouncePeerQuery:
    infohash: InfoHash
    port: int
    token: bytes = b""
    implied_port: bool = False


@dataclass(frozen=True)
class AnnouncePeerResponse:
    pass


@dataclass(frozen=True)
class KrpcError:
    code: int
    text: str


@dataclass(frozen=True)
class KrpcMessage:
    transaction_id: bytes
    body: object
    sender_id: Optional[bytes] = None


def _encode_nodes(nodes) -> bytes:
    out = bytearray()
    for node in nodes:
        if len(node.node_id) != 20:
            raise ValueError("node id must be 20 octets")
        out += node.node_id + encode_compact_peers([node.endpoint])
    return bytes(out)


def _decode_nodes(data) -> tuple:
    if not isinstance(data, bytes) or len(data) % 26:
        raise MalformedInput("bad compact node list")
    return tuple(
        NodeInfo(data[i:i + 20], decode_compact_peers(data[i + 20:i + 26])[0])
        for i in range(0, len(data), 26)
    )


def encode_krpc(msg: KrpcMessage) -> bytes:
    b = msg.body
    out: dict = {b"t": msg.transaction_id}
    sender = msg.sender_id if msg.sender_id is not None else bytes(20)
    if isinstance(b, KrpcError):
        out[b"y"] = b"e"
        out[b"e"] = [b.code, b.text.encode("utf-8")]
        return bencode.encode(out)
    if isinstance(b, (FindNodeQuery, GetPeersQuery, AnnouncePeerQuery)):
        out[b"y"] = b"q"
        args: dict = {b"id": sender}
        if isinstance(b, FindNodeQuery):
            out[b"q"] = b"find_node"
            args[b"target"] = bytes(b.target)
        elif isinstance(b, GetPeersQuery):
            out[b"q"] = b"get_peers"
            args[b"info_hash"] = bytes(b.infohash)
        else:
            out[b"q"] = b"announce_peer"
            args[b"info_hash"] = bytes(b.infohash)
            args[b"port"] = b.port
            args[b"token"] = b.token
            if b.implied_port:
                args[b"implied_port"] = 1
        out[b"a"] = args
        return bencode.encode(out)
    out[b"y"] = b"r"
    ret: dict = {b"id": sender}
    if isinstance(b, FindNodeResponse):
        ret[b"nodes"] = _encode_nodes(b.nodes)
    elif isinstance(b, GetPeersResponse):
        ret[b"token"] = b.token
        if b.values is not None:
            ret[b"values"] = [encode_compact_peers([ep]) for ep in b.values]
        if b.nodes is not None:
            ret[b"nodes"] = _encode_nodes(b.nodes)
    elif not isinstance(b, AnnouncePeerResponse):
        raise TypeError(f"unknown KRPC body {type(b).__name__}")
    out[b"r"] = ret
    return bencode.encode(out)


def _krpc_id(args) -> bytes:
    node_id = args.get(b"id")
    if not isinstance(node_id, bytes) or len(node_id) != 20:
        raise MalformedInput("missing or bad node id")
    return node_id


def _krpc_infohash(args) -> InfoHash:
    value = args.get(b"info_hash")
    if not isinstance(value, bytes) or len(value) != 20:
        raise MalformedInput("missing or bad info_hash")
    return InfoHash(value)


def parse_krpc(data: bytes) -> KrpcMessage:
    msg = bencode.decode(data)
    if not isinstance(msg, dict):
        raise MalformedInput("KRPC message is not a dict")
    tid = msg.get(b"t")
    kind = msg.get(b"y")
    if not isinstance(tid, bytes):
        raise MalformedInput("missing transaction id")
    if kind == b"e":
        err = msg.get(b"e")
        if (
            not isinstance(err, list)
            or len(err) != 2
            or not isinstance(err[0], int)
            or not isinstance(err[1], bytes)
        ):
            raise MalformedInput("bad error body")
        return KrpcMessage(tid, KrpcError(err[0], err[1].decode("utf-8", "replace")))
    if kind == b"q":
        name = msg.get(b"q")
        args = msg.get(b"a")
        if not isinstance(args, dict):
            raise MalformedInput("query without argument dict")
        sender = _krpc_id(args)
        if name == b"find_node":
            target = args.get(b"target")
            if not isinstance(target, bytes) or len(target) != 20:
                raise MalformedInput("bad find_node target")
            return KrpcMessage(tid, FindNodeQuery(target), sender)
        if name == b"get_peers":
            return KrpcMessage(tid, GetPeersQuery(_krpc_infohash(args)), sender)
        if name == b"announce_peer":
            port = args.get(b"port")
            token = args.get(b"token", b"")
            implied = args.get(b"implied_port", 0)
            if not isinstance(port, int) or not 0 <= port <= 65535:
                raise MalformedInput("bad announce_peer port")
            if not isinstance(token, bytes) or implied not in (0, 1):
                raise MalformedInput("bad announce_peer arguments")
            return KrpcMessage(
                tid, AnnouncePeerQuery(_krpc_infohash(args), port, token, bool(implied)), sender
            )
        raise MalformedInput(f"unknown query {name!r}")
    if kind == b"r":
        ret = msg.get(b"r")
        if not isinstance(ret, dict):
            raise MalformedInput("response without return dict")
        sender = _krpc_id(ret)
        if b"token" in ret:
            token = ret[b"token"]
            if not isinstance(token, bytes):
                raise MalformedInput("bad token")
            values = ret.get(b"values")
            if values is not None:
                if not isinstance(values, list) or not all(
                    isinstance(v, bytes) and len(v) == 6 for v in values
                ):
                    raise MalformedInput("bad values list")
                values = tuple(decode_compact_peers(v)[0] for v in values)
            nodes = ret.get(b"nodes")
            if nodes is not None:
                nodes = _decode_nodes(nodes)
            return KrpcMessage(tid, GetPeersResponse(token, values, nodes), sender)
        if b"nodes" in ret:
            return KrpcMessage(tid, FindNodeResponse(_decode_nodes(ret[b"nodes"])), sender)
        return KrpcMessage(tid, AnnouncePeerResponse(), sender)
    raise MalformedInput(f"unknown message type {kind!r}")
