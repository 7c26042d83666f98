"""What the malicious exit claims, and how it reads exit payloads."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional

from .. import btwire
from ..btwire import MalformedInput


class Method(enum.Enum):
    INSPECTION_ANNOUNCE = "InspectionAnnounce"
    INSPECTION_EXT_HANDSHAKE = "InspectionExtHandshake"
    HIJACK = "Hijack"
    DHT_MATCH = "DhtMatch"
    DOMINO_INTRA = "DominoIntra"
    DOMINO_INTER = "DominoInter"

    @property
    def direct(self) -> bool:
        return self not in (Method.DOMINO_INTRA, Method.DOMINO_INTER)


VERIFIED_METHODS = frozenset({Method.HIJACK, Method.DHT_MATCH})


@dataclass(frozen=True)
class DeanonRecord:
    claimed_ip: str
    method: Method
    supporting_streams: frozenset = frozenset()
    peer_ids_seen: frozenset = frozenset()
    time: int = 0

    @property
    def verified(self) -> bool:
        # inspection claims are never checked for authenticity
        return self.method in VERIFIED_METHODS

    def to_record(self) -> dict:
        return {
            "time": self.time,
            "claimed_ip": self.claimed_ip,
            "method": self.method.value,
            "verified": self.verified,
            "supporting_streams": sorted(self.supporting_streams),
            "peer_ids_seen": sorted(bytes(p).hex() for p in self.peer_ids_seen),
        }


def dump_records(records, fh) -> int:
    n = 0
    for rec in records:
        fh.write(json.dumps(rec.to_record(), sort_keys=True, separators=(",", ":")))
        fh.write("\n")
        n += 1
    return n


# -- payload recognition -------------------------------------------------------

ANNOUNCE = "announce"
ANNOUNCE_RESPONSE = "announce_response"
HANDSHAKE = "handshake"
EXT_HANDSHAKE = "ext_handshake"
PIECE = "piece"
HTTP = "http"
OTHER = "other"


@dataclass
class StreamView:
    """Everything the exit has learned about one stream from its payloads."""

    stream_id: int
    circuit_id: int
    destination: btwire.Endpoint
    first_seen: int
    kinds: set = field(default_factory=set)
    peer_id: Optional[btwire.PeerId] = None
    infohash: Optional[btwire.InfoHash] = None
    listen_port: Optional[int] = None
    http_host: Optional[str] = None


def classify_payload(payload: bytes, direction: str, view: Optional[StreamView] = None):
    """Return ``(kind, parsed)`` for an exit payload; ``parsed`` is None for OTHER."""
    if not payload:
        return OTHER, None
    if direction == "to-client":
        if view is not None and ANNOUNCE in view.kinds:
            try:
                return ANNOUNCE_RESPONSE, btwire.parse_announce_response(payload)
            except MalformedInput:
                return OTHER, None
        return OTHER, None
    if payload[:1] == b"\x13" and len(payload) == btwire.HANDSHAKE_LEN:
        try:
            return HANDSHAKE, btwire.parse_handshake(payload)
        except MalformedInput:
            return OTHER, None
    if payload.startswith(b"GET "):
        if b"info_hash=" in payload:
            try:
                return ANNOUNCE, btwire.parse_announce_request(payload)
            except MalformedInput:
                return OTHER, None
        host = None
        for line in payload.split(b"\r\n"):
            if line.lower().startswith(b"host:"):
                host = line[5:].strip().decode("ascii", "replace")
        return HTTP, host
    if len(payload) >= 6 and payload[4] == btwire.MSG_EXTENDED:
        try:
            return EXT_HANDSHAKE, btwire.parse_extended_handshake(payload)
        except MalformedInput:
            return OTHER, None
    if len(payload) >= 13 and payload[4] == btwire.MSG_PIECE:
        return PIECE, None
    return OTHER, None
