"""Passive inspection of self-reported IP fields in announces and extension handshakes."""

from __future__ import annotations

from collections import Counter
from typing import Optional

from ..btwire import AnnounceRequest, ExtendedHandshake, IpClass, classify_ip, normalize_ip
from ..overlay import ExitObservation
from . import records
from .records import DeanonRecord, Method


class IpFieldTally:
    """Histogram of IP-field classes, split by message type."""

    def __init__(self):
        self.announce = Counter()
        self.ext_handshake = Counter()

    def as_dict(self) -> dict:
        return {
            "announce": {c.value: self.announce.get(c, 0) for c in IpClass},
            "ext_handshake": {c.value: self.ext_handshake.get(c, 0) for c in IpClass},
        }


def inspect(
    obs: ExitObservation,
    exit_ips,
    parsed=None,
    tally: Optional[IpFieldTally] = None,
    peer_id=None,
) -> Optional[DeanonRecord]:
    """Emit an unverified record when an announce or extension handshake
    carries a public, non-exit address.

    ``parsed`` may carry an already-decoded message; otherwise the payload is
    recognised here. Payloads of any other kind are skipped.
    """
    if parsed is None:
        kind, parsed = records.classify_payload(obs.payload, obs.direction)
        if kind not in (records.ANNOUNCE, records.EXT_HANDSHAKE):
            return None
    if isinstance(parsed, AnnounceRequest):
        raw, method, bucket = parsed.ip_field, Method.INSPECTION_ANNOUNCE, "announce"
        peer_id = parsed.peer_id
    elif isinstance(parsed, ExtendedHandshake):
        raw, method, bucket = parsed.self_ip, Method.INSPECTION_EXT_HANDSHAKE, "ext_handshake"
    else:
        return None
    cls = classify_ip(raw, exit_ips)
    if tally is not None:
        getattr(tally, bucket)[cls] += 1
    if cls is not IpClass.PUBLIC_NON_EXIT:
        return None
    return DeanonRecord(
        claimed_ip=normalize_ip(raw),
        method=method,
        supporting_streams=frozenset({obs.stream_id}),
        peer_ids_seen=frozenset({peer_id}) if peer_id is not None else frozenset(),
        time=obs.time,
    )
