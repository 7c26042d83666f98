"""Spreading a de-anonymized stream to its circuit and to other circuits.

Intra-circuit: every stream on a circuit that carries a de-anonymized stream
belongs to the same client. Inter-circuit: a circuit is linked to a known
client when one of its streams carries that client's peer id, or when it
opens a stream to an endpoint the tracker handed that client less than
``window`` seconds earlier.

A circuit reached through a direct record counts toward the intra share;
a circuit reached through an inter-circuit rule, and every stream on it,
counts toward the inter share.
"""

from __future__ import annotations

import bisect
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..errors import ConflictingAttribution
from . import records
from .records import DeanonRecord, Method, StreamView

DIRECT = "direct"
INTER = "inter"


class TrackerListMemory:
    """Peer lists returned by the tracker, keyed by the circuit that carried them."""

    def __init__(self):
        self._by_circuit: dict[int, list] = defaultdict(list)

    def remember(self, circuit_id: int, time: int, peers):
        self._by_circuit[circuit_id].append((time, tuple(peers)))

    def entries(self, circuit_id: int) -> list:
        return self._by_circuit.get(circuit_id, [])

    def __len__(self):
        return sum(len(v) for v in self._by_circuit.values())


@dataclass(frozen=True)
class Attribution:
    ip: str
    method: Method
    circuit_id: int


@dataclass
class DominoResult:
    attributions: dict = field(default_factory=dict)
    circuits: dict = field(default_factory=dict)
    conflicts: dict = field(default_factory=dict)
    rejected_links: int = 0

    def split(self) -> dict:
        intra = sum(1 for a in self.attributions.values() if self.circuits[a.circuit_id][1] == DIRECT)
        inter = len(self.attributions) - intra
        total = len(self.attributions)
        return {
            "intra_streams": intra,
            "inter_streams": inter,
            "intra_share": intra / total if total else None,
            "inter_share": inter / total if total else None,
        }


def build_stream_views(observations: Iterable) -> dict[int, StreamView]:
    """Reconstruct per-stream knowledge from a raw observation log."""
    views: dict[int, StreamView] = {}
    for obs in observations:
        view = views.get(obs.stream_id)
        if view is None:
            view = views[obs.stream_id] = StreamView(obs.stream_id, obs.circuit_id, obs.destination, obs.time)
        kind, parsed = records.classify_payload(obs.payload, obs.direction, view)
        view.kinds.add(kind)
        if kind == records.ANNOUNCE:
            view.peer_id, view.infohash, view.listen_port = parsed.peer_id, parsed.infohash, parsed.port
        elif kind == records.HANDSHAKE:
            view.peer_id, view.infohash = parsed.peer_id, parsed.infohash
        elif kind == records.EXT_HANDSHAKE:
            view.listen_port = parsed.listen_port
        elif kind == records.HTTP:
            view.http_host = parsed
    return views


def build_tracker_memory(observations: Iterable, views: dict) -> TrackerListMemory:
    memory = TrackerListMemory()
    for obs in observations:
        if obs.direction != "to-client":
            continue
        kind, parsed = records.classify_payload(obs.payload, obs.direction, views.get(obs.stream_id))
        if kind == records.ANNOUNCE_RESPONSE:
            memory.remember(obs.circuit_id, obs.time, parsed.peers)
    return memory


def domino_link(
    seeds: Iterable[DeanonRecord],
    observations: Optional[Iterable] = None,
    memory: Optional[TrackerListMemory] = None,
    window: int = 300,
    views: Optional[dict] = None,
    use_peer_ids: bool = True,
    use_tracker_lists: bool = True,
    on_conflict: str = "raise",
) -> DominoResult:
    """Expand direct records into a stream -> IP attribution map.

    ``on_conflict="raise"`` raises :class:`ConflictingAttribution` on the
    first stream that would receive two IPs; ``"collect"`` reports such
    streams in ``DominoResult.conflicts`` and leaves them out of the map,
    except streams named by a direct record, which keep their direct claim.
    """
    if on_conflict not in ("raise", "collect"):
        raise ValueError("on_conflict must be 'raise' or 'collect'")
    seeds = sorted(seeds, key=lambda r: (r.time, r.method.value, r.claimed_ip, sorted(r.supporting_streams)))
    if views is None:
        observations = list(observations or ())
        views = build_stream_views(observations)
    if memory is None:
        memory = build_tracker_memory(observations or (), views) if use_tracker_lists else TrackerListMemory()

    streams_of = defaultdict(list)
    by_dest = defaultdict(list)
    by_pid = defaultdict(list)
    for sid in sorted(views):
        v = views[sid]
        streams_of[v.circuit_id].append(sid)
        by_dest[v.destination].append((v.first_seen, sid))
        if v.peer_id is not None:
            by_pid[bytes(v.peer_id)].append(sid)

    for entries in by_dest.values():
        entries.sort()

    result = DominoResult()
    direct_streams: dict[int, tuple] = {}
    conflicts: dict[int, set] = defaultdict(set)
    pid_ip: dict[bytes, str] = {}
    queue: deque = deque()

    def claim_circuit(cid: int, ip: str, origin: str, via_stream=None):
        known = result.circuits.get(cid)
        if known is None:
            result.circuits[cid] = (ip, origin)
            queue.append(cid)
        elif known[0] == ip:
            return
        elif known[1] == DIRECT and origin == INTER:
            # a direct claim outranks a linked one
            result.rejected_links += 1
        else:
            for sid in streams_of.get(cid, ()):
                conflicts[sid].update((known[0], ip))
            if via_stream is not None:
                conflicts[via_stream].update((known[0], ip))

    for rec in seeds:
        for sid in sorted(rec.supporting_streams):
            view = views.get(sid)
            prior = direct_streams.get(sid)
            if prior is not None and prior[0] != rec.claimed_ip:
                conflicts[sid].update((prior[0], rec.claimed_ip))
                continue
            if prior is None:
                direct_streams[sid] = (rec.claimed_ip, rec.method)
            if view is not None:
                claim_circuit(view.circuit_id, rec.claimed_ip, DIRECT, sid)
        for pid in rec.peer_ids_seen:
            pid_ip.setdefault(bytes(pid), rec.claimed_ip)

    while queue:
        cid = queue.popleft()
        ip, origin = result.circuits[cid]
        tag = Method.DOMINO_INTRA if origin == DIRECT else Method.DOMINO_INTER
        new_pids = []
        for sid in streams_of.get(cid, ()):
            if sid in direct_streams:
                d_ip, d_method = direct_streams[sid]
                result.attributions[sid] = Attribution(d_ip, d_method, cid)
            elif sid not in result.attributions:
                result.attributions[sid] = Attribution(ip, tag, cid)
            pid = views[sid].peer_id
            if pid is not None:
                key = bytes(pid)
                bound = pid_ip.get(key)
                if bound is None:
                    pid_ip[key] = ip
                    new_pids.append(key)
                elif bound == ip:
                    new_pids.append(key)
        if use_peer_ids:
            for key in new_pids:
                owner = pid_ip[key]
                for sid in by_pid.get(key, ()):
                    other = views[sid].circuit_id
                    if other != cid:
                        claim_circuit(other, owner, INTER, sid)
        if use_tracker_lists:
            for t_list, peers in memory.entries(cid):
                for ep in peers:
                    entries = by_dest.get(ep)
                    if not entries:
                        continue
                    lo = bisect.bisect_left(entries, (t_list, -1))
                    hi = bisect.bisect_right(entries, (t_list + window, float("inf")))
                    for _, sid in entries[lo:hi]:
                        other = views[sid].circuit_id
                        if other != cid:
                            claim_circuit(other, ip, INTER, sid)

    for sid, ips in conflicts.items():
        if on_conflict == "raise":
            raise ConflictingAttribution(sid, ips)
        if sid not in direct_streams:
            result.attributions.pop(sid, None)
    result.conflicts = {sid: tuple(sorted(ips)) for sid, ips in sorted(conflicts.items())}
    return result
