"""Port matching against a DHT crawl."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

from ..swarm import POPULAR_PORTS
from .records import DeanonRecord, Method

EXCLUDED = "excluded"
NO_CANDIDATE = "no_candidate"
AMBIGUOUS = "ambiguous"
MATCH = "match"


class DhtClient:
    """Query-only view of the DHT: what any outside crawler can ask."""

    def __init__(self, dht):
        self._find_node = dht.find_node
        self._get_peers = dht.get_peers
        self._crawl = dht.crawl

    def find_node(self, target: bytes) -> bytes:
        return self._find_node(target)

    def get_peers(self, infohash, now: int):
        return self._get_peers(infohash, now)

    def crawl(self, infohash, now: int) -> list:
        return self._crawl(infohash, now)


@dataclass
class _Crawl:
    time: int
    endpoints: list


class DhtMatcher:
    """Claims the one crawled endpoint whose port equals the victim's listening port.

    With ``abstain`` set (the default) an ambiguous match yields no claim;
    otherwise the lowest candidate address is claimed.
    """

    def __init__(self, client: DhtClient, exit_ips, excluded_ports=POPULAR_PORTS,
                 cache_ttl: int = 1800, refresh_on_miss: int = 60, abstain: bool = True):
        self.client = client
        self.exit_ips = frozenset(exit_ips)
        self.excluded_ports = frozenset(excluded_ports)
        self.cache_ttl = cache_ttl
        self.refresh_on_miss = refresh_on_miss
        self.abstain = abstain
        self._cache: dict[bytes, _Crawl] = {}
        self.outcomes = defaultdict(int)
        self.crawls = 0

    def _crawl(self, infohash: bytes, now: int) -> _Crawl:
        self.crawls += 1
        # few lookups hit each crawl, so a linear scan beats indexing by port
        entry = _Crawl(now, list(self.client.crawl(infohash, now)))
        self._cache[infohash] = entry
        return entry

    def candidates(self, infohash, port: int, now: int) -> list[str]:
        key = bytes(infohash)
        entry = self._cache.get(key)
        if entry is None or now - entry.time > self.cache_ttl:
            entry = self._crawl(key, now)
        ips = [ip for ip, p in entry.endpoints if p == port]
        if not ips and now - entry.time > self.refresh_on_miss:
            entry = self._crawl(key, now)
            ips = [ip for ip, p in entry.endpoints if p == port]
        return sorted({ip for ip in ips if ip not in self.exit_ips})

    def dht_match(self, infohash, port: int, now: int, stream_id: Optional[int] = None,
                  peer_id=None) -> tuple[str, Optional[DeanonRecord]]:
        if port in self.excluded_ports:
            self.outcomes[EXCLUDED] += 1
            return EXCLUDED, None
        cands = self.candidates(infohash, port, now)
        if not cands:
            outcome = NO_CANDIDATE
        elif len(cands) > 1 and self.abstain:
            outcome = AMBIGUOUS
        else:
            outcome = MATCH
        self.outcomes[outcome] += 1
        if outcome != MATCH:
            return outcome, None
        return outcome, DeanonRecord(
            claimed_ip=cands[0],
            method=Method.DHT_MATCH,
            supporting_streams=frozenset({stream_id}) if stream_id is not None else frozenset(),
            peer_ids_seen=frozenset({peer_id}) if peer_id is not None else frozenset(),
            time=now,
        )
