"""The BitTorrent world: tracker, DHT, torrent population and peer agents.

Every torrent has a static population of regular (non-Tor) background peers
that exist only as endpoints in the tracker and the DHT. Simulated
:class:`PeerAgent` objects join on top of that population and are the only
peers whose traffic can cross the onion overlay.
"""

from __future__ import annotations

import enum
import heapq
import ipaddress
import math
import random
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import btwire
from .btwire import (
    AnnounceRequest,
    AnnounceResponse,
    Endpoint,
    ExtendedHandshake,
    Handshake,
    InfoHash,
    PeerId,
)
from .overlay import Overlay

POPULAR_PORTS = (80, 443, 6881, 16884, 35691, 51413)
PORT_LOW = 1024
PORT_HIGH = 65535
ANNOUNCE_INTERVAL_S = 600


class UsageMode(enum.Enum):
    TRACKER_ONLY = "tracker_only"
    PEERS_ONLY = "peers_only"
    CONTENT = "content"
    NO_TOR = "no_tor"

    @property
    def tracker_via_tor(self) -> bool:
        return self in (UsageMode.TRACKER_ONLY, UsageMode.CONTENT)

    @property
    def peers_via_tor(self) -> bool:
        return self in (UsageMode.PEERS_ONLY, UsageMode.CONTENT)


# -- distributions -------------------------------------------------------------

def draw_listen_ports(rng: np.random.Generator, n: int, popular_mass: float = 0.1,
                      popular_ports=POPULAR_PORTS) -> np.ndarray:
    """Listening ports: uniform on [1024, 65535], except a ``popular_mass``
    share spread evenly over the popular ports."""
    ports = rng.integers(PORT_LOW, PORT_HIGH + 1, size=n)
    if popular_mass > 0 and len(popular_ports):
        hit = rng.random(n) < popular_mass
        ports[hit] = rng.choice(np.asarray(popular_ports), size=int(hit.sum()))
    return ports


def port_uniformity(ports, bins: int = 64, low: int = PORT_LOW, high: int = PORT_HIGH):
    """Chi-square goodness of fit of ports against uniform on [low, high].

    Returns ``(statistic, p_value, observed_counts)``.
    """
    ports = np.asarray(ports)
    span = high - low + 1
    if span % bins:
        raise ValueError(f"{span} ports do not split into {bins} equal bins")
    counts = np.bincount((ports - low) // (span // bins), minlength=bins)
    stat, p = stats.chisquare(counts)
    return float(stat), float(p), counts


@dataclass(frozen=True)
class TorrentSizeDistribution:
    """Discrete log-normal torrent sizes, truncated at ``max_size``.

    ``sigma`` is solved so that P[n < threshold] equals ``p_under``.
    """

    median: float = 120.0
    p_under: float = 0.9
    threshold: int = 1000
    max_size: int = 5000

    @property
    def sigma(self) -> float:
        return math.log(self.threshold / self.median) / stats.norm.ppf(self.p_under)

    def cdf_below(self, n: int) -> float:
        """P[size < n] for the discretised (floored) distribution."""
        if n <= 1:
            return 0.0
        if n > self.max_size:
            return 1.0
        return float(stats.norm.cdf(math.log(n / self.median) / self.sigma))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raw = np.floor(np.exp(math.log(self.median) + self.sigma * rng.standard_normal(size)))
        return np.clip(raw, 1, self.max_size).astype(np.int64)


class AddressAllocator:
    """Hands out unique IPv4 addresses from a base address upward."""

    def __init__(self, base: str):
        self._next = int(ipaddress.IPv4Address(base))

    def take(self) -> str:
        while self._next & 0xFF in (0, 255):
            self._next += 1
        value = self._next
        self._next += 1
        return str(ipaddress.IPv4Address(value))

    def take_many(self, n: int) -> list[str]:
        return [self.take() for _ in range(n)]


# -- torrents and tracker ------------------------------------------------------

@dataclass
class Torrent:
    index: int
    infohash: InfoHash
    size: int
    background: list
    background_dht: list


class Tracker:
    """HTTP tracker: registers announcers, returns uniform random peer samples."""

    PURGE_EVERY_S = 60

    def __init__(self, endpoint: Endpoint, rng: np.random.Generator, k: int = 50,
                 interval: int = ANNOUNCE_INTERVAL_S, member_ttl: Optional[int] = None):
        self.endpoint = endpoint
        self.rng = rng
        self.k = k
        self.interval = interval
        self.member_ttl = member_ttl if member_ttl is not None else 2 * interval + 60
        self._background: dict[bytes, list] = {}
        self._background_set: dict[bytes, frozenset] = {}
        self._members: dict[bytes, dict] = {}
        self._pool: dict[bytes, list] = {}
        self._purged: dict[bytes, int] = {}

    def add_torrent(self, infohash: InfoHash, background=()):
        key = bytes(infohash)
        self._background[key] = list(background)
        self._background_set[key] = frozenset(self._background[key])
        self._members.setdefault(key, {})
        self._pool.pop(key, None)

    def members(self, infohash, now: int) -> list[Endpoint]:
        key = bytes(infohash)
        dyn = self._members.get(key, {})
        bg = self._background_set.get(key, frozenset())
        alive = [ep for ep, seen in dyn.items() if now - seen <= self.member_ttl and ep not in bg]
        return self._background.get(key, []) + alive

    def _purge(self, key: bytes, dyn: dict, now: int):
        if now - self._purged.get(key, -self.PURGE_EVERY_S) < self.PURGE_EVERY_S:
            return
        self._purged[key] = now
        ttl = self.member_ttl
        stale = [ep for ep, seen in dyn.items() if now - seen > ttl]
        for ep in stale:
            del dyn[ep]
        if stale:
            self._pool.pop(key, None)

    def handle_announce(self, req: AnnounceRequest, src: Endpoint, now: int) -> AnnounceResponse:
        key = bytes(req.infohash)
        if key not in self._members:
            self.add_torrent(req.infohash)
        dyn = self._members[key]
        me = Endpoint(src.ip, req.port)
        if req.event == "stopped":
            if dyn.pop(me, None) is not None:
                self._pool.pop(key, None)
        else:
            if me not in dyn:
                self._pool.pop(key, None)
            dyn[me] = now
        self._purge(key, dyn, now)
        pool = self._pool.get(key)
        if pool is None:
            bg = self._background_set[key]
            pool = self._pool[key] = self._background[key] + [ep for ep in dyn if ep not in bg]
        # members not yet purged may be up to a minute past their ttl
        total = len(pool)
        want = min(self.k + 1, total)
        if want == total:
            picks = self.rng.permutation(total).tolist()
        else:
            picks = self.rng.choice(total, want, replace=False).tolist()
        peers = [pool[i] for i in picks if pool[i] != me][: self.k]
        return AnnounceResponse(
            self.interval, peers, {b"complete": len(pool), b"incomplete": 0}
        )


# -- DHT -------------------------------------------------------------------------

def _sample_rows(rng: np.random.Generator, n: int, k: int, q: int) -> np.ndarray:
    """``q`` independent uniform ``k``-subsets of ``range(n)`` (``k < n``)."""
    if n <= 4 * k:
        return rng.random((q, n)).argsort(axis=1)[:, :k]
    idx = rng.integers(0, n, size=(q, k))
    while True:
        s = np.sort(idx, axis=1)
        bad = (s[:, 1:] == s[:, :-1]).any(axis=1)
        nbad = int(bad.sum())
        if not nbad:
            return idx
        idx[bad] = rng.integers(0, n, size=(nbad, k))


@dataclass
class CrawlStats:
    rounds: int = 0
    queries: int = 0


class Dht:
    """Mainline-style DHT collapsed to the responsible node per infohash.

    ``get_peers`` returns a uniform random subset of at most ``k`` stored
    endpoints; ``crawl`` repeats it until the discovered set is stable.
    """

    def __init__(self, rng: np.random.Generator, k: int = 8, stable_rounds: int = 5,
                 n_nodes: int = 64, entry_ttl: int = 3600, coverage: float = 2.0,
                 endpoint: Endpoint = Endpoint("87.98.162.88", 6881)):
        self.rng = rng
        self.k = k
        self.stable_rounds = stable_rounds
        self.entry_ttl = entry_ttl
        self.coverage = coverage
        self.endpoint = endpoint
        node_rng = random.Random(int(rng.integers(2**62)))
        self.node_ids = sorted(node_rng.randbytes(20) for _ in range(n_nodes))
        self._background: dict[bytes, list] = {}
        self._store: dict[bytes, dict] = {}
        self.last_crawl = CrawlStats()

    def add_torrent(self, infohash, background=()):
        self._background[bytes(infohash)] = list(background)
        self._store.setdefault(bytes(infohash), {})

    def find_node(self, target: bytes) -> bytes:
        """Id of the node responsible for ``target`` (XOR-closest)."""
        t = int.from_bytes(target, "big")
        return min(self.node_ids, key=lambda nid: int.from_bytes(nid, "big") ^ t)

    def announce_peer(self, infohash, endpoint: Endpoint, now: int):
        self._store.setdefault(bytes(infohash), {})[endpoint] = now

    def store_contents(self, infohash, now: int) -> list[Endpoint]:
        """Ground-truth contents of the store (background first, then fresh entries)."""
        key = bytes(infohash)
        dyn = self._store.get(key)
        if dyn is None:
            return list(self._background.get(key, ()))
        ttl = self.entry_ttl
        bg = self._background.get(key, [])
        alive = [ep for ep, seen in dyn.items() if now - seen <= ttl]
        if bg and alive:
            known = set(bg)
            alive = [ep for ep in alive if ep not in known]
        return bg + alive

    def get_peers(self, infohash, now: int) -> list[Endpoint]:
        pop = self.store_contents(infohash, now)
        if len(pop) <= self.k:
            return list(pop)
        return [pop[i] for i in _sample_rows(self.rng, len(pop), self.k, 1)[0]]

    def crawl(self, infohash, now: int, stable_rounds: Optional[int] = None) -> list[Endpoint]:
        """Union of repeated ``get_peers`` answers.

        A round issues enough queries to cover the set found so far
        ``coverage`` times over; the crawl stops after ``stable_rounds``
        consecutive rounds that discover nothing new.
        """
        r_stable = self.stable_rounds if stable_rounds is None else stable_rounds
        self.find_node(bytes(infohash))
        pop = self.store_contents(infohash, now)
        n = len(pop)
        stats_ = CrawlStats()
        self.last_crawl = stats_
        if n == 0:
            stats_.rounds, stats_.queries = 1, 1
            return []
        k = self.k
        found = np.zeros(n, dtype=bool)
        count = 0
        stable = 0
        while stable < r_stable:
            q = max(1, math.ceil(self.coverage * count / k))
            if n <= k:
                found[:] = True
            else:
                found[_sample_rows(self.rng, n, k, q).ravel()] = True
            stats_.rounds += 1
            stats_.queries += q
            new = int(found.sum())
            stable = stable + 1 if new == count else 0
            count = new
        return [pop[i] for i in np.flatnonzero(found).tolist()]

    def handle_datagram(self, dgram, now: int) -> bytes:
        """Answer one KRPC datagram. Announces store the datagram's source address."""
        try:
            msg = btwire.parse_krpc(dgram.payload)
        except btwire.MalformedInput:
            return btwire.encode_krpc(btwire.KrpcMessage(b"", btwire.KrpcError(203, "malformed")))
        body = msg.body
        me = self.node_ids[0]
        if isinstance(body, btwire.FindNodeQuery):
            nid = self.find_node(body.target)
            reply = btwire.FindNodeResponse((btwire.NodeInfo(nid, self.endpoint),))
        elif isinstance(body, btwire.GetPeersQuery):
            reply = btwire.GetPeersResponse(b"tk", values=tuple(self.get_peers(body.infohash, now)))
        elif isinstance(body, btwire.AnnouncePeerQuery):
            port = dgram.source.port if body.implied_port else body.port
            self.announce_peer(body.infohash, Endpoint(dgram.source.ip, port), now)
            reply = btwire.AnnouncePeerResponse()
        else:
            reply = btwire.KrpcError(204, "method unknown")
        return btwire.encode_krpc(btwire.KrpcMessage(msg.transaction_id, reply, me))


# -- peers -----------------------------------------------------------------------

@dataclass(frozen=True)
class ClientProfile:
    """Leak-relevant behaviour of one BitTorrent client build."""

    name: str
    client_tag: bytes
    version: str
    weight: float = 1.0
    announces_ip_prob: float = 0.35
    ip_field_weights: tuple = (("invalid", 0.04), ("private", 0.38), ("public_v4", 0.13), ("public_v6", 0.45))
    stale_ip_prob: float = 0.0
    extension_protocol: bool = True
    ext_handshake_ip_prob: float = 0.84
    ext_ip_exit_prob: float = 0.67
    encrypt_prob: float = 0.3
    dht_prob: float = 0.9


@dataclass(frozen=True)
class HttpSite:
    endpoint: Endpoint
    host: str
    category: str


@dataclass
class PeerAgent:
    id: int
    ip: str
    ipv6: str
    port: int
    peer_id: PeerId
    mode: UsageMode
    profile: ClientProfile
    torrents: tuple
    dht_enabled: bool
    encrypts: bool
    http_habit: tuple = ()
    country: str = ""
    asn: str = ""
    sessions: list = field(default_factory=list)
    # runtime
    online: bool = False
    session_end: int = 0
    next_announce: dict = field(default_factory=dict)
    announced: set = field(default_factory=set)
    connected: dict = field(default_factory=dict)
    pending: list = field(default_factory=list)
    next_dht: int = 0
    next_http: Optional[int] = None

    @property
    def real_endpoint(self) -> Endpoint:
        return Endpoint(self.ip, self.port)


@dataclass(frozen=True, slots=True)
class Emission:
    """One message an agent put on the wire during a tick."""

    time: int
    kind: str
    via_tor: bool
    destination: Endpoint
    stream_id: Optional[int] = None


class Swarm:
    """Drives peer agents against the tracker, the DHT and the overlay.

    ``listeners`` maps endpoints that accept inbound connections to handler
    objects with ``on_connect(src, handshake_bytes, now) -> bool`` (True asks
    the peer for a piece) and ``on_piece(src, infohash, piece_bytes, now)``.
    """

    def __init__(self, overlay: Overlay, tracker: Tracker, dht: Dht, torrents: list,
                 rng: random.Random, max_connections: int = 20,
                 connect_delay_mean: float = 60.0, http_mean_interval: float = 300.0,
                 dht_reannounce: int = 1800, connection_lifetime_mean: float = 3600.0):
        self.overlay = overlay
        self.tracker = tracker
        self.dht = dht
        self.torrents = torrents
        self.rng = rng
        self.max_connections = max_connections
        self.connect_delay_mean = connect_delay_mean
        self.http_mean_interval = http_mean_interval
        self.dht_reannounce = dht_reannounce
        self.connection_lifetime_mean = connection_lifetime_mean
        self.listeners: dict[Endpoint, object] = {}
        self._tid = 0

    # -- sessions --------------------------------------------------------------

    def start_session(self, agent: PeerAgent, start: int, end: int):
        agent.online = True
        agent.session_end = end
        agent.connected = {t: {} for t in agent.torrents}
        agent.announced = set()
        agent.pending = []
        for t in agent.torrents:
            agent.next_announce[t] = start + self.rng.randrange(30)
        agent.next_dht = start
        agent.next_http = (
            start + int(self.rng.expovariate(1.0 / self.http_mean_interval))
            if agent.http_habit else None
        )

    def next_wake(self, agent: PeerAgent) -> Optional[int]:
        if not agent.online:
            return None
        times = list(agent.next_announce.values())
        if agent.dht_enabled:
            times.append(agent.next_dht)
        if agent.pending:
            times.append(agent.pending[0][0])
        if agent.next_http is not None:
            times.append(agent.next_http)
        t = min(times)
        return t if t < agent.session_end else agent.session_end

    def peer_tick(self, agent: PeerAgent, now: int) -> list[Emission]:
        """Perform every action of ``agent`` that is due at ``now``."""
        out: list[Emission] = []
        if not agent.online:
            return out
        if now >= agent.session_end:
            agent.online = False
            agent.pending = []
            return out
        if agent.dht_enabled and agent.next_dht <= now:
            for t in agent.torrents:
                out.append(self._dht_announce(agent, t, now))
            agent.next_dht = now + self.dht_reannounce
        for t in agent.torrents:
            if agent.next_announce[t] <= now:
                out.append(self._announce(agent, t, now))
                agent.next_announce[t] = now + self.tracker.interval
        while agent.pending and agent.pending[0][0] <= now:
            _, _, t, ep = heapq.heappop(agent.pending)
            out.extend(self._connect(agent, t, ep, now))
        if agent.next_http is not None and agent.next_http <= now:
            out.append(self._http(agent, now))
            agent.next_http = now + max(1, int(self.rng.expovariate(1.0 / self.http_mean_interval)))
        return out

    # -- messages ----------------------------------------------------------------

    def _ip_field(self, agent: PeerAgent) -> Optional[bytes]:
        prof = agent.profile
        if self.rng.random() >= prof.announces_ip_prob:
            return None
        kinds, weights = zip(*prof.ip_field_weights)
        kind = self.rng.choices(kinds, weights)[0]
        if kind == "invalid":
            return b"%d.%d.1.1" % (256 + self.rng.randrange(700), self.rng.randrange(256))
        if kind == "private":
            return b"192.168.%d.%d" % (self.rng.randrange(256), 1 + self.rng.randrange(254))
        if self.rng.random() < prof.stale_ip_prob:
            return b"%d.%d.%d.%d" % (
                self.rng.randrange(1, 100), self.rng.randrange(256),
                self.rng.randrange(256), 1 + self.rng.randrange(254),
            )
        return (agent.ipv6 if kind == "public_v6" else agent.ip).encode("ascii")

    def _self_ip(self, agent: PeerAgent) -> Optional[bytes]:
        prof = agent.profile
        if self.rng.random() >= prof.ext_handshake_ip_prob:
            return None
        if self.rng.random() < prof.ext_ip_exit_prob:
            exits = self.overlay.exits
            return exits[self.rng.randrange(len(exits))].ip.encode("ascii")
        return agent.ip.encode("ascii")

    def _announce(self, agent: PeerAgent, t: int, now: int) -> Emission:
        torrent = self.torrents[t]
        first = t not in agent.announced
        agent.announced.add(t)
        req = AnnounceRequest(
            infohash=torrent.infohash,
            peer_id=agent.peer_id,
            port=agent.port,
            ip_field=self._ip_field(agent),
            left=0 if agent.id % 3 == 0 else 1 << 20,
            event="started" if first else None,
        )
        tracker_ep = self.tracker.endpoint
        if agent.mode.tracker_via_tor:
            stream = self.overlay.open_stream(agent.id, tracker_ep, now)
            tapped = self.overlay.is_tapped(stream)
            # octets are only materialised where an exit tap can read them
            self.overlay.send(stream, btwire.encode_announce_request(req) if tapped else b"", now)
            resp = self.tracker.handle_announce(req, stream.exit_source, now)
            if tapped:
                body = self.overlay.reply(stream, btwire.encode_announce_response(resp), now)
                resp = btwire.parse_announce_response(body)
            self.overlay.close(stream)
            em = Emission(now, "announce", True, tracker_ep, stream.id)
        else:
            resp = self.tracker.handle_announce(req, agent.real_endpoint, now)
            em = Emission(now, "announce", False, tracker_ep)
        self._learn(agent, t, resp.peers, now)
        return em

    def _learn(self, agent: PeerAgent, t: int, peers, now: int):
        """Fill free connection slots from ``peers`` in list order.

        A slot is held from the moment a peer is picked until its connection
        ends (exponential lifetime), so later announces can add new peers.
        """
        slots = agent.connected[t]
        cap = self.max_connections
        if len(slots) >= cap:
            for ep in [ep for ep, until in slots.items() if until <= now]:
                del slots[ep]
        me = agent.real_endpoint
        via_tor = agent.mode.peers_via_tor
        listeners = self.listeners
        rng = self.rng
        for ep in peers:
            if len(slots) >= cap:
                break
            if ep in slots or ep == me:
                continue
            delay = int(rng.expovariate(1.0 / self.connect_delay_mean)) if self.connect_delay_mean > 0 else 0
            slots[ep] = now + delay + int(rng.expovariate(1.0 / self.connection_lifetime_mean))
            if via_tor or ep in listeners:
                self._tid += 1
                heapq.heappush(agent.pending, (now + delay, self._tid, t, ep))

    def _connect(self, agent: PeerAgent, t: int, ep: Endpoint, now: int) -> list[Emission]:
        torrent = self.torrents[t]
        prof = agent.profile
        listener = self.listeners.get(ep)
        stream = None
        if agent.mode.peers_via_tor:
            stream = self.overlay.open_stream(agent.id, ep, now, encrypted=agent.encrypts)
            src = stream.exit_source
            visible = listener is not None or self.overlay.is_tapped(stream)
        else:
            src = Endpoint(agent.ip, 49152 + self.rng.randrange(16384))
            visible = listener is not None
        self_ip = self._self_ip(agent) if prof.extension_protocol else None
        out = [Emission(now, "handshake", stream is not None, ep, stream.id if stream else None)]
        if not visible:
            if stream is not None:
                self.overlay.close(stream)
            return out
        bits = btwire.EXTENSION_PROTOCOL_BIT if prof.extension_protocol else 0
        if agent.dht_enabled:
            bits |= btwire.DHT_BIT
        hs = btwire.encode_handshake(Handshake(torrent.infohash, agent.peer_id, bits))
        if stream is not None:
            self.overlay.send(stream, hs, now)
            if prof.extension_protocol:
                ext = ExtendedHandshake(agent.port, self_ip, prof.version, {b"ut_metadata": 2})
                self.overlay.send(stream, btwire.encode_extended_handshake(ext), now)
        if listener is not None and listener.on_connect(src, hs, now):
            piece = btwire.encode_piece(0, 0, b"\x00" * 16)
            if stream is not None:
                self.overlay.send(stream, piece, now)
            listener.on_piece(src, torrent.infohash, piece, now)
            out.append(Emission(now, "piece", stream is not None, ep, stream.id if stream else None))
        if stream is not None:
            self.overlay.close(stream)
        return out

    def _dht_announce(self, agent: PeerAgent, t: int, now: int) -> Emission:
        self._tid += 1
        msg = btwire.KrpcMessage(
            self._tid.to_bytes(4, "big"),
            btwire.AnnouncePeerQuery(self.torrents[t].infohash, agent.port, b"tk"),
            agent.peer_id,
        )
        dgram = self.overlay.udp_send(agent.id, self.dht.endpoint, btwire.encode_krpc(msg), agent.port)
        self.dht.handle_datagram(dgram, now)
        return Emission(now, "dht_announce", False, self.dht.endpoint)

    def _http(self, agent: PeerAgent, now: int) -> Emission:
        site = agent.http_habit[self.rng.randrange(len(agent.http_habit))]
        via_tor = agent.mode is not UsageMode.NO_TOR
        if not via_tor:
            return Emission(now, "http", False, site.endpoint)
        stream = self.overlay.open_stream(agent.id, site.endpoint, now)
        request = b"GET / HTTP/1.1\r\nHost: " + site.host.encode("ascii") + b"\r\n\r\n"
        self.overlay.send(stream, request, now)
        self.overlay.close(stream)
        return Emission(now, "http", True, site.endpoint, stream.id)
