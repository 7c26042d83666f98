"""Scenario assembly and the discrete-event loop.

``build_world`` turns a :class:`ScenarioConfig` into relays, a tracker, a
DHT, torrents with background populations, peer agents with sessions, and a
malicious exit tapping a subset of exit relays. ``World.run`` advances the
agents in time order; ties break on insertion order so a seed fixes the run.
"""

from __future__ import annotations

import contextlib
import gc
import heapq
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .adversary import DhtClient, MaliciousExit
from .btwire import Endpoint, InfoHash, PeerId
from .config import ScenarioConfig
from .overlay import GroundTruthLedger, Overlay, Relay
from .swarm import (
    AddressAllocator,
    ClientProfile,
    Dht,
    HttpSite,
    PeerAgent,
    Swarm,
    Torrent,
    TorrentSizeDistribution,
    Tracker,
    UsageMode,
    draw_listen_ports,
)

log = logging.getLogger(__name__)

DAY_S = 86400
TRACKER_ENDPOINT = Endpoint("62.210.16.61", 80)
DHT_ENDPOINT = Endpoint("87.98.162.88", 6881)
LISTENER_ENDPOINT = Endpoint("203.0.113.66", 42424)

_START, _TICK = 0, 1


@contextlib.contextmanager
def gc_paused():
    """Suspend the cyclic collector; the event loop allocates millions of
    acyclic objects and full collections would dominate the run time."""
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def make_profile(entry: dict) -> ClientProfile:
    kw = dict(entry)
    kw["client_tag"] = kw["client_tag"].encode("ascii")
    if "ip_field_weights" in kw:
        kw["ip_field_weights"] = tuple(sorted(kw["ip_field_weights"].items()))
    return ClientProfile(**kw)


@dataclass
class World:
    config: ScenarioConfig
    overlay: Overlay
    ledger: GroundTruthLedger
    tracker: Tracker
    dht: Dht
    torrents: list
    agents: list
    sites: list
    swarm: Swarm
    adversary: MaliciousExit
    tapped_exits: list
    rng: random.Random
    emissions: Counter = field(default_factory=Counter)
    events: int = 0

    # public labels an analyst could look up (geo database, URL categories)
    def ip_labels(self) -> dict:
        out = {}
        for a in self.agents:
            out[a.ip] = (a.country, a.asn)
            out[a.ipv6] = (a.country, a.asn)
        return out

    def site_categories(self) -> dict:
        return {s.endpoint: s.category for s in self.sites}

    def run(self) -> "World":
        with gc_paused():
            return self._run()

    def _run(self) -> "World":
        duration = self.config.duration_s
        swarm = self.swarm
        agents = self.agents
        heap = []
        seq = 0
        for a in agents:
            for start, end in a.sessions:
                heap.append((start, seq, a.id, _START, end))
                seq += 1
        heapq.heapify(heap)
        emissions = self.emissions
        events = 0
        while heap:
            now, _, aid, kind, end = heapq.heappop(heap)
            if now >= duration:
                break
            events += 1
            agent = agents[aid]
            if kind == _START:
                swarm.start_session(agent, now, end)
            else:
                for em in swarm.peer_tick(agent, now):
                    emissions[(em.kind, em.via_tor)] += 1
            wake = swarm.next_wake(agent)
            if wake is not None:
                seq += 1
                heapq.heappush(heap, (max(wake, now), seq, aid, _TICK, 0))
        self.events = events
        log.info("simulated %d events, %d ledger streams", events, len(self.ledger))
        return self


def _seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def _weighted_index(rng: random.Random, weights) -> int:
    return rng.choices(range(len(weights)), weights)[0]


def build_world(cfg: ScenarioConfig) -> World:
    s = _seeds(cfg.seed, 8)
    pop_np = np.random.default_rng(s[0])
    pop = random.Random(s[1])
    ledger = GroundTruthLedger()

    relay_ips = AddressAllocator("171.25.0.1")
    relays = [Relay(i, relay_ips.take(), i < cfg.relays.exits)
              for i in range(cfg.relays.exits + cfg.relays.middles)]
    overlay = Overlay(relays, random.Random(s[2]), ledger, cfg.relays.circuit_pool_size,
                      cfg.relays.stream_setup_latency_s)
    tracker = Tracker(TRACKER_ENDPOINT, np.random.default_rng(s[3]), cfg.tracker.k, cfg.tracker.interval_s)
    dht = Dht(np.random.default_rng(s[4]), cfg.dht.k, cfg.dht.stable_rounds, entry_ttl=cfg.dht.entry_ttl_s,
              coverage=cfg.dht.coverage, endpoint=DHT_ENDPOINT)

    # agents first, so background populations can fill torrents up to their size
    profiles = [make_profile(p) for p in cfg.client_profiles]
    p_weights = [p.weight for p in profiles]
    modes = [UsageMode(k) for k in sorted(cfg.usage_weights)]
    m_weights = [cfg.usage_weights[m.value] for m in modes]
    sizes = TorrentSizeDistribution(**vars(cfg.torrent_size)).sample(pop_np, cfg.torrents)
    size_weights = sizes / sizes.sum()
    ports = draw_listen_ports(pop_np, cfg.peers, cfg.popular_port_mass)

    countries = sorted(cfg.groups.countries)
    c_weights = [cfg.groups.countries[c]["tor"] for c in countries]
    ases_by_cc: dict[str, list] = {}
    for name in sorted(cfg.groups.ases):
        entry = cfg.groups.ases[name]
        ases_by_cc.setdefault(entry["country"], []).append((name, entry.get("share", 0.0)))

    site_ips = AddressAllocator("93.184.0.1")
    cats = sorted(cfg.http.categories)
    cat_w = [cfg.http.categories[c] for c in cats]
    sites = [HttpSite(Endpoint(site_ips.take(), 80), f"site{i}.example", cats[_weighted_index(pop, cat_w)])
             for i in range(cfg.http.sites)]

    agent_ips = AddressAllocator("24.0.0.1")
    agents = []
    n_days = math.ceil(cfg.duration_s / DAY_S)
    extra = max(0.0, cfg.peer.torrents_per_peer - 1.0)
    for i in range(cfg.peers):
        prof = profiles[_weighted_index(pop, p_weights)]
        mode = modes[_weighted_index(pop, m_weights)]
        n_t = min(cfg.torrents, 1 + int(pop_np.poisson(extra)))
        torrents = tuple(sorted(int(t) for t in pop_np.choice(cfg.torrents, size=n_t, replace=False, p=size_weights)))
        habit = ()
        if pop.random() < cfg.http.habit_prob:
            k = 1 + int(pop_np.poisson(max(0.0, cfg.http.habit_size_mean - 1)))
            habit = tuple(pop.sample(sites, min(k, len(sites))))
        cc = countries[_weighted_index(pop, c_weights)]
        asn = f"other-{cc}"
        u = pop.random()
        for name, share in ases_by_cc.get(cc, ()):
            if u < share:
                asn = name
                break
            u -= share
        suffix = pop.randbytes(12)
        agent = PeerAgent(
            id=i,
            ip=agent_ips.take(),
            ipv6=f"2001:db8:{i >> 16:x}:{i & 0xFFFF:x}::1",
            port=int(ports[i]),
            peer_id=PeerId.build(prof.client_tag, suffix),
            mode=mode,
            profile=prof,
            torrents=torrents,
            dht_enabled=pop.random() < prof.dht_prob,
            encrypts=pop.random() < prof.encrypt_prob,
            http_habit=habit,
            country=cc,
            asn=asn,
        )
        prev_end = -1
        for d in range(n_days):
            if pop.random() >= cfg.sessions.daily_active_prob:
                continue
            start = max(d * DAY_S + pop.randrange(DAY_S), prev_end + 1)
            length = max(cfg.sessions.min_length_s, int(pop.expovariate(1.0 / cfg.sessions.mean_length_s)))
            end = min(start + length, cfg.duration_s)
            if start < end:
                agent.sessions.append((start, end))
                prev_end = end
        overlay.register_client(i, agent.ip, (agent.ipv6,))
        agents.append(agent)

    members = Counter(t for a in agents for t in a.torrents)
    bg_ips = AddressAllocator("80.0.0.1")
    torrents = []
    for t in range(cfg.torrents):
        n_bg = max(0, int(sizes[t]) - members[t])
        bg_ports = draw_listen_ports(pop_np, n_bg, cfg.popular_port_mass)
        background = [Endpoint(bg_ips.take(), int(p)) for p in bg_ports]
        in_dht = pop_np.random(n_bg) < cfg.dht.background_fraction
        bg_dht = [ep for ep, hit in zip(background, in_dht) if hit]
        ih = InfoHash(pop.randbytes(20))
        torrents.append(Torrent(t, ih, int(sizes[t]), background, bg_dht))
        tracker.add_torrent(ih, background)
        dht.add_torrent(ih, bg_dht)

    swarm = Swarm(overlay, tracker, dht, torrents, random.Random(s[5]), cfg.peer.max_connections,
                  cfg.peer.connect_delay_mean_s, cfg.http.mean_interval_s, cfg.dht.reannounce_s,
                  cfg.peer.connection_lifetime_mean_s)

    exits = overlay.exits
    adv_rng = random.Random(s[6])
    tapped = sorted(adv_rng.sample(range(len(exits)), cfg.relays.tapped_exits))
    tapped_ids = [exits[i].relay_id for i in tapped]
    a = cfg.attacks
    hijack_exits = None if a.hijack_exits is None else set(tapped_ids[: a.hijack_exits])
    adversary = MaliciousExit(
        overlay.exit_ips, LISTENER_ENDPOINT, DhtClient(dht),
        inspection=a.inspection, hijack=a.hijack, dht_match=a.dht_match,
        hijack_exits=hijack_exits, hijack_ttl=a.hijack_ttl_s, excluded_ports=a.excluded_ports,
        abstain=a.abstain, crawl_cache_ttl=a.crawl_cache_ttl_s, keep_log=cfg.outputs.observations,
    )
    for rid in tapped_ids:
        overlay.tap(rid, adversary.observe)
    if a.hijack:
        swarm.listeners[LISTENER_ENDPOINT] = adversary
    log.info("world: %d agents, %d torrents, %d relays, tapped exits %s",
             len(agents), len(torrents), len(relays), tapped_ids)
    return World(cfg, overlay, ledger, tracker, dht, torrents, agents, sites, swarm, adversary,
                 tapped_ids, random.Random(s[7]))
