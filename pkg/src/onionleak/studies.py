"""Stand-alone studies that do not need the full event loop."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .adversary import DhtClient, DhtMatcher
from .adversary.dht_match import MATCH
from .btwire import Endpoint, InfoHash
from .config import ScenarioConfig
from .swarm import PORT_HIGH, PORT_LOW, AddressAllocator, Dht, draw_listen_ports


def collision_fp_probability(store_ports, excluded=frozenset()) -> float:
    """Chance that a victim absent from the DHT, with a uniformly drawn
    eligible port, meets exactly one stored endpoint on that port.

    Computed by enumerating the stored port multiset.
    """
    counts = Counter(p for p in store_ports if p not in excluded)
    eligible = (PORT_HIGH - PORT_LOW + 1) - sum(1 for p in excluded if PORT_LOW <= p <= PORT_HIGH)
    singletons = sum(1 for c in counts.values() if c == 1)
    return singletons / eligible


@dataclass
class SizeStats:
    size: int
    torrents: int = 0
    attempts: int = 0
    claims: int = 0
    correct: int = 0
    false_positives: int = 0
    abstained: int = 0
    oracle_fp: float = 0.0

    def as_dict(self) -> dict:
        return {
            "size": self.size,
            "torrents": self.torrents,
            "attempts": self.attempts,
            "claims": self.claims,
            "correct": self.correct,
            "false_positives": self.false_positives,
            "abstained": self.abstained,
            "precision": self.correct / self.claims if self.claims else None,
            "fp_rate": self.false_positives / self.attempts if self.attempts else None,
            "oracle_fp_rate": self.oracle_fp / self.attempts if self.attempts else None,
        }


def dht_fp_study(cfg: ScenarioConfig) -> dict:
    """Port-matching precision and false-positive rate against the oracle.

    For each seed and torrent size, build a swarm, leave a share of members
    out of the DHT, crawl once, and try to de-anonymize every member from its
    listening port alone.
    """
    study = cfg.study.dht_fp
    excluded = frozenset(cfg.attacks.excluded_ports)
    seeds = np.random.SeedSequence(cfg.seed).spawn(study.seeds)
    stats = {n: SizeStats(n) for n in study.sizes}
    for child in seeds:
        rng = np.random.default_rng(child)
        dht = Dht(np.random.default_rng(rng.integers(2**63)), cfg.dht.k, cfg.dht.stable_rounds,
                  coverage=cfg.dht.coverage)
        matcher = DhtMatcher(DhtClient(dht), (), excluded, abstain=cfg.attacks.abstain)
        ips = AddressAllocator("100.64.0.1")
        for n in study.sizes:
            reps = int(study.torrents_per_size.get(str(n), 1))
            st = stats[n]
            for _ in range(reps):
                ih = InfoHash(rng.bytes(20))
                members = [Endpoint(ip, int(p)) for ip, p in
                           zip(ips.take_many(n), draw_listen_ports(rng, n, cfg.popular_port_mass))]
                in_dht = rng.random(n) >= study.absent_fraction
                stored = [ep for ep, hit in zip(members, in_dht) if hit]
                dht.add_torrent(ih, stored)
                st.torrents += 1
                fp_absent = collision_fp_probability((ep.port for ep in stored), excluded)
                for ep, present in zip(members, in_dht):
                    if ep.port in excluded:
                        continue
                    st.attempts += 1
                    if not present:
                        st.oracle_fp += fp_absent
                    outcome, record = matcher.dht_match(ih, ep.port, 0)
                    if outcome == MATCH:
                        st.claims += 1
                        if record.claimed_ip == ep.ip:
                            st.correct += 1
                        else:
                            st.false_positives += 1
                    elif outcome != "no_candidate":
                        st.abstained += 1
    per_size = [stats[n].as_dict() for n in study.sizes]
    claims = sum(s.claims for s in stats.values())
    correct = sum(s.correct for s in stats.values())
    return {
        "study": "dht_fp",
        "config": cfg.to_dict(),
        "per_size": per_size,
        "precision": correct / claims if claims else None,
    }
