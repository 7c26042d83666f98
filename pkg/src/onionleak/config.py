"""Scenario configuration, validation and named presets."""

from __future__ import annotations

import copy
import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigInvalid, IoFailure
from .swarm import POPULAR_PORTS

WEIGHT_TOL = 1e-9


def _default_profiles():
    return [
        {"name": "utorrent", "client_tag": "-UT2210-", "version": "uTorrent 2.2.1", "weight": 0.45,
         "announces_ip_prob": 0.45, "encrypt_prob": 0.4, "dht_prob": 0.95},
        {"name": "vuze", "client_tag": "-AZ4604-", "version": "Vuze 4.6.0.4", "weight": 0.15,
         "announces_ip_prob": 0.2, "encrypt_prob": 0.3, "dht_prob": 0.8},
        {"name": "bitspirit", "client_tag": "-SP3600-", "version": "BitSpirit 3.6", "weight": 0.1,
         "announces_ip_prob": 0.5, "encrypt_prob": 0.1, "dht_prob": 0.7},
        {"name": "libtorrent", "client_tag": "-lt0F00-", "version": "libtorrent 0.15", "weight": 0.15,
         "announces_ip_prob": 0.35, "encrypt_prob": 0.2, "dht_prob": 0.9},
        {"name": "transmission", "client_tag": "-TR2130-", "version": "Transmission 2.13", "weight": 0.15,
         "announces_ip_prob": 0.05, "encrypt_prob": 0.3, "dht_prob": 0.9},
    ]


def _default_countries():
    # (share of Tor-side users, share among regular users; None = not in the baseline)
    table = {
        "US": (0.14, 0.1556), "JP": (0.13, 0.0241), "DE": (0.13, 0.0464), "FR": (0.05, 0.0417),
        "PL": (0.03, 0.0231), "IT": (0.03, 0.0333), "CA": (0.03, 0.0429), "IN": (0.02, 0.0035),
        "TW": (0.02, 0.0222), "UK": (0.02, 0.0043), "MY": (0.02, 0.0105), "CN": (0.02, None),
    }
    tor_rest = 1.0 - sum(t for t, _ in table.values())
    base_rest = 1.0 - sum(b for _, b in table.values() if b is not None)
    table["ZZ"] = (tor_rest, base_rest)
    return {cc: {"tor": round(t, 12), "baseline": None if b is None else round(b, 12)}
            for cc, (t, b) in table.items()}


def _default_ases():
    return {
        "Deutsche Telekom": {"country": "DE", "share": 0.35, "baseline": 0.0107},
        "Hansenet": {"country": "DE", "share": 0.12, "baseline": 0.0035},
        "NTT": {"country": "JP", "share": 0.3, "baseline": 0.0072},
        "TMNet": {"country": "MY", "share": 0.9, "baseline": 0.0095},
        "Telecom Italia": {"country": "IT", "share": 0.6, "baseline": 0.018},
        "AT&T": {"country": "US", "share": 0.1, "baseline": 0.0155},
        "Orange": {"country": "FR", "share": 0.3, "baseline": 0.0125},
        "Free": {"country": "FR", "share": 0.25, "baseline": 0.0089},
        "ChinaNet": {"country": "CN", "share": 0.6, "baseline": None},
        "TPNet": {"country": "PL", "share": 0.45, "baseline": 0.0101},
    }


def _default_categories():
    return {
        "Peer-to-Peer": 0.32, "File Sharing": 0.18, "Forums": 0.09, "Search": 0.1, "IT": 0.08,
        "Porn": 0.08, "Hacking": 0.05, "Social Networks": 0.03, "Blogs": 0.03, "News": 0.04,
    }


@dataclass
class TorrentSizeConfig:
    median: float = 120.0
    p_under: float = 0.9
    threshold: int = 1000
    max_size: int = 5000


@dataclass
class RelayConfig:
    exits: int = 60
    tapped_exits: int = 6
    middles: int = 240
    circuit_pool_size: int = 2
    stream_setup_latency_s: int = 0


@dataclass
class SessionConfig:
    daily_active_prob: float = 0.5
    mean_length_s: float = 7200.0
    min_length_s: int = 60


@dataclass
class TrackerConfig:
    k: int = 50
    interval_s: int = 600


@dataclass
class DhtConfig:
    k: int = 8
    stable_rounds: int = 5
    coverage: float = 2.0
    reannounce_s: int = 1800
    entry_ttl_s: int = 3600
    background_fraction: float = 0.8


@dataclass
class PeerConfig:
    torrents_per_peer: float = 1.5
    max_connections: int = 20
    connect_delay_mean_s: float = 60.0
    connection_lifetime_mean_s: float = 3600.0


@dataclass
class HttpConfig:
    habit_prob: float = 0.7
    sites: int = 300
    habit_size_mean: float = 4.0
    mean_interval_s: float = 300.0
    categories: dict = field(default_factory=_default_categories)


@dataclass
class GroupConfig:
    countries: dict = field(default_factory=_default_countries)
    ases: dict = field(default_factory=_default_ases)


@dataclass
class AttackConfig:
    inspection: bool = True
    hijack: bool = True
    dht_match: bool = True
    domino: bool = True
    window_s: int = 300
    window_sweep: list = field(default_factory=list)
    hijack_ttl_s: int = 3600
    hijack_exits: Optional[int] = None
    excluded_ports: list = field(default_factory=lambda: list(POPULAR_PORTS))
    abstain: bool = True
    crawl_cache_ttl_s: int = 1800
    include_unverified: bool = False


@dataclass
class DhtFpStudyConfig:
    sizes: list = field(default_factory=lambda: [100, 1000])
    torrents_per_size: dict = field(default_factory=lambda: {"100": 20, "1000": 2})
    seeds: int = 50
    absent_fraction: float = 0.3


@dataclass
class StudyConfig:
    kind: str = "world"
    dht_fp: DhtFpStudyConfig = field(default_factory=DhtFpStudyConfig)


@dataclass
class OutputConfig:
    dir: str = "out"
    observations: bool = True
    tables: bool = True


@dataclass
class ScenarioConfig:
    seed: int
    duration_s: int = 86400
    peers: int = 10000
    torrents: int = 500
    usage_weights: dict = field(default_factory=lambda: {
        "tracker_only": 0.72, "content": 0.28, "peers_only": 0.0, "no_tor": 0.0})
    client_profiles: list = field(default_factory=_default_profiles)
    torrent_size: TorrentSizeConfig = field(default_factory=TorrentSizeConfig)
    popular_port_mass: float = 0.1
    relays: RelayConfig = field(default_factory=RelayConfig)
    sessions: SessionConfig = field(default_factory=SessionConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    dht: DhtConfig = field(default_factory=DhtConfig)
    peer: PeerConfig = field(default_factory=PeerConfig)
    http: HttpConfig = field(default_factory=HttpConfig)
    groups: GroupConfig = field(default_factory=GroupConfig)
    attacks: AttackConfig = field(default_factory=AttackConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        cfg = _build(cls, data, "")
        validate(cfg)
        return cfg


_PROFILE_KEYS = {
    "name": str, "client_tag": str, "version": str, "weight": float, "announces_ip_prob": float,
    "ip_field_weights": dict, "stale_ip_prob": float, "extension_protocol": bool,
    "ext_handshake_ip_prob": float, "ext_ip_exit_prob": float, "encrypt_prob": float, "dht_prob": float,
}


def _check_type(value, tp, path):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _check_type(value, args[0], path)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvalid(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(path, f"expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigInvalid(path, f"expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigInvalid(path, f"expected a string, got {value!r}")
        return value
    if tp is dict and not isinstance(value, dict):
        raise ConfigInvalid(path, "expected a mapping")
    if tp is list and not isinstance(value, list):
        raise ConfigInvalid(path, "expected a list")
    return copy.deepcopy(value)


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigInvalid(prefix or "<root>", "expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigInvalid(f"{prefix}{unknown[0]}", "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        path = f"{prefix}{f.name}"
        if f.name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigInvalid(path, "required")
            continue
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, data[f.name], path + ".")
        else:
            kwargs[f.name] = _check_type(data[f.name], tp, path)
    return cls(**kwargs)


def _prob(value, path):
    if not 0.0 <= value <= 1.0:
        raise ConfigInvalid(path, f"probability out of [0, 1]: {value}")


def _weights(weights: dict, path: str, allow_none=False):
    total = 0.0
    for k, w in weights.items():
        if w is None and allow_none:
            continue
        if isinstance(w, bool) or not isinstance(w, (int, float)) or w < 0:
            raise ConfigInvalid(f"{path}.{k}", f"bad weight {w!r}")
        total += w
    if abs(total - 1.0) > WEIGHT_TOL:
        raise ConfigInvalid(path, f"weights sum to {total!r}, expected 1")


def validate(cfg: ScenarioConfig):
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigInvalid("seed", "must be an explicit unsigned 64-bit integer")
    if cfg.duration_s < 1:
        raise ConfigInvalid("duration_s", "must be >= 1")
    if cfg.peers < 0:
        raise ConfigInvalid("peers", "must be >= 0")
    if cfg.torrents < 1:
        raise ConfigInvalid("torrents", "must be >= 1")
    expected = {"tracker_only", "content", "peers_only", "no_tor"}
    if set(cfg.usage_weights) != expected:
        raise ConfigInvalid("usage_weights", f"keys must be {sorted(expected)}")
    _weights(cfg.usage_weights, "usage_weights")
    if not cfg.client_profiles:
        raise ConfigInvalid("client_profiles", "at least one profile required")
    for i, prof in enumerate(cfg.client_profiles):
        path = f"client_profiles[{i}]"
        if not isinstance(prof, dict):
            raise ConfigInvalid(path, "expected a mapping")
        for key in ("name", "client_tag", "version"):
            if key not in prof:
                raise ConfigInvalid(f"{path}.{key}", "required")
        for key, value in prof.items():
            if key not in _PROFILE_KEYS:
                raise ConfigInvalid(f"{path}.{key}", "unknown key")
            _check_type(value, _PROFILE_KEYS[key], f"{path}.{key}")
            if key.endswith("_prob"):
                _prob(value, f"{path}.{key}")
        if len(prof["client_tag"].encode("ascii", "replace")) != 8:
            raise ConfigInvalid(f"{path}.client_tag", "must be 8 ASCII characters")
        if "ip_field_weights" in prof:
            _weights(prof["ip_field_weights"], f"{path}.ip_field_weights")
    _weights({str(i): p.get("weight", 1.0) / sum(q.get("weight", 1.0) for q in cfg.client_profiles)
              for i, p in enumerate(cfg.client_profiles)}, "client_profiles")
    ts = cfg.torrent_size
    if ts.median <= 0 or ts.threshold <= ts.median:
        raise ConfigInvalid("torrent_size", "need 0 < median < threshold")
    if not 0.5 < ts.p_under < 1.0:
        raise ConfigInvalid("torrent_size.p_under", "must lie in (0.5, 1)")
    if ts.max_size < 1:
        raise ConfigInvalid("torrent_size.max_size", "must be >= 1")
    _prob(cfg.popular_port_mass, "popular_port_mass")
    r = cfg.relays
    if r.exits < 0 or r.middles < 0:
        raise ConfigInvalid("relays", "relay counts must be >= 0")
    if not 0 <= r.tapped_exits <= r.exits:
        raise ConfigInvalid("relays.tapped_exits", "must lie in [0, exits]")
    if r.circuit_pool_size < 0 or r.stream_setup_latency_s < 0:
        raise ConfigInvalid("relays", "pool size and latency must be >= 0")
    _prob(cfg.sessions.daily_active_prob, "sessions.daily_active_prob")
    if cfg.sessions.mean_length_s <= 0:
        raise ConfigInvalid("sessions.mean_length_s", "must be > 0")
    if cfg.tracker.k < 1 or cfg.tracker.interval_s < 1:
        raise ConfigInvalid("tracker", "k and interval_s must be >= 1")
    if cfg.dht.k < 1 or cfg.dht.stable_rounds < 1 or cfg.dht.coverage <= 0:
        raise ConfigInvalid("dht", "k, stable_rounds and coverage must be positive")
    _prob(cfg.dht.background_fraction, "dht.background_fraction")
    if cfg.peer.connect_delay_mean_s < 0 or cfg.peer.connection_lifetime_mean_s <= 0:
        raise ConfigInvalid("peer", "connect delay must be >= 0 and connection lifetime > 0")
    if cfg.peer.torrents_per_peer < 1:
        raise ConfigInvalid("peer.torrents_per_peer", "must be >= 1")
    _prob(cfg.http.habit_prob, "http.habit_prob")
    if cfg.http.sites < 1 or cfg.http.mean_interval_s <= 0:
        raise ConfigInvalid("http", "sites and mean_interval_s must be positive")
    _weights(cfg.http.categories, "http.categories")
    countries = cfg.groups.countries
    for cc, entry in countries.items():
        if not isinstance(entry, dict) or "tor" not in entry:
            raise ConfigInvalid(f"groups.countries.{cc}", "needs a 'tor' weight")
    _weights({cc: e["tor"] for cc, e in countries.items()}, "groups.countries")
    _weights({cc: e.get("baseline") for cc, e in countries.items()}, "groups.countries(baseline)",
             allow_none=True)
    for name, entry in cfg.groups.ases.items():
        if not isinstance(entry, dict) or entry.get("country") not in countries:
            raise ConfigInvalid(f"groups.ases.{name}.country", "must name a configured country")
        _prob(entry.get("share", 0.0), f"groups.ases.{name}.share")
    a = cfg.attacks
    if a.window_s < 0 or any(not isinstance(w, int) or w < 0 for w in a.window_sweep):
        raise ConfigInvalid("attacks.window_s", "windows must be non-negative integers")
    if a.hijack_exits is not None and not 0 <= a.hijack_exits <= r.tapped_exits:
        raise ConfigInvalid("attacks.hijack_exits", "must lie in [0, relays.tapped_exits]")
    if cfg.study.kind not in ("world", "dht_fp"):
        raise ConfigInvalid("study.kind", "must be 'world' or 'dht_fp'")
    fp = cfg.study.dht_fp
    if fp.seeds < 1 or not fp.sizes:
        raise ConfigInvalid("study.dht_fp", "need seeds >= 1 and at least one size")
    _prob(fp.absent_fraction, "study.dht_fp.absent_fraction")


# -- presets ---------------------------------------------------------------------

def _scaled_dht(scale: float) -> list:
    profiles = _default_profiles()
    for prof in profiles:
        prof["dht_prob"] = round(prof["dht_prob"] * scale, 6)
    return profiles


PRESETS: dict[str, dict] = {
    "paper-defaults": {
        "seed": 2011,
        "duration_s": 86400,
        "peers": 10000,
        "torrents": 500,
    },
    "dht-fp-study": {
        "seed": 2011,
        "popular_port_mass": 0.0,
        "study": {"kind": "dht_fp", "dht_fp": {
            "sizes": [100, 300, 1000],
            "torrents_per_size": {"100": 20, "300": 6, "1000": 2},
            "seeds": 50,
            "absent_fraction": 0.3,
        }},
        "outputs": {"observations": False},
    },
    "domino-study": {
        "seed": 2011,
        "duration_s": 43200,
        "peers": 3000,
        "torrents": 150,
        # fewer DHT clients leave more circuits to be reached by linking
        "client_profiles": _scaled_dht(0.3),
        "attacks": {"window_s": 300, "window_sweep": [0, 60, 120, 300, 600, 1200]},
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigInvalid("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def load_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) if str(path).endswith((".yaml", ".yml")) else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(str(path), f"not parseable: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigInvalid("<root>", "config file must hold a mapping")
    return data


def resolve(preset_name: Optional[str] = None, config_path=None, overrides: Optional[dict] = None) -> ScenarioConfig:
    """Preset, then file, then explicit overrides; later layers win."""
    data: dict = {}
    if preset_name:
        data = preset(preset_name)
    if config_path:
        data = deep_merge(data, load_file(config_path))
    if overrides:
        data = deep_merge(data, overrides)
    if "seed" not in data:
        raise ConfigInvalid("seed", "required (no wall-clock default)")
    return ScenarioConfig.from_dict(data)
