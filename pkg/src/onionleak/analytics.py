"""Post-run statistics: distributions, CDFs, usage proportions and label profiling.

Everything here is a pure function of run outputs. Counts are merged with
sorted keys so partitioned evaluation gives byte-identical results.
"""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .adversary import records as rec_kinds
from .swarm import PORT_HIGH, PORT_LOW, port_uniformity

DAY_S = 86400
MISSING = "-"


# -- generic shapes ------------------------------------------------------------

def cdf(values: Iterable) -> list[tuple]:
    """Empirical CDF as ``(x, P[X <= x])`` at each distinct value."""
    counts = Counter(values)
    total = sum(counts.values())
    out = []
    running = 0
    for x in sorted(counts):
        running += counts[x]
        out.append((x, running / total))
    if out:
        out[-1] = (out[-1][0], 1.0)
    return out


def cdf_at(points: list[tuple], x) -> float:
    """Evaluate a step CDF produced by :func:`cdf`."""
    value = 0.0
    for px, p in points:
        if px > x:
            break
        value = p
    return value


def histogram(values: Iterable) -> dict:
    counts = Counter(values)
    return {k: counts[k] for k in sorted(counts)}


def merge_counts(parts: Iterable[Mapping]) -> dict:
    """Deterministic merge of partial count maps."""
    total = Counter()
    for part in parts:
        total.update(part)
    return {k: total[k] for k in sorted(total)}


# -- swarm shapes --------------------------------------------------------------

def port_histogram(ports, bins: int = 64) -> dict:
    ports = list(ports)
    width = (PORT_HIGH - PORT_LOW + 1) // bins
    in_range = [p for p in ports if PORT_LOW <= p <= PORT_HIGH]
    if not in_range:
        return {"bin_width": width, "low": PORT_LOW, "counts": [0] * bins, "total": 0,
                "below_range": len(ports), "chi2": None, "p_value": None}
    stat, p, counts = port_uniformity(in_range, bins)
    return {
        "bin_width": width,
        "low": PORT_LOW,
        "counts": [int(c) for c in counts],
        "total": len(in_range),
        "below_range": len(ports) - len(in_range),
        "chi2": stat,
        "p_value": p,
    }


def torrent_size_cdf(sizes, threshold: int = 1000) -> dict:
    sizes = [int(s) for s in sizes]
    under = sum(1 for s in sizes if s < threshold)
    return {
        "cdf": cdf(sizes),
        "threshold": threshold,
        "fraction_below": under / len(sizes) if sizes else None,
    }


# -- attribution shapes --------------------------------------------------------

def per_ip_counts(attributions: Mapping) -> tuple[dict, dict]:
    """Circuits and streams attributed to each IP."""
    circuits = defaultdict(set)
    streams = Counter()
    for att in attributions.values():
        circuits[att.ip].add(att.circuit_id)
        streams[att.ip] += 1
    return {ip: len(c) for ip, c in sorted(circuits.items())}, dict(sorted(streams.items()))


def unique_ips_over_time(records, duration: int, bucket: int = 3600) -> list[tuple]:
    """Cumulative count of distinct claimed IPs at the end of each bucket."""
    first_seen = {}
    for r in sorted(records, key=lambda r: r.time):
        first_seen.setdefault(r.claimed_ip, r.time)
    times = sorted(first_seen.values())
    out = []
    i = 0
    for end in range(bucket, duration + bucket, bucket):
        while i < len(times) and times[i] < end:
            i += 1
        out.append((min(end, duration), i))
    return out


# -- usage modes ---------------------------------------------------------------

def usage_mode_estimate(connections, day_s: int = DAY_S) -> dict:
    """Tracker-only versus content share among hijacked peers, per day.

    Peers are counted once per day by peer id. A peer that connected back
    from a non-exit address uses the overlay only for the tracker; one that
    arrived through an exit carries its content over the overlay too. The
    overall estimate is the mean of the daily shares.
    """
    per_day: dict[int, dict] = defaultdict(dict)
    for c in connections:
        day = c.time // day_s
        seen = per_day[day]
        # tracker-only wins if a peer was ever seen outside the overlay
        seen[c.peer_id] = seen.get(c.peer_id, False) or not c.tor_routed
    daily = []
    for day in sorted(per_day):
        flags = per_day[day].values()
        tracker_only = sum(1 for f in flags if f)
        n = len(per_day[day])
        daily.append({
            "day": day,
            "peers": n,
            "tracker_only": tracker_only,
            "content": n - tracker_only,
            "tracker_only_share": tracker_only / n,
        })
    shares = [d["tracker_only_share"] for d in daily]
    return {
        "daily": daily,
        "unique_peers": len({pid for d in per_day.values() for pid in d}),
        "tracker_only_share": sum(shares) / len(shares) if shares else None,
    }


# -- returning users -----------------------------------------------------------

def returning_ips(sightings: Iterable[tuple], spacing: int = DAY_S) -> dict:
    """Occurrences per IP, counting a sighting only when at least ``spacing``
    seconds have passed since the last counted one.

    ``sightings`` holds ``(ip, time)`` pairs.
    """
    times = defaultdict(list)
    for ip, t in sightings:
        times[ip].append(t)
    per_ip = {}
    for ip in sorted(times):
        ts = sorted(times[ip])
        last = ts[0]
        n = 1
        for t in ts[1:]:
            if t - last >= spacing:
                n += 1
                last = t
        per_ip[ip] = n
    return {"per_ip": per_ip, "histogram": histogram(per_ip.values())}


# -- groups --------------------------------------------------------------------

def group_distribution(ips: Iterable[str], labels: Mapping, level: int = 0) -> dict:
    """Count distinct IPs per group label (``level`` 0 = country, 1 = AS)."""
    counts = Counter()
    for ip in set(ips):
        lab = labels.get(ip)
        counts[lab[level] if lab else "unknown"] += 1
    return {k: counts[k] for k in sorted(counts)}


def over_representation(group_counts: Mapping, baseline: Mapping) -> dict:
    """Share of a group among overlay users divided by its baseline share.

    Groups with no baseline entry (or a ``None`` one) are reported as ``"-"``.
    """
    total = sum(group_counts.values())
    base_total = sum(v for v in baseline.values() if v is not None)
    out = {}
    for group in sorted(group_counts):
        base = baseline.get(group)
        if base is None or base <= 0 or total == 0 or base_total <= 0:
            out[group] = MISSING
            continue
        out[group] = (group_counts[group] / total) / (base / base_total)
    return out


# -- HTTP profiling ------------------------------------------------------------

def _http_streams(attributions: Mapping, views: Mapping):
    for sid in sorted(attributions):
        view = views.get(sid)
        if view is not None and rec_kinds.HTTP in view.kinds:
            yield sid, view


def http_category_histogram(attributions: Mapping, views: Mapping, categories: Mapping,
                            labels: Mapping, level: int = 0) -> dict:
    """Per group, the categories of HTTP destinations reached by attributed streams."""
    out: dict = defaultdict(Counter)
    for sid, view in _http_streams(attributions, views):
        lab = labels.get(attributions[sid].ip)
        group = lab[level] if lab else "unknown"
        out[group][categories.get(view.destination, "unclassified")] += 1
    return {g: dict(sorted(c.items())) for g, c in sorted(out.items())}


def cooccurrence_cdf(attributions: Mapping, views: Mapping) -> dict:
    """CDF, over compromised IPs, of the HTTP streams attributed to each."""
    per_ip = Counter({a.ip: 0 for a in attributions.values()})
    for sid, _ in _http_streams(attributions, views):
        per_ip[attributions[sid].ip] += 1
    n = len(per_ip)
    with_http = sum(1 for v in per_ip.values() if v >= 1)
    return {
        "cdf": cdf(per_ip.values()),
        "compromised_ips": n,
        "share_with_http": with_http / n if n else None,
    }


# -- report --------------------------------------------------------------------

def build_report(world, result, evaluation: Optional[dict] = None, window_sweep=None) -> dict:
    """Assemble every figure-level statistic for one finished run."""
    cfg = world.config
    adv = world.adversary
    records = adv.records
    attributions = result.attributions if result is not None else {}
    labels = world.ip_labels()
    views = adv.views

    seen_ports = {}
    for v in views.values():
        if v.peer_id is not None and v.listen_port is not None:
            seen_ports.setdefault(bytes(v.peer_id), v.listen_port)
    circuits_per_ip, streams_per_ip = per_ip_counts(attributions)
    compromised = sorted({r.claimed_ip for r in records if r.verified} | {a.ip for a in attributions.values()})

    countries = group_distribution(compromised, labels, 0)
    ases = group_distribution(compromised, labels, 1)
    c_base = {k: v.get("baseline") for k, v in cfg.groups.countries.items()}
    a_base = {k: v.get("baseline") for k, v in cfg.groups.ases.items()}

    report = {
        "config": cfg.to_dict(),
        "run": {
            "events": world.events,
            "ledger_streams": len(world.ledger),
            "tapped_exits": list(world.tapped_exits),
            "emissions": {f"{k}:{'tor' if via else 'direct'}": n for (k, via), n in sorted(world.emissions.items())},
            "observations": len(adv.log),
            "hijack_rewrites": adv.hijack.rewrites,
            "hijack_connections": len(adv.hijack.connections),
            "dht_outcomes": dict(sorted(adv.matcher.outcomes.items())) if adv.matcher else {},
            "dht_crawls": adv.matcher.crawls if adv.matcher else 0,
            "ip_field_classes": adv.tally.as_dict(),
        },
        "records": histogram(r.method.value for r in records),
        "port_histogram": port_histogram(seen_ports.values()),
        "torrent_size_cdf": torrent_size_cdf(t.size for t in world.torrents),
        "circuits_per_ip_cdf": cdf(circuits_per_ip.values()),
        "streams_per_ip_cdf": cdf(streams_per_ip.values()),
        "usage_mode_daily_histogram": usage_mode_estimate(adv.hijack.connections),
        "unique_ips_over_time": unique_ips_over_time(records, cfg.duration_s),
        "ip_occurrence_histogram": returning_ips((r.claimed_ip, r.time) for r in records)["histogram"],
        "group_distribution": {
            "country": countries,
            "country_over_representation": over_representation(countries, c_base),
            "as": ases,
            "as_over_representation": over_representation(ases, a_base),
        },
        "http_category_histogram": http_category_histogram(attributions, views, world.site_categories(), labels),
        "http_bt_cooccurrence_cdf": cooccurrence_cdf(attributions, views),
    }
    if evaluation is not None:
        report["evaluation"] = evaluation
    if window_sweep:
        report["window_sweep"] = window_sweep
    return report


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def write_tables(report: dict, directory) -> list[str]:
    """One flat CSV per figure; returns the file names written."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ph = report["port_histogram"]
    tables = {
        "port_histogram.csv": (["bin_start", "bin_end", "count"],
                               [(ph["low"] + i * ph["bin_width"], ph["low"] + (i + 1) * ph["bin_width"] - 1, c)
                                for i, c in enumerate(ph["counts"])]),
        "torrent_size_cdf.csv": (["size", "cdf"], report["torrent_size_cdf"]["cdf"]),
        "circuits_per_ip_cdf.csv": (["circuits", "cdf"], report["circuits_per_ip_cdf"]),
        "streams_per_ip_cdf.csv": (["streams", "cdf"], report["streams_per_ip_cdf"]),
        "usage_mode_daily.csv": (["day", "peers", "tracker_only", "content", "tracker_only_share"],
                                 [(d["day"], d["peers"], d["tracker_only"], d["content"], d["tracker_only_share"])
                                  for d in report["usage_mode_daily_histogram"]["daily"]]),
        "unique_ips_over_time.csv": (["time_s", "unique_ips"], report["unique_ips_over_time"]),
        "ip_occurrences.csv": (["occurrences", "ips"], sorted(report["ip_occurrence_histogram"].items())),
        "group_country.csv": (["country", "ips", "over_representation"],
                              [(g, n, report["group_distribution"]["country_over_representation"][g])
                               for g, n in report["group_distribution"]["country"].items()]),
        "group_as.csv": (["as", "ips", "over_representation"],
                         [(g, n, report["group_distribution"]["as_over_representation"][g])
                          for g, n in report["group_distribution"]["as"].items()]),
        "http_categories.csv": (["group", "category", "streams"],
                                [(g, c, n) for g, cats in report["http_category_histogram"].items()
                                 for c, n in cats.items()]),
        "http_bt_cooccurrence_cdf.csv": (["http_streams", "cdf"], report["http_bt_cooccurrence_cdf"]["cdf"]),
    }
    if "window_sweep" in report:
        tables["window_sweep.csv"] = (
            ["window_s", "attributions", "intra_streams", "inter_streams", "intra_share", "precision"],
            [(w["window_s"], w["attributions"], w["intra_streams"], w["inter_streams"], w["intra_share"],
              w["precision"]) for w in report["window_sweep"]],
        )
    for name, (header, rows) in tables.items():
        _write_csv(d / name, header, rows)
    return sorted(tables)
