"""Scoring attack output against the simulator's sealed ground truth.

This is the only adversary-side module that touches a
:class:`~onionleak.overlay.GroundTruthLedger`; the attacks themselves never
receive one.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Optional

from .domino import DominoResult
from .records import DeanonRecord, Method


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def record_is_correct(record: DeanonRecord, ledger) -> Optional[bool]:
    """True when the claimed IP belongs to the client behind the record's streams."""
    clients = {ledger.client_of_stream(s) for s in record.supporting_streams}
    clients.discard(None)
    if not clients:
        return None
    return all(record.claimed_ip in ledger.ips_of_client(c) for c in clients)


def evaluate(
    result: Optional[DominoResult],
    ledger,
    records: Iterable[DeanonRecord] = (),
    observed_streams: Iterable[int] = (),
) -> dict:
    """Per-method precision/recall, record precision, and the intra/inter split.

    Precision is correct attributions over attributions (None when there are
    none). Recall is taken over the streams the taps observed, and over every
    stream in the ledger.
    """
    attributions = result.attributions if result is not None else {}
    observed = set(observed_streams)
    all_streams = len(ledger)

    by_method = defaultdict(lambda: [0, 0])
    correct_total = 0
    for sid, att in attributions.items():
        client = ledger.client_of_stream(sid)
        ok = client is not None and att.ip in ledger.ips_of_client(client)
        by_method[att.method][0] += 1
        by_method[att.method][1] += ok
        correct_total += ok

    methods = {}
    for m in Method:
        n, ok = by_method.get(m, (0, 0))
        methods[m.value] = {
            "attributions": n,
            "correct": ok,
            "precision": _ratio(ok, n),
            "recall_observed": _ratio(ok, len(observed)),
        }

    rec_stats = defaultdict(lambda: {"records": 0, "correct": 0, "unknown": 0, "unique_ips": set()})
    for rec in records:
        s = rec_stats[rec.method]
        s["records"] += 1
        s["unique_ips"].add(rec.claimed_ip)
        verdict = record_is_correct(rec, ledger)
        if verdict is None:
            s["unknown"] += 1
        else:
            s["correct"] += verdict
    record_report = {}
    for m in Method:
        if not m.direct:
            continue
        s = rec_stats.get(m, {"records": 0, "correct": 0, "unknown": 0, "unique_ips": set()})
        record_report[m.value] = {
            "records": s["records"],
            "correct": s["correct"],
            "unknown": s["unknown"],
            "unique_ips": len(s["unique_ips"]),
            "precision": _ratio(s["correct"], s["records"] - s["unknown"]),
        }

    # intra recall: observed streams sharing a circuit with a directly claimed
    # stream; circuits whose direct claims disagree are reported as conflicts instead
    intra_universe = set()
    if result is not None:
        direct_circuits = {cid for cid, (_, origin) in result.circuits.items() if origin == "direct"}
        contested = {ledger.circuit_of_stream(sid) for sid in result.conflicts}
        for sid in observed:
            cid = ledger.circuit_of_stream(sid)
            if cid in direct_circuits and cid not in contested:
                intra_universe.add(sid)
    intra_hit = sum(1 for s in intra_universe if s in attributions)

    split = result.split() if result is not None else {
        "intra_streams": 0, "inter_streams": 0, "intra_share": None, "inter_share": None,
    }
    return {
        "attributions": len(attributions),
        "correct": correct_total,
        "precision": _ratio(correct_total, len(attributions)),
        "recall_observed": _ratio(correct_total, len(observed)),
        "recall_all_streams": _ratio(correct_total, all_streams),
        "observed_streams": len(observed),
        "ledger_streams": all_streams,
        "intra_recall": _ratio(intra_hit, len(intra_universe)),
        "conflicts": len(result.conflicts) if result is not None else 0,
        "rejected_links": result.rejected_links if result is not None else 0,
        "methods": methods,
        "records": record_report,
        "split": split,
    }


def fmt(value: Optional[float]) -> str:
    return "N/A" if value is None else f"{value:.4f}"
