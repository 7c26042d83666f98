"""Command-line scenario runner.

    onionleak run --preset paper-defaults --seed 7 --out out/

Log verbosity comes from ``ONIONLEAK_LOG`` (DEBUG, INFO, WARNING; default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from . import analytics
from .adversary import dump_records, evaluate
from .config import PRESETS, ScenarioConfig, resolve
from .errors import ConfigInvalid, IoFailure
from .overlay import dump_observations
from .studies import dht_fp_study
from .world import build_world, gc_paused

log = logging.getLogger("onionleak")


def _json_default(obj):
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, bytes):
        return obj.hex()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, default=_json_default) + "\n"


def _sweep(adv, ledger, windows, on_conflict="collect") -> list[dict]:
    rows = []
    for w in windows:
        res = adv.link(w, on_conflict=on_conflict)
        ev = evaluate(res, ledger, (), adv.views.keys())
        rows.append({
            "window_s": w,
            "attributions": ev["attributions"],
            "intra_streams": ev["split"]["intra_streams"],
            "inter_streams": ev["split"]["inter_streams"],
            "intra_share": ev["split"]["intra_share"],
            "precision": ev["precision"],
            "conflicts": ev["conflicts"],
        })
    return rows


def simulate(cfg: ScenarioConfig) -> dict:
    """Build and run a world, attack, link and evaluate. Returns every artefact."""
    with gc_paused():
        world = build_world(cfg)
        world.run()
        adv = world.adversary
        a = cfg.attacks
        result = adv.link(a.window_s, include_unverified=a.include_unverified) if a.domino else None
        evaluation = evaluate(result, world.ledger, adv.records, adv.views.keys())
        sweep = _sweep(adv, world.ledger, a.window_sweep) if a.domino and a.window_sweep else None
        report = analytics.build_report(world, result, evaluation, sweep)
    return {"world": world, "result": result, "evaluation": evaluation, "report": report}


def write_outputs(out: Path, cfg: ScenarioConfig, run: dict) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    written = ["report.json", "evaluation.json", "deanon.ndjson"]
    adv = run["world"].adversary
    (out / "report.json").write_text(dumps(run["report"]))
    (out / "evaluation.json").write_text(dumps(run["evaluation"]))
    with (out / "deanon.ndjson").open("w") as fh:
        dump_records(adv.records, fh)
    if cfg.outputs.observations:
        with (out / "observations.ndjson").open("w") as fh:
            dump_observations(adv.log, fh)
        written.append("observations.ndjson")
    if cfg.outputs.tables:
        names = analytics.write_tables(run["report"], out / "tables")
        written.extend(f"tables/{n}" for n in names)
    return written


def run(cfg: ScenarioConfig, out: Optional[Path] = None) -> dict:
    """Execute a scenario and write its outputs under ``out`` (or the configured dir)."""
    out = Path(out if out is not None else cfg.outputs.dir)
    try:
        if cfg.study.kind == "dht_fp":
            report = dht_fp_study(cfg)
            out.mkdir(parents=True, exist_ok=True)
            (out / "report.json").write_text(dumps(report))
            return {"report": report, "written": ["report.json"]}
        result = simulate(cfg)
        result["written"] = write_outputs(out, cfg, result)
        return result
    except OSError as exc:
        raise IoFailure(f"cannot write outputs under {out}: {exc}") from exc


def _summary(res: dict) -> str:
    rep = res["report"]
    if rep.get("study") == "dht_fp":
        lines = [f"dht_fp precision={analytics_fmt(rep['precision'])}"]
        for s in rep["per_size"]:
            lines.append(
                f"  n={s['size']}: attempts={s['attempts']} claims={s['claims']} "
                f"fp_rate={analytics_fmt(s['fp_rate'])} oracle={analytics_fmt(s['oracle_fp_rate'])}"
            )
        return "\n".join(lines)
    ev = res["evaluation"]
    usage = rep["usage_mode_daily_histogram"]
    lines = [
        f"events={rep['run']['events']} streams={ev['ledger_streams']} observed={ev['observed_streams']}",
        f"records={rep['records']}",
        f"attributions={ev['attributions']} precision={analytics_fmt(ev['precision'])} "
        f"intra_share={analytics_fmt(ev['split']['intra_share'])}",
        f"tracker_only_share={analytics_fmt(usage['tracker_only_share'])} (peers={usage['unique_peers']})",
    ]
    return "\n".join(lines)


def analytics_fmt(value) -> str:
    return "N/A" if value is None else f"{value:.4f}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="onionleak", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write its outputs")
    r.add_argument("--config", type=Path, help="YAML or JSON scenario file")
    r.add_argument("--preset", choices=sorted(PRESETS), help="named base scenario")
    r.add_argument("--seed", type=int, help="override the scenario seed (unsigned 64-bit)")
    r.add_argument("--out", type=Path, help="output directory (default: outputs.dir)")
    sub.add_parser("presets", help="list preset names")
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("ONIONLEAK_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        for name in sorted(PRESETS):
            print(name)
        return 0
    try:
        overrides = {"seed": args.seed} if args.seed is not None else None
        if not args.preset and not args.config:
            raise ConfigInvalid("--config/--preset", "give a config file, a preset, or both")
        cfg = resolve(args.preset, args.config, overrides)
        res = run(cfg, args.out)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IoFailure as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    print(_summary(res))
    return 0


if __name__ == "__main__":
    sys.exit(main())
