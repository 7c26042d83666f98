import json

import pytest
import yaml

from onionleak import cli
from onionleak.config import PRESETS, ScenarioConfig, resolve
from onionleak.errors import ConfigInvalid, IoFailure

SMALL = {"seed": 9, "duration_s": 3600, "peers": 200, "torrents": 15}


def write_config(tmp_path, data, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data) if name.endswith(".yaml") else json.dumps(data))
    return path


@pytest.mark.parametrize("bad, where", [
    ({"duration_s": 0}, "duration_s"),
    ({"peers": -1}, "peers"),
    ({"usage_weights": {"tracker_only": 0.5, "content": 0.2, "peers_only": 0.0, "no_tor": 0.0}}, "usage_weights"),
    ({"relays": {"tapped_exits": 10_000}}, "relays.tapped_exits"),
    ({"attacks": {"window_s": -5}}, "attacks.window_s"),
    ({"tracker": {"no_such_knob": 1}}, "tracker.no_such_knob"),
    ({"http": {"habit_prob": 1.5}}, "http.habit_prob"),
    ({"peers": "many"}, "peers"),
])
def test_invalid_configs_name_the_field(bad, where):
    with pytest.raises(ConfigInvalid) as err:
        resolve(overrides={**SMALL, **bad})
    assert err.value.path == where


@pytest.mark.parametrize("seed", [-1, 2**64, True, 1.5])
def test_seed_must_be_unsigned_64_bit(seed):
    with pytest.raises(ConfigInvalid):
        resolve(overrides={**SMALL, "seed": seed})


def test_seed_is_mandatory(tmp_path):
    data = dict(SMALL)
    del data["seed"]
    with pytest.raises(ConfigInvalid):
        resolve(config_path=write_config(tmp_path, data))
    assert cli.main(["run", "--config", str(write_config(tmp_path, data))]) == 2


def test_exit_codes(tmp_path, capsys):
    bad = write_config(tmp_path, {**SMALL, "duration_s": 0})
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "duration_s" in capsys.readouterr().err
    missing = tmp_path / "nope.yaml"
    assert cli.main(["run", "--config", str(missing)]) == 3
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    assert cli.main(["run", "--config", str(junk)]) == 2
    assert cli.main(["run"]) == 2
    assert cli.main(["run", "--preset", "domino-study", "--seed", "-3"]) == 2


def test_unwritable_output_is_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = resolve(overrides=SMALL)
    with pytest.raises(IoFailure):
        cli.run(cfg, blocker / "out")
    conf = write_config(tmp_path, SMALL)
    assert cli.main(["run", "--config", str(conf), "--out", str(blocker / "out")]) == 3


def test_layering_file_over_preset_over_overrides(tmp_path):
    conf = write_config(tmp_path, {"peers": 123, "tracker": {"k": 7}}, "layer.json")
    cfg = resolve("domino-study", conf, {"seed": 42})
    assert cfg.seed == 42 and cfg.peers == 123 and cfg.tracker.k == 7
    assert cfg.duration_s == PRESETS["domino-study"]["duration_s"]
    assert cfg.attacks.window_sweep == PRESETS["domino-study"]["attacks"]["window_sweep"]


def test_config_round_trips_through_dict():
    cfg = resolve("paper-defaults")
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg


def test_presets_command(capsys):
    assert cli.main(["presets"]) == 0
    assert capsys.readouterr().out.split() == sorted(PRESETS)


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    conf = write_config(base, SMALL)
    outs = []
    for name in ("a", "b"):
        assert cli.main(["run", "--config", str(conf), "--out", str(base / name)]) == 0
        outs.append(base / name)
    return outs


def test_outputs_are_written(two_runs):
    out = two_runs[0]
    for name in ("report.json", "evaluation.json", "deanon.ndjson", "observations.ndjson"):
        assert (out / name).is_file(), name
    assert list((out / "tables").glob("*.csv"))
    report = json.loads((out / "report.json").read_text())
    # the full resolved configuration travels with the results
    assert ScenarioConfig.from_dict(report["config"]) == resolve(overrides=SMALL)
    for key in ("port_histogram", "torrent_size_cdf", "circuits_per_ip_cdf", "usage_mode_daily_histogram",
                "ip_occurrence_histogram", "group_distribution", "http_bt_cooccurrence_cdf"):
        assert key in report


def test_same_seed_gives_identical_bytes(two_runs):
    a, b = two_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_different_seed_changes_output(two_runs, tmp_path):
    conf = write_config(tmp_path, {**SMALL, "seed": 10})
    assert cli.main(["run", "--config", str(conf), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "observations.ndjson").read_bytes() != \
        (two_runs[0] / "observations.ndjson").read_bytes()


def test_summary_prints_na_without_attributions(tmp_path, capsys):
    conf = write_config(tmp_path, {**SMALL, "relays": {"tapped_exits": 0}})
    assert cli.main(["run", "--config", str(conf), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "precision=N/A" in out
    assert json.loads((tmp_path / "o" / "evaluation.json").read_text())["precision"] is None
