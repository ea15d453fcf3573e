import json

import pytest

from tracekit import cli, sim


def _write_config(tmp_path, **kw):
    base = dict(
        n_agents=8,
        adoption_rate=1.0,
        sim_days=4,
        arena_size_m=25.0,
        infection_prob_per_minute=0.01,
        rng_seed=3,
    )
    base.update(kw)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(base))
    return path


def test_simulate_writes_outputs(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--checks", "A3,C2"])
    assert code == 0
    for name in ("events.ndjson", "report.json", "verdicts.json", "manifest.json"):
        assert (out / name).exists()
    verdicts = json.loads((out / "verdicts.json").read_text())
    assert [v["attack"] for v in verdicts] == ["A3", "C2"]
    assert all(v["outcome"] == "Defended" for v in verdicts)
    printed = capsys.readouterr().out
    assert "A3: Defended" in printed


def test_simulate_reproducible_manifest(tmp_path):
    cfg = _write_config(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(out),
                         "--checks", "C2"]) == 0
        outs.append(json.loads((out / "manifest.json").read_text()))
    assert outs[0]["outputs"] == outs[1]["outputs"]


def test_simulate_seed_override(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--seed", "9", "--checks", "C2"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 9
    assert manifest["config"]["rng_seed"] == 9


def test_simulate_bad_config(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text('{"adoption_rate": 2.0}')
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path / "o")]) == 1


def test_simulate_unknown_check(tmp_path):
    cfg = _write_config(tmp_path)
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"),
                     "--checks", "ZZ"]) == 1


def test_mutant_server_fails_checks(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--checks", "A3", "--mutant-server", "peer_logging"])
    assert code == 2
    verdicts = json.loads((out / "verdicts.json").read_text())
    assert verdicts[0]["outcome"] == "Vulnerable"


def test_mutant_ids_fail_linkage(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--checks", "MA3", "--mutant-ids"])
    assert code == 2


def test_report_command(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    cli.main(["simulate", "--config", str(cfg), "--out", str(out), "--checks", "C2"])
    capsys.readouterr()
    code = cli.main(["report", str(out / "events.ndjson"),
                     "--verdicts", str(out / "verdicts.json")])
    assert code == 0
    printed = capsys.readouterr().out
    assert "event counts:" in printed
    assert "protection measure compliance:" in printed
    assert "tpr=" in printed


def test_report_downgrades_on_vulnerable(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    cli.main(["simulate", "--config", str(cfg), "--out", str(out),
              "--checks", "C2", "--mutant-server", "no_tan"])
    capsys.readouterr()
    cli.main(["report", str(out / "events.ndjson"),
              "--verdicts", str(out / "verdicts.json")])
    printed = capsys.readouterr().out
    assert "M B.4" in printed and "FAILED" in printed


def test_report_missing_file(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path / "nope.ndjson")]) == 1


def test_in_scope_measure_count():
    rows = cli.in_scope_measures()
    assert len(rows) == 17
    assert all(r[2] for r in rows)


def test_wall_scenario_geometry():
    cfg = cli._wall_scenario(seed=0, attenuation_db=5.0)
    cfg.validate()
    assert cfg.wall_pairs == ((0, 1),)
    # neighbors are one meter apart
    (x0, y0), (x1, y1) = cfg.fixed_positions[0], cfg.fixed_positions[1]
    assert ((x0 - x1) ** 2 + (y0 - y1) ** 2) ** 0.5 == pytest.approx(1.0)


def test_default_checks_list():
    assert cli.DEFAULT_CHECKS == ["A3", "MA3", "C2", "A4"]
