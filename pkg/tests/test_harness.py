import json
import os

import numpy as np
import pytest

from meanfield import particles as P
from meanfield.harness import cli
from meanfield.harness.config import (DEFAULTS, KINDS, ConfigError, ExperimentConfig, from_manifest, load,
                                      parse_text)
from meanfield.harness.results import emit_outputs, preflight
from meanfield.harness.studies import STUDIES, run_all, run_study

TINY = {
    "semigroup-bounds": dict(functions=2, times=4, points=2001),
    "resolvent-decay": dict(rhos=(2.0, 8.0, 32.0)),
    "sewing-check": dict(frozen_steps=256, frozen_paths=20, realizations=20, grid_steps=384, norm_grid_steps=64,
                         norm_paths=2, frozen_tol=1e-2),
    "ou-toy": dict(ns=(16, 64), replicas=50, steps=32),
}


def tiny(kind, out, **extra):
    cfg = ExperimentConfig.default(kind, **{**TINY.get(kind, {}), **extra})
    cfg.out = str(out)
    return cfg


def test_every_kind_has_defaults_and_a_runner():
    assert set(KINDS) == set(DEFAULTS) == set(STUDIES)


def test_config_text_round_trip():
    for kind in KINDS:
        cfg = ExperimentConfig.default(kind, quick=True)
        back = parse_text(cfg.to_text())
        assert back.resolved() == cfg.resolved()


def test_config_file_load(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[experiment]\nkind = ou-toy\nseed = 5  # comment\n\n[params]\nns = 8, 16\nreplicas = 3\n")
    cfg = load(path)
    assert cfg.seed == 5 and cfg.params["ns"] == (8, 16) and cfg.params["replicas"] == 3
    assert cfg.params["a"] == DEFAULTS["ou-toy"]["a"]


@pytest.mark.parametrize("text", [
    "[experiment]\nkind = ou-toy\n[params]\nbogus = 1\n",
    "[experiment]\nkind = nothing\n",
    "[experiment]\nkind = ou-toy\nkind = gp-ratio\n",
    "[experiment]\nkind = ou-toy\ncolour = red\n",
    "[weird]\nkind = ou-toy\n",
    "kind = ou-toy\n",
    "[experiment]\nseed = 3\n",
    "[experiment]\nkind = ou-toy\n[params]\nreplicas = many\n",
    "[experiment]\nkind = ou-toy\n[params]\nreplicas\n",
])
def test_config_rejections(text):
    with pytest.raises(ConfigError):
        parse_text(text)


def test_manifest_round_trip(tmp_path):
    res = run_study(tiny("resolvent-decay", tmp_path))
    paths = emit_outputs(res, tmp_path)
    with open(paths["json"]) as fh:
        manifest = json.load(fh)
    assert {"kind", "config", "seed", "verdicts", "passed", "fits", "notes", "wall_clock_seconds"} <= set(manifest)
    back = from_manifest(manifest)
    assert back.resolved() == tiny("resolvent-decay", tmp_path).resolved()
    assert from_manifest(json.dumps(manifest)).resolved() == back.resolved()


@pytest.mark.parametrize("kind", ["semigroup-bounds", "resolvent-decay", "sewing-check", "ou-toy"])
def test_rerun_is_byte_identical(tmp_path, kind):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        res = run_study(tiny(kind, d))
        paths = emit_outputs(res, d)
        outs.append([open(paths[key], "rb").read() for key in ("csv", "fits", "plot")])
    assert outs[0] == outs[1]


def test_unwritable_output_fails_before_compute(tmp_path, monkeypatch):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises((PermissionError, OSError)):
        preflight(blocker / "sub")
    called = []
    monkeypatch.setitem(STUDIES, "ou-toy", lambda cfg, threads: called.append(1))
    assert cli.main(["ou-toy", "--out", str(blocker / "sub")]) == 2
    assert not called


def test_run_all_empty_manifest():
    report = run_all([])
    assert report["passed"] and report["results"] == [] and report["errors"] == {}
    assert cli.main(["all", "--kinds", ""]) == 0


def test_run_all_single_kind_matches_direct(tmp_path):
    cfg = tiny("resolvent-decay", tmp_path)
    report = run_all([cfg])
    direct = run_study(cfg)
    assert report["results"][0].table == direct.table and report["results"][0].verdicts == direct.verdicts


def test_run_all_collects_failures(tmp_path, monkeypatch):
    def boom(cfg, threads):
        raise RuntimeError("broken study")

    monkeypatch.setitem(STUDIES, "ou-toy", boom)
    report = run_all([tiny("ou-toy", tmp_path), tiny("resolvent-decay", tmp_path)])
    assert not report["passed"]
    assert "broken study" in report["errors"]["ou-toy"]
    assert [r.kind for r in report["results"]] == ["resolvent-decay"]


def test_cli_study_exit_codes(tmp_path, capsys):
    cfg = tiny("resolvent-decay", tmp_path)
    path = tmp_path / "r.ini"
    path.write_text(cfg.to_text())
    assert cli.main(["resolvent-decay", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    assert "PASS  resolvent-decay" in capsys.readouterr().out
    assert os.path.exists(tmp_path / "o" / "resolvent-decay.json")
    failing = tiny("ou-toy", tmp_path, slope_tol=0.0)  # no estimated slope is exactly -1
    path.write_text(failing.to_text())
    code = cli.main(["ou-toy", "--config", str(path), "--out", str(tmp_path / "f")])
    assert code == 1
    assert "FAIL  ou-toy: slope" in capsys.readouterr().out
    path.write_text(cfg.to_text())
    assert cli.main(["ou-toy", "--config", str(path)]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nkind = ou-toy\n[params]\nnope = 1\n")
    assert cli.main(["ou-toy", "--config", str(bad)]) == 2
    assert cli.main(["all", "--kinds", "ou-toy,unknown"]) == 2


def test_cli_all_writes_suite(tmp_path):
    a, b = tmp_path / "a.ini", tmp_path / "b.ini"
    a.write_text(tiny("resolvent-decay", tmp_path).to_text())
    b.write_text(tiny("ou-toy", tmp_path).to_text())
    code = cli.main(["all", "--config", str(a), "--config", str(b), "--out", str(tmp_path / "s")])
    with open(tmp_path / "s" / "suite.json") as fh:
        suite = json.load(fh)
    assert set(suite["studies"]) == {"resolvent-decay", "ou-toy"}
    assert code == (0 if suite["passed"] else 1)


def test_cli_simulate(tmp_path):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--n", "12", "--dt", "0.125", "--save-count", "4", "--seed", "3",
                     "--out", str(out)]) == 0
    times, pos = P.read_trajectory_csv(out / "trajectory.csv")
    assert np.allclose(times, [0, 0.25, 0.5, 0.75, 1.0]) and pos.shape == (5, 12, 1)
    inc = P.load_increments(out / "increments.npy")
    assert np.array_equal(inc, P.brownian_increments(3, 12, 8, 0.125))
    assert cli.main(["simulate", "--initial", "two-cluster", "--d", "2", "--out", str(out)]) == 2


def test_cli_solve_pde(tmp_path):
    out = tmp_path / "pde"
    assert cli.main(["solve-pde", "--L", "5", "--N", "40", "--dt", "0.125", "--T", "0.5", "--save-every", "2",
                     "--out", str(out)]) == 0
    lines = (out / "snapshots.csv").read_text().splitlines()
    assert lines[0] == "t,x,density" and len(lines) == 1 + 3 * 40
    tails = (out / "tail_ledger.csv").read_text().splitlines()
    assert tails[0] == "t,tail_left,tail_right,grid_mass" and len(tails) == 4


def test_seed_override(tmp_path):
    cfg = tiny("ou-toy", tmp_path)
    path = tmp_path / "o.ini"
    path.write_text(cfg.to_text())
    cli.main(["ou-toy", "--config", str(path), "--seed", "99", "--out", str(tmp_path / "x")])
    with open(tmp_path / "x" / "ou-toy.json") as fh:
        assert json.load(fh)["seed"] == 99
