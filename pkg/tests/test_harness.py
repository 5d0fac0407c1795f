import json
import os

import numpy as np
import pytest

from tjap import cli, harness
from tjap.environment import derive_seed
from tjap.errors import ConfigError
from tjap.harness import (AGGREGATE_HEADER, CSV_HEADER, DEFAULT_CONFIG,
                          load_config, log_rounds, mean_curves_from_runs,
                          run_experiment, run_file_name, validate_config,
                          verify_output)

MINI = {
    "d": 2,
    "items": 4,
    "offer_size": 2,
    "sources": [0, 2],
    "s0": 1,
    "shift": 0.1,
    "rounds": 12,
    "l0": 0.5,
    "utility_bound": 1.5,
    "algorithms": ["target_only", "tjap"],
    "repetitions": 2,
    "master_seed": 7,
    "grid_points": 64,
}


def read(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def run_mini(tmp_path, name="out", parallel=1, config=None):
    cfg = validate_config(config or MINI)
    out = tmp_path / name
    code = run_experiment(cfg, out_dir=str(out), parallel=parallel,
                          quiet=True)
    return code, out


# -- config validation --------------------------------------------------------

def test_defaults_round_trip():
    cfg = validate_config({})
    assert cfg.d == DEFAULT_CONFIG["d"]
    assert cfg.sources == (0, 1, 3, 5)
    assert cfg.algorithms == ("tjap",)
    assert cfg.as_dict()["sources"] == [0, 1, 3, 5]
    # the default config document is itself valid JSON and valid config
    validate_config(json.loads(harness.default_config_json()))


def test_cells_enumeration():
    cfg = validate_config(MINI)
    cells = list(cfg.cells())
    assert len(cells) == 2 * 2 * 2
    assert cells[0] == ("target_only", 0, 0)
    assert cells[-1] == ("tjap", 2, 1)


def test_policy_overrides_materialize_estimation():
    cfg = validate_config({**MINI, "tuning": {"c_alpha": 0.1,
                                              "estimation": {"tol": 1e-6}}})
    ov = cfg.policy_overrides()
    assert ov["c_alpha"] == 0.1
    assert ov["grid_points"] == 64
    assert ov["estimation"].tol == 1e-6


@pytest.mark.parametrize("patch,key", [
    ({"bogus": 1}, "bogus"),
    ({"d": True}, "d"),
    ({"d": 2.5}, "d"),
    ({"offer_size": 9}, "offer_size"),
    ({"s0": 5}, "s0"),
    ({"shift": -0.2}, "shift"),
    ({"rounds": 5}, "rounds"),
    ({"l0": 0.0}, "l0"),
    ({"utility_bound": -1.0}, "utility_bound"),
    ({"sources": []}, "sources"),
    ({"sources": [1, 1]}, "sources"),
    ({"sources": [0, -2]}, "sources"),
    ({"sources": [0, True]}, "sources"),
    ({"algorithms": []}, "algorithms"),
    ({"algorithms": ["nope"]}, "algorithms"),
    ({"algorithms": ["tjap", "tjap"]}, "algorithms"),
    ({"repetitions": 0}, "repetitions"),
    ({"source_policy": "adaptive"}, "source_policy"),
    ({"grid_points": 1}, "grid_points"),
    ({"tuning": {"mystery": 1}}, "mystery"),
    ({"tuning": {"estimation": {"mystery": 1}}}, "mystery"),
    ({"out": ""}, "out"),
    ({"parallel": 0}, "parallel"),
])
def test_validation_rejections(patch, key):
    raw = {**MINI, **patch}
    with pytest.raises(ConfigError):
        validate_config(raw)


def test_validation_points_at_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "d": 2,\n  "rounds": 5\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config(str(path))
    msg = str(exc.value)
    assert "rounds must be >= 2d+2 = 6" in msg
    assert "bad.json:3" in msg


def test_load_config_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"d": \n}')
    with pytest.raises(ConfigError) as exc:
        load_config(str(path))
    assert "not valid JSON" in str(exc.value)
    assert "broken.json:2" in str(exc.value)
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    lst = tmp_path / "list.json"
    lst.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(str(lst))


# -- emission details ---------------------------------------------------------

def test_log_rounds_cadence():
    assert list(log_rounds(5)) == [1, 2, 3, 4, 5]
    dense = log_rounds(4096)
    assert len(dense) == 4096
    sparse = list(log_rounds(4104))
    assert sparse[0] == 8 and sparse[-1] == 4104
    assert all(t % 8 == 0 for t in sparse)


def test_run_file_name():
    assert run_file_name("tjap", 3, 7) == "tjap_H3_rep007.csv"


# -- experiment end to end ----------------------------------------------------

def test_run_experiment_layout_and_content(tmp_path):
    code, out = run_mini(tmp_path)
    assert code == 0
    runs = sorted(os.listdir(out / "runs"))
    assert runs == sorted(
        run_file_name(a, h, r)
        for a in ("target_only", "tjap") for h in (0, 2) for r in (0, 1))
    body = read(out / "runs" / "tjap_H2_rep001.csv").splitlines()
    assert body[0] == CSV_HEADER
    assert len(body) == 1 + MINI["rounds"]
    row = body[1].split(",")
    assert row[0] == "tjap" and row[1] == "2"
    assert row[2:6] == ["2", "1", "4", "2"]
    assert int(row[6]) == derive_seed(7, "tjap", 2, 1)
    assert [int(r.split(",")[7]) for r in body[1:]] == list(range(1, 13))

    manifest = json.loads(read(out / "manifest.json"))
    assert manifest["n_cells"] == 8 and manifest["n_failed"] == 0
    assert manifest["csv_header"] == CSV_HEADER
    assert manifest["aggregate"] == "aggregate.csv"
    assert manifest["config"]["rounds"] == 12
    for cell in manifest["cells"]:
        assert cell["status"] == "ok"
        assert cell["scenario_seed"] == derive_seed(7, "scenario", cell["rep"])

    agg = read(out / "aggregate.csv").splitlines()
    assert agg[0] == AGGREGATE_HEADER
    # 4 (algorithm, H) groups x 12 rounds
    assert len(agg) == 1 + 4 * 12
    reps = {r.split(",")[-1] for r in agg[1:]}
    assert reps == {"2"}


def test_run_experiment_deterministic_reruns(tmp_path):
    _, out_a = run_mini(tmp_path, "a")
    _, out_b = run_mini(tmp_path, "b")
    for name in os.listdir(out_a / "runs"):
        assert read(out_a / "runs" / name) == read(out_b / "runs" / name)
    assert read(out_a / "aggregate.csv") == read(out_b / "aggregate.csv")


def test_parallel_matches_serial(tmp_path):
    _, out_s = run_mini(tmp_path, "serial", parallel=1)
    _, out_p = run_mini(tmp_path, "parallel", parallel=2)
    for name in os.listdir(out_s / "runs"):
        assert read(out_s / "runs" / name) == read(out_p / "runs" / name)
    assert read(out_s / "aggregate.csv") == read(out_p / "aggregate.csv")


def test_scenario_shared_across_algorithms_within_rep(tmp_path):
    # both algorithms face the same scenario seed per repetition, and
    # identical uniform warm-up geometry shows up as identical first-row
    # regret (same contexts, same buyer, same initial rng draw order)
    _, out = run_mini(tmp_path)
    manifest = json.loads(read(out / "manifest.json"))
    by_rep = {}
    for cell in manifest["cells"]:
        by_rep.setdefault((cell["rep"], cell["H"]), set()).add(
            cell["scenario_seed"])
    for seeds in by_rep.values():
        assert len(seeds) == 1


def test_aggregate_is_mean_of_runs(tmp_path):
    _, out = run_mini(tmp_path)
    groups = mean_curves_from_runs(str(out / "runs"))
    curves = {}
    for name in os.listdir(out / "runs"):
        rows = read(out / "runs" / name).splitlines()[1:]
        key = (rows[0].split(",")[0], int(rows[0].split(",")[1]))
        curves.setdefault(key, []).append(
            np.array([float(r.split(",")[8]) for r in rows]))
    for key, (meta, ts, mean, count) in groups.items():
        assert count == 2
        np.testing.assert_allclose(mean, np.mean(curves[key], axis=0),
                                   rtol=0, atol=1e-12)


def test_mean_curves_rejects_grid_mismatch(tmp_path):
    runs = tmp_path / "runs"
    runs.mkdir()
    prefix = "tjap,1,2,1,4,2,99"
    (runs / "tjap_H1_rep000.csv").write_text(
        CSV_HEADER + "\n" + "\n".join("%s,%d,1.5,0,1" % (prefix, t)
                                      for t in (1, 2, 3)) + "\n")
    (runs / "tjap_H1_rep001.csv").write_text(
        CSV_HEADER + "\n" + "\n".join("%s,%d,1.5,0,1" % (prefix, t)
                                      for t in (1, 2)) + "\n")
    with pytest.raises(ConfigError):
        mean_curves_from_runs(str(runs))
    (runs / "tjap_H1_rep001.csv").write_text("bogus header\n")
    with pytest.raises(ConfigError):
        mean_curves_from_runs(str(runs))


def test_cell_failure_isolated(tmp_path, monkeypatch):
    real = harness.generate_scenario
    bad_seed = derive_seed(7, "scenario", 1)

    def sabotage(**kwargs):
        if kwargs["seed"] == bad_seed:
            raise RuntimeError("synthetic scenario failure")
        return real(**kwargs)

    monkeypatch.setattr(harness, "generate_scenario", sabotage)
    cfg = validate_config({**MINI, "algorithms": ["target_only"],
                           "sources": [0]})
    out = tmp_path / "out"
    code = run_experiment(cfg, out_dir=str(out), parallel=1, quiet=True)
    assert code == 1
    manifest = json.loads(read(out / "manifest.json"))
    assert manifest["n_failed"] == 1
    statuses = {c["rep"]: c["status"] for c in manifest["cells"]}
    assert statuses == {0: "ok", 1: "failed"}
    failed = [c for c in manifest["cells"] if c["status"] == "failed"][0]
    assert "synthetic scenario failure" in failed["error"]
    # the healthy cell still aggregated
    assert (out / "aggregate.csv").exists()
    agg = read(out / "aggregate.csv").splitlines()
    assert agg[1].split(",")[-1] == "1"


# -- verify -------------------------------------------------------------------

def test_verify_passes_then_catches_corruption(tmp_path, capsys):
    _, out = run_mini(tmp_path)
    assert verify_output(str(out), quiet=True) == 0
    agg = out / "aggregate.csv"
    lines = read(agg).splitlines()
    cols = lines[3].split(",")
    cols[7] = "%.9g" % (float(cols[7]) + 1e-3)
    lines[3] = ",".join(cols)
    agg.write_text("\n".join(lines) + "\n")
    assert verify_output(str(out)) == 1
    assert "line 4 mismatch" in capsys.readouterr().out


def test_verify_detects_missing_run(tmp_path, capsys):
    _, out = run_mini(tmp_path)
    os.remove(out / "runs" / "tjap_H2_rep001.csv")
    assert verify_output(str(out)) == 1
    capsys.readouterr()


def test_verify_without_output_dir(tmp_path, capsys):
    assert verify_output(str(tmp_path / "nothing")) == 1
    capsys.readouterr()


# -- CLI ----------------------------------------------------------------------

def test_cli_print_default_config(capsys):
    assert cli.main(["print-default-config"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc == DEFAULT_CONFIG


def test_cli_run_and_verify(tmp_path, capsys):
    cfg_path = tmp_path / "mini.json"
    cfg_path.write_text(json.dumps(MINI))
    out = tmp_path / "out"
    assert cli.main(["run", str(cfg_path), "--out", str(out),
                     "--parallel", "1", "--quiet"]) == 0
    assert (out / "aggregate.csv").exists()
    assert cli.main(["verify", str(out), "--quiet"]) == 0
    capsys.readouterr()


def test_cli_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"rounds": 5}')
    assert cli.main(["run", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "absent.json")]) == 2
    capsys.readouterr()


def test_cli_thread_env_override(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TJAP_THREADS", "2")
    assert cli._resolve_parallel(None) == 2
    assert cli._resolve_parallel(7) == 2
    monkeypatch.setenv("TJAP_THREADS", "zero")
    cfg_path = tmp_path / "mini.json"
    cfg_path.write_text(json.dumps(MINI))
    assert cli.main(["run", str(cfg_path), "--out",
                     str(tmp_path / "o")]) == 2
    assert "TJAP_THREADS" in capsys.readouterr().err
    monkeypatch.delenv("TJAP_THREADS")
    assert cli._resolve_parallel(5) == 5
