import csv
import json
import subprocess
import sys

import pytest

from ddsignal.cli import main

MAPPING = {"outcome": "y", "treat": "d", "post": "t", "covariates": ["x"], "fixed_effects": ["one"]}


@pytest.fixture
def fixture_files(tmp_path):
    def make(cells=(10, 12, 20, 23), per_cell=3, extra=()):
        rows = []
        for k, (d, t) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
            rows += [[cells[k], d, t, j * 0.5 + k, "all"] for j in range(per_cell)]
        rows += [list(r) for r in extra]
        data = tmp_path / "data.csv"
        with open(data, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "d", "t", "x", "one"])
            w.writerows(rows)
        mapping = tmp_path / "mapping.json"
        mapping.write_text(json.dumps(MAPPING))
        return str(data), str(mapping)

    return make


def run(argv, tmp_path, capsys):
    code = main(argv + ["--out-dir", str(tmp_path / "out")])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_estimate_both_constant_cells(fixture_files, tmp_path, capsys):
    data, mapping = fixture_files()
    code, out, _ = run(["estimate", data, "--mapping", mapping], tmp_path, capsys)
    assert code == 0
    rep = json.loads((tmp_path / "out" / "estimate.json").read_text())
    assert rep["fits"]["level"]["dd_estimate"] == pytest.approx(1.0, abs=1e-12)
    assert round(rep["fits"]["log"]["exp_minus_one"]["estimate"], 4) == -0.0417
    assert rep["fits"]["level"]["n_obs"] == rep["fits"]["log"]["n_obs"] == 12
    table = list(csv.reader(open(tmp_path / "out" / "estimate.csv")))
    assert table[0] == ["", "level", "log"]
    assert table[1][1].startswith("1.00")
    assert [r[0] for r in table[-5:]] == ["Y_C0", "Y_C1", "Y_T0", "Y_T1", "Observations"]


def test_estimate_log_drops_zero_from_both(fixture_files, tmp_path, capsys):
    data, mapping = fixture_files(extra=[[0, 1, 1, 0.0, "all"]])
    code, out, _ = run(["estimate", data, "--mapping", mapping, "--transform", "both"], tmp_path, capsys)
    assert code == 0 and "dropped 1 non-positive" in out
    rep = json.loads((tmp_path / "out" / "estimate.json").read_text())
    assert rep["dropped_nonpositive"] == 1 and rep["n_obs"] == 12
    code, out, _ = run(["estimate", data, "--mapping", mapping, "--transform", "log"], tmp_path, capsys)
    assert code == 0 and "dropped 1 non-positive" in out


def test_absorb_single_level_fe_is_noop(fixture_files, tmp_path, capsys):
    data, mapping = fixture_files(cells=(3.0, 4.5, 7.25, 9.0))
    base = ["estimate", data, "--mapping", mapping, "--transform", "level", "--controls", "x", "--format", "json"]
    run(base, tmp_path, capsys)
    plain = json.loads((tmp_path / "out" / "estimate.json").read_text())["fits"]["level"]["coefficients"]
    run(base + ["--absorb", "one"], tmp_path, capsys)
    absorbed = json.loads((tmp_path / "out" / "estimate.json").read_text())["fits"]["level"]["coefficients"]
    for k in ("treat", "post", "treat_post"):
        assert absorbed[k] == pytest.approx(plain[k], abs=1e-10)


@pytest.mark.parametrize("cells,needle", [
    ("10,12,20,23", "SWITCH PREDICTED: |α₄|=1 < threshold 2"),
    ("10,12,12,14.4", "BOUNDARY"),
    ("50,70,60,90", "NO SWITCH"),
])
def test_diagnose_cells(cells, needle, tmp_path, capsys):
    code, out, _ = run(["diagnose", "--cells", cells], tmp_path, capsys)
    assert code == 0 and needle in out
    rep = json.loads((tmp_path / "out" / "diagnose.json").read_text())
    if cells == "50,70,60,90":
        assert rep["prediction"] == "no_switch" and rep["margin"] < 0
    if cells == "10,12,12,14.4":
        assert rep["prediction"] == "boundary_zero_log"


def test_diagnose_from_data(fixture_files, tmp_path, capsys):
    data, mapping = fixture_files(cells=(5, 6, 10, 11.8))
    code, out, _ = run(["diagnose", data, "--mapping", mapping], tmp_path, capsys)
    assert code == 0 and "SWITCH PREDICTED" in out and "observed: discordant" in out


def test_simulate_preset_rounded_rows(tmp_path, capsys):
    code, _, _ = run(["simulate", "--preset", "table1-col4", "--runs", "100"], tmp_path, capsys)
    assert code == 0
    rows = {r[0]: r[1:] for r in csv.reader(open(tmp_path / "out" / "simulate.csv"))}
    assert rows["Level DD estimate [alpha4]"] == ["1.00***"]
    assert rows["exp(beta4)-1"] == ["-0.042***"]
    assert rows["Y_T1"] == ["23.00"]


def test_sweep_preset_brackets_half(tmp_path, capsys):
    code, out, _ = run(["sweep", "--preset", "fig1-left", "--runs", "10", "--format", "csv"], tmp_path, capsys)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "fig1-left.csv")))
    signs = [(float(r["axis_value"]), float(r["log_dd_mean"])) for r in rows]
    below = [x for x, b in signs if b > 0]
    above = [x for x, b in signs if b < 0]
    assert max(below) < 0.5 + 0.03 and min(above) > 0.5 - 0.03 and max(below) < min(above)


def test_sweep_config_file(tmp_path, capsys):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"name": "custom", "axis": "time_effect", "grid": {"start": 10, "stop": 90, "step": 20},
                               "fixed": {"y_c0": 50, "y_t0": 60, "level_dd": 10}, "runs": 5, "n_total": 4000}))
    code, out, _ = run(["sweep", str(cfg)], tmp_path, capsys)
    assert code == 0 and "custom" in out and (tmp_path / "out" / "custom.json").exists()


def test_balance_command(fixture_files, tmp_path, capsys):
    data, mapping = fixture_files()
    code, out, _ = run(["balance", data, "--mapping", mapping], tmp_path, capsys)
    assert code == 0 and "x: p_DD" in out
    assert next(csv.reader(open(tmp_path / "out" / "balance.csv")))[0] == "covariate"


def test_exit_codes(fixture_files, tmp_path, capsys):
    assert run(["simulate", "--preset", "table1-col4", "--runs", "0"], tmp_path, capsys)[0] == 2
    code, _, err = run(["diagnose", "--cells", "1,2,3"], tmp_path, capsys)
    assert code == 2 and "ddsignal diagnose: config error" in err
    data, mapping = fixture_files()
    code, _, err = run(["estimate", str(tmp_path / "missing.csv"), "--mapping", mapping], tmp_path, capsys)
    assert code == 3 and "data error" in err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**MAPPING, "treat": "nope"}))
    assert run(["estimate", data, "--mapping", str(bad)], tmp_path, capsys)[0] == 3
    code, out, _ = run(["diagnose", "--cells", "0,1,2,3"], tmp_path, capsys)
    assert code == 0 and "DEGENERATE" in out
    sim = tmp_path / "sim.json"
    sim.write_text(json.dumps({"cell_means": [0.1, 0.1, 0.1, 0.1], "sigma": 1.0, "n_total": 400, "runs": 2}))
    code, _, err = run(["simulate", str(sim)], tmp_path, capsys)
    assert code == 3 and "seed (0, " in err
    holes, _ = fixture_files(per_cell=2)
    with open(holes) as fh:
        kept = [line for line in fh if not line.startswith("23,")]
    with open(holes, "w") as fh:
        fh.writelines(kept)
    code, _, err = run(["diagnose", holes, "--mapping", mapping], tmp_path, capsys)
    assert code == 4 and "ddsignal diagnose: estimation error" in err


def test_every_output_has_one_manifest_and_reruns_are_bit_exact(fixture_files, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    data, mapping = fixture_files()
    outputs = {}
    for attempt in range(2):
        run(["estimate", data, "--mapping", mapping], tmp_path, capsys)
        run(["simulate", "--preset", "tablec1-col1", "--runs", "20", "--seed", "3"], tmp_path, capsys)
        files = sorted((tmp_path / "out").iterdir())
        outputs[attempt] = {f.name: f.read_bytes() for f in files}
    assert outputs[0] == outputs[1]
    names = set(outputs[0])
    results = {n for n in names if not n.endswith(".manifest.json")}
    assert {f"{n}.manifest.json" for n in results} == names - results
    man = json.loads(outputs[0]["simulate.csv.manifest.json"])
    assert man["command"] == "simulate" and man["seed"] == 3 and len(man["config_digest"]) == 64
    assert man["timestamp"].startswith("2023-11-14")


def test_config_digest_tracks_input_contents(fixture_files, tmp_path, capsys):
    data, mapping = fixture_files()
    run(["estimate", data, "--mapping", mapping, "--format", "json"], tmp_path, capsys)
    d1 = json.loads((tmp_path / "out" / "estimate.json.manifest.json").read_text())["config_digest"]
    with open(data, "a") as fh:
        fh.write("11,0,0,1.0,all\n")
    run(["estimate", data, "--mapping", mapping, "--format", "json"], tmp_path, capsys)
    d2 = json.loads((tmp_path / "out" / "estimate.json.manifest.json").read_text())["config_digest"]
    assert d1 != d2


def test_threads_env_fallback(tmp_path, capsys, monkeypatch):
    outs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("DD_SIGNAL_THREADS", threads)
        run(["simulate", "--preset", "table1-col5", "--runs", "130", "--format", "json"], tmp_path, capsys)
        outs.append((tmp_path / "out" / "simulate.json").read_bytes())
    assert outs[0] == outs[1]


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ddsignal.cli", "diagnose", "--cells", "10,12,20,23",
                           "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and "SWITCH PREDICTED" in proc.stdout
