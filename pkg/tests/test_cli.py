"""Command-line interface: subcommands, manifests, reruns, and exit codes."""

import csv
import hashlib
import json
import os

import numpy as np
import pytest

from dispatchlab.cli import main


def run(args, tmp_path, sub=None):
    out = tmp_path / (sub or "out")
    code = main(args + ["--out", str(out)])
    return code, out


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


EXACT_ARGS = [
    "exact",
    "--grid", "2x2",
    "--drivers", "2",
    "--capacity", "2",
    "--arrivals", "uniform:0.0625",
    "--policy", "nadap:0.8",
]


def test_exact_uniform_example(tmp_path, capsys):
    code, out = run(EXACT_ARGS, tmp_path)
    assert code == 0
    report = read_json(out / "report.json")
    assert abs(report["objective"] - 0.4) < 1e-10
    assert report["irreducible"] is True and report["aperiodic"] is True
    assert report["method"] == "elimination"
    assert report["under_envelope"] is True
    rows = read_csv(out / "stationary.csv")
    assert len(rows) == 10
    assert max(abs(float(r["pi"]) - 0.1) for r in rows) < 1e-10
    gamma = {(int(r["u"]), int(r["v"])): float(r["gamma"]) for r in read_csv(out / "gamma.csv")}
    assert len(gamma) == 16
    mixing = read_csv(out / "mixing.csv")
    assert float(mixing[0]["d_t"]) >= float(mixing[-1]["d_t"])
    manifest = read_json(out / "manifest.json")
    assert manifest["command"] == "exact"
    assert set(manifest["outputs"]) == {"stationary.csv", "gamma.csv", "mixing.csv", "report.json"}
    assert "timestamp" not in manifest
    printed = capsys.readouterr().out
    assert "objective" in printed


def test_exit_codes(tmp_path, capsys):
    assert main([]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["exact", "--bogus-flag", "1"]) == 2
    # infeasible instance: 9 drivers cannot fit on 4 cells at capacity 2
    code = main(
        ["exact", "--grid", "2x2", "--drivers", "9", "--capacity", "2",
         "--arrivals", "uniform:0.01", "--policy", "nadap:0.8",
         "--out", str(tmp_path / "bad")]
    )
    assert code == 1
    err = capsys.readouterr().err
    assert "error (" in err


def test_missing_required_flags(tmp_path, capsys):
    code = main(["exact", "--grid", "2x2", "--out", str(tmp_path / "x")])
    assert code == 1
    assert "--" in capsys.readouterr().err


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# ensemble defaults\n"
        "runs = 5\n"
        "rounds = 80\n"
    )
    code, out = run(
        ["simulate", "--grid", "2x2", "--drivers", "2", "--capacity", "2",
         "--arrivals", "uniform:0.0625", "--policy", "nadap:0.8",
         "--seed", "3", "--runs", "7", "--config", str(cfg)],
        tmp_path,
    )
    assert code == 0
    manifest = read_json(out / "manifest.json")
    assert manifest["config"]["runs"] == 7  # flag beats file
    assert manifest["config"]["rounds"] == 80  # file beats default
    assert len(read_csv(out / "wt.csv")) == 80


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("no_such_option = 1\n")
    code, _ = run(EXACT_ARGS + ["--config", str(cfg)], tmp_path)
    assert code == 1
    assert "no_such_option" in capsys.readouterr().err


def test_seed_drawn_and_recorded_when_omitted(tmp_path):
    code, out = run(
        ["simulate", "--grid", "2x2", "--drivers", "2", "--capacity", "2",
         "--arrivals", "uniform:0.0625", "--policy", "nadap:0.8",
         "--rounds", "40", "--runs", "3"],
        tmp_path,
    )
    assert code == 0
    manifest = read_json(out / "manifest.json")
    assert isinstance(manifest["seed"], int)
    assert "--seed" in manifest["rerun_argv"]
    drawn = manifest["rerun_argv"][manifest["rerun_argv"].index("--seed") + 1]
    assert int(drawn) == manifest["seed"]
    assert "--seed" not in manifest["argv"]


def test_rerun_from_manifest_reproduces_bytes(tmp_path):
    code, out1 = run(
        ["simulate", "--grid", "2x2", "--drivers", "2", "--capacity", "2",
         "--arrivals", "uniform:0.0625", "--policy", "nadap:0.8",
         "--rounds", "60", "--runs", "4", "--seed", "12"],
        tmp_path, "one",
    )
    assert code == 0
    manifest = read_json(out1 / "manifest.json")
    rerun = [a for a in manifest["rerun_argv"]]
    # redirect the rerun into a fresh directory
    i = rerun.index("--out")
    rerun[i + 1] = str(tmp_path / "two")
    assert main(rerun) == 0
    out2 = tmp_path / "two"
    for name, digest in manifest["outputs"].items():
        assert sha(out2 / name) == digest, name
        assert sha(out1 / name) == digest, name


def test_thread_count_recorded_but_output_invariant(tmp_path):
    args = ["simulate", "--grid", "2x2", "--drivers", "2", "--capacity", "2",
            "--arrivals", "uniform:0.0625", "--policy", "nadap:0.8",
            "--rounds", "50", "--runs", "3", "--seed", "5"]
    code, out1 = run(args + ["--threads", "1"], tmp_path, "t1")
    assert code == 0
    code, out4 = run(args + ["--threads", "4"], tmp_path, "t4")
    assert code == 0
    m1 = read_json(out1 / "manifest.json")
    m4 = read_json(out4 / "manifest.json")
    assert m1["threads"] == 1 and m4["threads"] == 4
    assert m1["outputs"] == m4["outputs"]


def test_threads_env_default(tmp_path):
    old = os.environ.get("DISPATCHLAB_THREADS")
    os.environ["DISPATCHLAB_THREADS"] = "3"
    try:
        code, out = run(EXACT_ARGS, tmp_path)
        assert code == 0
        assert read_json(out / "manifest.json")["threads"] == 3
    finally:
        if old is None:
            del os.environ["DISPATCHLAB_THREADS"]
        else:
            os.environ["DISPATCHLAB_THREADS"] = old


def test_couple_subcommand(tmp_path):
    code, out = run(
        ["couple", "--grid", "2x2", "--drivers", "2", "--capacity", "2"],
        tmp_path,
    )
    assert code == 0
    report = read_json(out / "report.json")
    assert report["worst_beta"] == pytest.approx(15 / 16)
    assert report["worst_beta_exact"] == "15/16"
    assert report["pairs"] == 48
    assert report["tau_bound"] == pytest.approx(95.86343, abs=1e-4)
    rows = read_csv(out / "coupling.csv")
    assert len(rows) == 48
    assert all(float(r["ratio"]) <= 15 / 16 + 1e-15 for r in rows)


def test_mixing_subcommand(tmp_path):
    code, out = run(
        ["mixing", "--grid", "2x2", "--drivers", "2", "--capacity", "2",
         "--arrivals", "uniform:0.0625", "--policy", "rand:NESW",
         "--epsilons", "0.25,0.01"],
        tmp_path,
    )
    assert code == 0
    report = read_json(out / "report.json")
    assert report["exhaustive"] is True
    assert report["tau"]["0.25"] <= report["tau"]["0.01"]
    curve = read_csv(out / "mixing.csv")
    assert float(curve[-1]["d_t"]) <= 0.01


def test_vi_subcommand(tmp_path):
    code, out = run(
        ["vi", "--grid", "2x2", "--drivers", "1", "--capacity", "2",
         "--arrivals", "uniform:0.0625", "--seed", "2", "--periods", "200"],
        tmp_path,
    )
    assert code == 0
    report = read_json(out / "report.json")
    assert report["augmented_states"] == 4 * 17
    assert report["residual"] <= 1e-8
    assert report["bellman_recheck"] <= 1e-8
    values = read_csv(out / "values.csv")
    assert len(values) == 4 * 17
    assert {r["request"] for r in values} >= {"0", "none"}
    heatmap = read_csv(out / "heatmap.csv")
    assert len(heatmap) == 4
    for row in heatmap:
        assert 0 <= float(row["start_pct"]) <= float(row["drop_rate"]) + 1e-12


def test_fit_subcommand(tmp_path):
    data = tmp_path / "curve.csv"
    with open(data, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "delta"])
        for t in range(40):
            writer.writerow([t, 2.0 * np.exp(-0.1 * t)])
    code, out = run(
        ["fit", "--input", str(data), "--kind", "exp"],
        tmp_path,
    )
    assert code == 0
    fit = read_json(out / "fit.json")
    assert fit["kind"] == "exp"
    assert abs(fit["a"] - 2.0) < 1e-9
    assert abs(fit["b"] - 0.1) < 1e-9
    code, out2 = run(
        ["fit", "--input", str(data), "--kind", "inverse", "--t-column", "t",
         "--value-column", "delta"],
        tmp_path, "inv",
    )
    assert code == 0
    inv = read_json(out2 / "fit.json")
    assert inv["kind"] == "inverse"
    assert inv["dropped"] == 1  # the t=0 point cannot feed a/T


def test_fixture_and_ingest_subcommands(tmp_path):
    code, fix = run(["fixture", "--trips", "300", "--seed", "6"], tmp_path, "fix")
    assert code == 0
    trips = fix / "trips.csv"
    manifest = read_json(fix / "manifest.json")
    assert manifest["outputs"]["trips.csv"] == sha(trips)
    assert manifest["summary"]["rows"] == 300

    code, model_out = run(
        ["ingest", "--input", str(trips), "--segment", "morning", "--emit", "model"],
        tmp_path, "model",
    )
    assert code == 0
    report = read_json(model_out / "report.json")
    assert report["parsed"] == 300
    assert report["skipped"] == 0
    assert 0 < report["in_bbox"] <= 300
    assert report["rescale"] == 1.0
    model_rows = read_csv(model_out / "model.csv")
    assert model_rows
    ingest_manifest = read_json(model_out / "manifest.json")
    assert str(trips) in ingest_manifest["inputs"]

    date = report["dates"][0]
    code, replay_out = run(
        ["ingest", "--input", str(trips), "--segment", "morning",
         "--emit", "replay", "--dates", date],
        tmp_path, "replay",
    )
    assert code == 0
    rows = read_csv(replay_out / "replay.csv")
    assert all(0 <= int(r["round"]) < 14400 for r in rows)


def test_csv_report_format(tmp_path):
    code, out = run(EXACT_ARGS + ["--format", "csv"], tmp_path)
    assert code == 0
    assert not (out / "report.json").exists()
    rows = read_csv(out / "report.csv")
    flat = {r["key"]: r["value"] for r in rows}
    assert abs(float(flat["objective"]) - 0.4) < 1e-10
    assert flat["irreducible"] == "True"


def test_weights_flag_changes_objective(tmp_path):
    code, out = run(EXACT_ARGS + ["--weights", "const:2"], tmp_path)
    assert code == 0
    # doubling every ride weight doubles the stationary objective
    assert abs(read_json(out / "report.json")["objective"] - 0.8) < 1e-10
    code, out2 = run(EXACT_ARGS + ["--weights", "const:0.5"], tmp_path, "half")
    assert code == 0
    assert abs(read_json(out2 / "report.json")["objective"] - 0.2) < 1e-10
    # distance weights on 2x2 total 16 as well, so the objective matches w = 1
    code, out3 = run(EXACT_ARGS + ["--weights", "distance"], tmp_path, "dist")
    assert code == 0
    assert abs(read_json(out3 / "report.json")["objective"] - 0.4) < 1e-10
