import csv as csvmod
import io
import json

import numpy as np
import pytest

from coxsel.cli import main
from coxsel.data import SurvivalDataset, write_csv

from conftest import make_survival

SCHEMA = ["--time", "time", "--status", "status", "--exposure", "exposure",
          "--all-other-columns"]


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("csvs") / "sample.csv"
    write_csv(make_survival(n=120, p=4, seed=5), path)
    return str(path)


def run_fit(data_csv, out, *extra):
    return main(["fit", data_csv, *SCHEMA, "--folds", "4",
                 "--outdir", str(out), *extra])


def test_fit_all_methods(data_csv, tmp_path, capsys):
    assert run_fit(data_csv, tmp_path, "--method", "all") == 0
    stdout = capsys.readouterr().out
    lines = [l for l in stdout.strip().splitlines() if l]
    assert "method" in lines[0] and "estimate" in lines[0]
    assert len(lines) == 5  # header plus the four methods
    produced = sorted(p.name for p in tmp_path.iterdir())
    assert produced == [
        "manifest.txt", "report_fang.json", "report_poor-mans.json",
        "report_post-lasso.json", "report_triple.json", "reports.csv",
        "selection_trace.txt",
    ]


def test_outputs_carry_the_manifest_stamp(data_csv, tmp_path):
    run_fit(data_csv, tmp_path, "--method", "triple")
    manifest = (tmp_path / "manifest.txt").read_text()
    digest = manifest.splitlines()[0]
    assert digest.startswith("hash=sha256:")
    stamp = "# manifest: " + digest.split("=", 1)[1]
    assert (tmp_path / "reports.csv").read_text().splitlines()[0] == stamp
    assert (tmp_path / "selection_trace.txt").read_text().splitlines()[0] == stamp
    rec = json.loads((tmp_path / "report_triple.json").read_text())
    assert rec["manifest"] == digest.split("=", 1)[1]
    # the body echoes every resolved setting, including the unhashed ones
    assert f"outdir={tmp_path}" in manifest
    assert "folds=4" in manifest


def test_fit_csv_and_json_stdout(data_csv, tmp_path, capsys):
    assert run_fit(data_csv, tmp_path / "a", "--method", "post-lasso",
                   "--format", "csv") == 0
    rows = list(csvmod.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0][:4] == ["method", "estimate", "se", "z"]
    assert rows[1][0] == "post-lasso"
    assert len(rows) == 2

    assert run_fit(data_csv, tmp_path / "b", "--method", "post-lasso,triple",
                   "--format", "json") == 0
    records = json.loads(capsys.readouterr().out)
    assert [r["method"] for r in records] == ["post-lasso", "triple"]
    assert all(np.isfinite(r["estimate"]) for r in records)


def test_fit_is_deterministic_across_outdirs(data_csv, tmp_path, capsys):
    run_fit(data_csv, tmp_path / "one", "--method", "all")
    run_fit(data_csv, tmp_path / "two", "--method", "all")
    capsys.readouterr()
    for name in ("reports.csv", "selection_trace.txt", "report_fang.json"):
        assert (tmp_path / "one" / name).read_bytes() == \
            (tmp_path / "two" / name).read_bytes()
    # manifests differ only in the outdir echo, never in the hash
    h1 = (tmp_path / "one" / "manifest.txt").read_text().splitlines()[0]
    h2 = (tmp_path / "two" / "manifest.txt").read_text().splitlines()[0]
    assert h1 == h2


def test_selection_trace_structure(data_csv, tmp_path):
    run_fit(data_csv, tmp_path, "--method", "post-lasso,poor-mans")
    body = (tmp_path / "selection_trace.txt").read_text().splitlines()[1:]
    assert body[0] == "[post-lasso]"
    assert body[1].startswith("  outcome: ")
    assert body[2] == "  censoring: n/a"
    assert body[3] == "  exposure: n/a"
    assert body[4].startswith("  union: ")
    assert body[5] == "[poor-mans]"
    assert not body[6].endswith("n/a")


def test_config_file_with_flag_override(data_csv, tmp_path, capsys):
    cfg = tmp_path / "analysis.cfg"
    cfg.write_text(
        "# analysis settings\n"
        "time=time\nstatus=status\nexposure=exposure\n"
        "all-other-columns=true\nmethod=triple\nfolds=4\n"
    )
    out = tmp_path / "out"
    assert main(["fit", data_csv, "--config", str(cfg),
                 "--method", "post-lasso", "--outdir", str(out)]) == 0
    capsys.readouterr()
    names = {p.name for p in out.iterdir() if p.name.startswith("report_")}
    assert names == {"report_post-lasso.json"}


def test_fit_rejects_bad_usage(data_csv, tmp_path, capsys):
    # no covariate specification at all
    rc = main(["fit", data_csv, "--time", "time", "--status", "status",
               "--exposure", "exposure", "--outdir", str(tmp_path)])
    assert rc == 2
    # unknown column
    rc = main(["fit", data_csv, "--time", "nope", "--status", "status",
               "--exposure", "exposure", "--all-other-columns",
               "--outdir", str(tmp_path)])
    assert rc == 2
    # unknown method
    rc = run_fit(data_csv, tmp_path, "--method", "bootstrap")
    assert rc == 2
    err = capsys.readouterr().err
    assert "error:" in err


def test_numerical_failures_exit_three(tmp_path, capsys):
    rng = np.random.default_rng(3)
    n = 30
    status = np.zeros(n)
    status[4] = 1.0  # a single event cannot be split across CV folds
    d = SurvivalDataset(rng.exponential(1.0, n), status,
                        rng.standard_normal(n), rng.standard_normal((n, 2)))
    path = tmp_path / "one_event.csv"
    write_csv(d, path)
    rc = main(["fit", str(path), *SCHEMA, "--folds", "3",
               "--method", "post-lasso", "--outdir", str(tmp_path / "o")])
    assert rc == 3
    assert "numerical failure" in capsys.readouterr().err


def test_outdir_env_default(data_csv, tmp_path, monkeypatch, capsys):
    target = tmp_path / "from_env"
    monkeypatch.setenv("COXSEL_OUT_DIR", str(target))
    assert main(["fit", data_csv, *SCHEMA, "--folds", "4",
                 "--method", "post-lasso"]) == 0
    capsys.readouterr()
    assert (target / "reports.csv").exists()


def test_simulate_small_grid(tmp_path, capsys):
    args = ["simulate", "--n", "100", "--p", "5", "--reps", "3",
            "--b-values", "0.5", "--g-values", "0.5,1.0",
            "--methods", "post-lasso", "--folds", "3", "--seed", "1"]
    d1, d2 = tmp_path / "j1", tmp_path / "j2"
    assert main([*args, "--jobs", "1", "--outdir", str(d1)]) == 0
    assert main([*args, "--jobs", "4", "--outdir", str(d2)]) == 0
    capsys.readouterr()
    for name in ("grid.csv", "plot_data.csv", "summary.json"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
    rows = (d1 / "grid.csv").read_text().splitlines()
    assert rows[1].split(",") == ["method", "b", "g", "reps", "rejections",
                                  "rate", "mc_se"]
    assert len(rows) == 2 + 2  # stamp, header, one row per cell
    summary = json.loads((d1 / "summary.json").read_text())
    assert len(summary["cells"]) == 2
    assert summary["cells"][0]["reps"] == 3
    assert "reliable" in summary["cells"][0]


def test_simulate_preset_toggles_the_template(tmp_path, capsys):
    out = tmp_path / "p"
    rc = main(["simulate", "--preset", "paper-2b", "--n", "60", "--p", "12",
               "--reps", "1", "--b-values", "0.5", "--g-values", "0.5",
               "--methods", "post-lasso", "--folds", "3",
               "--jobs", "1", "--outdir", str(out)])
    assert rc == 0
    capsys.readouterr()
    manifest = (out / "manifest.txt").read_text()
    assert "mechanism=b" in manifest
    assert "setting=2" in manifest
    bad = tmp_path / "bad.cfg"
    bad.write_text("grid=bogus\n")
    rc = main(["simulate", "--config", str(bad), "--outdir", str(out)])
    assert rc == 2


def test_subsample_command(tmp_path, capsys):
    path = tmp_path / "d.csv"
    write_csv(make_survival(n=60, p=2, seed=12), path)
    out = tmp_path / "out"
    rc = main(["subsample", str(path), *SCHEMA, "--sizes", "40",
               "--draws", "3", "--methods", "cox-all", "--folds", "3",
               "--outdir", str(out)])
    assert rc == 0
    assert "benchmark" in capsys.readouterr().out
    body = (out / "subsample.csv").read_text().splitlines()
    assert body[1].split(",") == ["n", "method", "bias", "sd", "mean_se",
                                  "coverage"]
    assert len(body) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert np.isfinite(summary["benchmark"])
    assert summary["rows"][0]["n"] == 40
    # sizes are mandatory
    rc = main(["subsample", str(path), *SCHEMA, "--draws", "3",
               "--outdir", str(out)])
    assert rc == 2
