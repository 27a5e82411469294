import csv
import json
from unittest import mock

import pytest

from sthawkes.cli import main
from sthawkes.estimation import Objective

SIM = """
[model]
preset = "m2-1"

[simulate]
T = 200
center = [44.4, 33.3]
window_km = [60, 60]
epoch = "2005-01-01"
seed = 11

[simulate.params]
mu = 2e-4
alpha = 0.5
beta = 5.0
phi = 4.0

[grid]
n_s = 100
n_t = 40

[optimizer]
n_starts = 1
"""


def _cfg(tmp_path, extra="", name="cfg.toml"):
    p = tmp_path / name
    p.write_text(SIM + extra)
    return p


def test_simulate_is_byte_reproducible(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    for f in ("events.csv", "window.txt", "simulation.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "12"]) == 0
    assert (tmp_path / "a/events.csv").read_bytes() != (tmp_path / "c/events.csv").read_bytes()
    meta = json.loads((tmp_path / "a/simulation.json").read_text())["meta"]
    assert meta["seed"] == 11 and len(meta["config_hash"]) == 16


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    sim = d / "sim.toml"
    sim.write_text(SIM)
    assert main(["simulate", "--config", str(sim), "--out", str(d / "sim")]) == 0
    data = ('\n[data]\nevents = "sim/events.csv"\nwindow = "sim/window.txt"\n'
            'epoch = "2005-01-01"\nend = "2005-07-20"\n'
            '\n[fit]\ntrain_end = "2005-06-01"\n'
            '\n[eval]\nfit = "fit1/fit.json"\nsplit = "2005-06-01"\n'
            '\n[diagnose]\nmax_dt = 50\nmax_ds = 40\nbins = [10, 8]\n')
    cfg = d / "cfg.toml"
    cfg.write_text(SIM + data)
    return d, cfg


def test_ingest_fit_eval_diagnose_compare(pipeline):
    d, cfg = pipeline
    assert main(["ingest", "--config", str(cfg), "--out", str(d / "ing")]) == 0
    rep = json.loads((d / "ing/ingest_report.json").read_text())
    assert rep["n_kept"] > 0
    assert main(["fit", "--config", str(cfg), "--out", str(d / "fit1")]) == 0
    assert main(["fit", "--config", str(cfg), "--out", str(d / "fit0"), "--preset", "poisson-const"]) == 0
    fit = json.loads((d / "fit1/fit.json").read_text())
    assert fit["model_name"] == "m2-1" and fit["k"] == 3
    rows = [r for r in csv.reader(open(d / "fit1/table.csv")) if r and not r[0].startswith("#")]
    assert rows[0] == ["parameter", "estimate", "se"] and rows[-1][0] == "hq"

    assert main(["eval", "--config", str(cfg), "--out", str(d / "ev")]) == 0
    ev = json.loads((d / "ev/eval.json").read_text())
    assert ev["n_test"] > 0 and ev["holdout_loglik"] < 0
    assert (d / "ev/expected_daily.csv").exists()

    assert main(["diagnose", "--config", str(cfg), "--out", str(d / "dg")]) == 0
    assert (d / "dg/lag_hist_0_0.csv").exists() and (d / "dg/daily_counts.csv").exists()

    assert main(["compare", str(d / "fit0/fit.json"), str(d / "fit1/fit.json"),
                 "--out", str(d / "cmp")]) == 0
    rows = list(csv.DictReader(l for l in open(d / "cmp/comparison.csv") if not l.startswith("#")))
    assert [r["rank"] for r in rows] == ["1", "2"]
    assert rows[0]["best_aic"] == "True"


def test_exit_codes(pipeline, tmp_path, capsys):
    d, cfg = pipeline
    assert main(["fit", "--config", str(tmp_path / "nope.toml")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text(SIM + '\n[data]\nevents = "e.csv"\n')
    (tmp_path / "e.csv").write_text("A,2005-01-01,44.0,33.3\nA,garbage,44.0,33.3\n")
    assert main(["ingest", "--config", str(bad), "--out", str(tmp_path / "o")]) == 3
    assert main(["ingest", "--config", str(bad), "--out", str(tmp_path / "o"), "--skip-bad-rows"]) == 0
    unknown = tmp_path / "unk.toml"
    unknown.write_text(cfg.read_text().replace("n_starts = 1", "n_starts = 1\nbogus = 2"))
    assert main(["fit", "--config", str(unknown), "--out", str(tmp_path / "o")]) == 2
    with mock.patch.object(Objective, "__call__", return_value=1e12):
        assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4
    assert "optimizer failure" in capsys.readouterr().err


def test_compare_rejects_mixed_catalogs(pipeline, tmp_path):
    d, _ = pipeline
    fit = json.loads((d / "fit1/fit.json").read_text())
    fit["n"] += 1
    other = tmp_path / "other.json"
    other.write_text(json.dumps(fit))
    assert main(["compare", str(d / "fit1/fit.json"), str(other), "--out", str(tmp_path)]) == 3
