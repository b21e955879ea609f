import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from vecchiagp.cli import CliError, load_config, main, parse_config_text, read_dataset, write_dataset
from vecchiagp.model import MaternParams
from vecchiagp.simulate import simulate_gp


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    prefix = str(d / "run")
    assert main(["simulate", "--n", "1000", "--seed", "3", "--output", prefix]) == 0
    return d, prefix


@pytest.fixture(scope="module")
def fitted(sim):
    d, prefix = sim
    out = str(d / "fit.json")
    assert main(["fit", prefix + "_train.csv", "--m-seq", "10,30", "--output", out]) == 0
    return out


class TestConfig:
    def test_unknown_key_names_line(self):
        with pytest.raises(CliError, match=r":3: unknown key 'colour'"):
            parse_config_text("seed = 1\n# comment\ncolour = red\n", "cfg")

    def test_repeated_key(self):
        with pytest.raises(CliError, match=":2:"):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_override_order(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("seed = 5\nalpha = 0.1  # trailing comment\n")
        cfg = load_config(p, {"seed": "7"})
        assert cfg.seed == 7 and cfg.alpha == 0.1 and cfg.m_seq == (10, 30, 60)

    def test_workers_env(self, monkeypatch):
        monkeypatch.setenv("VECCHIAGP_WORKERS", "3")
        assert load_config().workers == 3
        assert load_config(overrides={"workers": "2"}).workers == 2

    def test_bad_value(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("m_pred = lots\n")
        with pytest.raises(CliError, match=":1: bad value"):
            load_config(p)


class TestSimulate:
    def test_split(self, sim):
        _, prefix = sim
        assert len(rows(prefix + "_train.csv")) == 900 and len(rows(prefix + "_test.csv")) == 100
        man = json.loads(open(prefix + "_train.csv.manifest.json").read())
        assert man["seeds"]["field"] == 4 and man["truth"]["range"] == 0.1 and "config_hash" in man

    def test_byte_identical(self, sim, tmp_path):
        _, prefix = sim
        again = str(tmp_path / "run")
        main(["simulate", "--n", "1000", "--seed", "3", "--output", again])
        for suffix in ("_train.csv", "_test.csv"):
            assert open(prefix + suffix, "rb").read() == open(again + suffix, "rb").read()

    def test_stripes(self, tmp_path):
        prefix = str(tmp_path / "s")
        main(["simulate", "--n", "500", "--pattern", "striped_gaps", "--n-stripes", "2", "--stripe-width", "0.2", "--output", prefix])
        pts = np.vstack([read_dataset(prefix + s).points for s in ("_train.csv", "_test.csv")])
        for c in (0.25, 0.75):
            assert not np.any(np.abs(pts[:, 1] - c) <= 0.1)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        pts, y = rng.uniform(size=(20, 2)), rng.standard_normal(20)
        write_dataset(tmp_path / "d.csv", pts, y)
        d = read_dataset(tmp_path / "d.csv")
        np.testing.assert_array_equal(d.points, pts)
        np.testing.assert_array_equal(d.responses, y)


class TestFit:
    def test_report(self, fitted):
        rep = json.loads(open(fitted).read())
        p = rep["params"]
        assert abs(p["sigma_sq"] - 1) < 0.6 and abs(p["range"] - 0.1) < 0.06
        assert set(rep) >= {"params", "std_errors", "loglik", "converged", "data_sha256", "parameters"}

    def test_zero_variance(self, tmp_path, capsys):
        pts = np.random.default_rng(0).uniform(size=(40, 2))
        write_dataset(tmp_path / "c.csv", pts, np.ones(40))
        assert main(["fit", str(tmp_path / "c.csv")]) == 2
        assert "column 'value'" in capsys.readouterr().err

    def test_malformed_row(self, tmp_path, capsys):
        lines = ["x,y,value"] + [f"{i / 30},{i / 31},{i % 3}" for i in range(30)]
        lines[17] = "0.5,oops,1"
        (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
        assert main(["fit", str(tmp_path / "bad.csv")]) == 2
        assert "row 17" in capsys.readouterr().err

    def test_detrend(self, tmp_path):
        rng = np.random.default_rng(4)
        pts = rng.uniform(size=(600, 2))
        y = 2 + pts[:, 0] - pts[:, 1] + simulate_gp(pts, MaternParams(0.3, 0.01, 0.5, 0.05), seed=5)
        write_dataset(tmp_path / "t.csv", pts, y)
        out = str(tmp_path / "t.json")
        assert main(["fit", str(tmp_path / "t.csv"), "--detrend", "true", "--m-seq", "10", "--output", out]) == 0
        rec = json.loads(open(out).read())["detrend"]
        x = np.column_stack([np.ones(600), pts])
        ols = np.linalg.lstsq(x, y, rcond=None)[0]
        np.testing.assert_allclose(rec["coefficients"], ols, rtol=1e-10)
        for c, s, t in zip(rec["coefficients"], rec["std_errors"], (2, 1, -1)):
            assert abs(c - t) <= 3 * s


class TestPredict:
    def test_interval_width_and_manifest(self, sim, fitted, tmp_path):
        _, prefix = sim
        out = str(tmp_path / "pred.csv")
        assert main(["predict", prefix + "_train.csv", prefix + "_test.csv", "--fit", fitted, "--output", out]) == 0
        r = rows(out)
        assert len(r) == 100 and list(r[0]) == ["x", "y", "mean", "sd", "lower", "upper", "flag"]
        for row in r:
            assert float(row["upper"]) - float(row["lower"]) == pytest.approx(3.919928 * float(row["sd"]), abs=1e-6)
        assert json.loads(open(out + ".manifest.json").read())["command"] == "predict"

    def test_interpolates_training_sites(self, sim, fitted, tmp_path):
        _, prefix = sim
        out = str(tmp_path / "self.csv")
        main(["predict", prefix + "_train.csv", prefix + "_train.csv", "--fit", fitted, "--output", out])
        tau2 = json.loads(open(fitted).read())["params"]["nugget"]
        pred = np.array([float(x["mean"]) for x in rows(out)])
        obs = read_dataset(prefix + "_train.csv").responses
        assert np.max(np.abs(pred - obs)) <= 3 * math.sqrt(tau2)

    def test_empty_sites(self, sim, fitted, tmp_path):
        _, prefix = sim
        (tmp_path / "none.csv").write_text("x,y\n")
        out = str(tmp_path / "e.csv")
        main(["predict", prefix + "_train.csv", str(tmp_path / "none.csv"), "--fit", fitted, "--output", out])
        assert open(out).read() == "x,y,mean,sd,lower,upper,flag\n"

    def test_missing_fit(self, sim, tmp_path):
        _, prefix = sim
        assert main(["predict", prefix + "_train.csv", prefix + "_test.csv", "--fit", str(tmp_path / "nope.json")]) == 2


class TestOtherCommands:
    def test_bootstrap_min_reps(self, sim, fitted, capsys):
        _, prefix = sim
        assert main(["bootstrap-ci", prefix + "_train.csv", "--fit", fitted, "--n-reps", "49"]) == 2
        assert "n_reps" in capsys.readouterr().err

    def test_crossval_unknown_method(self, sim, capsys):
        _, prefix = sim
        assert main(["crossval", prefix + "_train.csv", "--methods", "vecchia,gapfill"]) == 2
        err = capsys.readouterr().err
        assert "gapfill" in err and "local_gaussian" in err

    def test_crossval_single(self, sim, tmp_path):
        _, prefix = sim
        out = str(tmp_path / "cv.csv")
        main(["crossval", prefix + "_test.csv", "--methods", "local_gaussian", "--delta", "0.2", "--output", out])
        assert [r["fold"] for r in rows(out)] == ["0", "1", "2", "mean"]

    def test_variogram_constant(self, tmp_path):
        pts = np.random.default_rng(0).uniform(size=(50, 2))
        write_dataset(tmp_path / "c.csv", pts, np.full(50, 3.0))
        out = str(tmp_path / "v.csv")
        main(["variogram", str(tmp_path / "c.csv"), "--output", out])
        assert all(r["semivariance"] in ("0.0", "NA") for r in rows(out))

    def test_variogram_bins(self, sim, capsys):
        _, prefix = sim
        assert main(["variogram", prefix + "_train.csv", "--n-bins", "0"]) == 2


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "vecchiagp.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "vecchiagp" in out.stdout
