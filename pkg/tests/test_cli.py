import csv
import json

import numpy as np
import pytest

from panelvar import pipeline
from panelvar.cli import main
from panelvar.errors import ConfigError
from panelvar.market_data import IntradayPanel, Session, write_ticks
from panelvar.simulate import SimConfig, simulate_paths

SMALL = """
# tiny study that finishes in seconds
days = 320
window = 200
n_assets = 2
intraday_steps = 42
replications = 2
dq_reps = 19
taus = 0.05, 0.95
"""


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "study.cfg"
    path.write_text(SMALL)
    return path


@pytest.fixture(scope="module")
def tick_file(tmp_path_factory):
    out = simulate_paths(SimConfig(days=150, intraday_steps=78, n_assets=2, seed=1))
    p = out.panel
    path = tmp_path_factory.mktemp("ticks") / "prices.csv"
    write_ticks(IntradayPanel(p.assets, p.days, 300, p.log_prices), path, Session())
    return path


class TestConfig:
    def test_parse_comments_and_aliases(self):
        values = pipeline.parse_config_text("lambda = 1  # penalty\n\nmodels = pqr-rv, rm\n")
        cfg = pipeline.make_config(values)
        assert cfg.lam == 1.0 and cfg.models == ("PQR_RV", "RISKMETRICS")

    def test_flags_override_file(self):
        cfg = pipeline.make_config({"window": "500", "seed": "3"}, {"window": 250, "seed": None})
        assert cfg.window == 250 and cfg.seed == 3

    def test_all_problems_reported(self):
        with pytest.raises(ConfigError) as info:
            pipeline.make_config({"taus": "0.05, 1.5", "window": "1", "lam": "-1"})
        msg = str(info.value)
        assert "taus" in msg and "window" in msg and "lambda" in msg

    def test_unknown_key_and_model(self):
        with pytest.raises(ConfigError) as info:
            pipeline.make_config({"colour": "red", "models": "garch"})
        assert "colour" in str(info.value) and "garch" in str(info.value)

    def test_digest_ignores_output_location(self):
        a = pipeline.make_config({}, {"out_dir": "x"})
        b = pipeline.make_config({}, {"out_dir": "y"})
        assert a.digest() == b.digest()


class TestCommands:
    def test_invalid_config_exit_code(self, tmp_path):
        out = tmp_path / "bad"
        assert main(["study", "--simulate", "mvn", "--taus", "0,0.5", "--out-dir", str(out)]) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "invalid-config" and "taus" in manifest["error"]

    def test_riskmetrics_median_forecasts(self, tmp_path, tick_file):
        out = tmp_path / "rm"
        code = main(
            ["run", "--data", str(tick_file), "--models", "riskmetrics", "--taus", "0.5",
             "--window", "50", "--dq-reps", "19", "--out-dir", str(out)]
        )
        assert code == 0
        rows = read_csv(out / "forecasts.csv")
        assert rows[0] == ["date", "model", "tau", "var_forecast", "realized_return", "flag"]
        assert len(rows) == 1 + 150 - 51
        assert all(float(r[3]) == 0.0 and r[5] == "DegenerateCutoff" for r in rows[1:])
        assert read_csv(out / "gmvar.csv")[1] == ["RISKMETRICS", "0.5", "NA"]
        assert json.loads((out / "manifest.json").read_text())["status"] == "ok"

    def test_fit_stage(self, tmp_path, tick_file):
        out = tmp_path / "fit"
        assert main(["fit", "--data", str(tick_file), "--models", "pqr-rv", "--taus", "0.05,0.5",
                     "--bootstrap", "20", "--out-dir", str(out)]) == 0
        rows = read_csv(out / "fit_pqr-rv.csv")
        assert rows[0] == ["tau", "lambda", "param_name", "estimate", "tstat"]
        assert {r[2] for r in rows[1:]} >= {"RV^1/2"}

    def test_failure_writes_manifest(self, tmp_path, tick_file):
        out = tmp_path / "fail"
        # the window leaves no day to forecast; this is only known after loading
        code = main(["run", "--data", str(tick_file), "--models", "pqr-rv", "--taus", "0.05",
                     "--window", "149", "--out-dir", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        assert code == 1 and manifest["status"] == "failed"
        assert "InsufficientObservations" in manifest["error"]
        assert "measures.csv" in manifest["outputs"]

    def test_study_tables(self, tmp_path, small_config):
        out = tmp_path / "study"
        assert main(["study", "--config", str(small_config), "--simulate", "mvn",
                     "--models", "pqr-rv,riskmetrics", "--out-dir", str(out)]) == 0
        head = read_csv(out / "panel_a.csv")[0]
        for col in ("tau_avg", "tau_max", "tau_min", "tau_avg_dev", "dq_violations"):
            assert col in head
        coef = read_csv(out / "coefficients.csv")
        assert any(r[0] == "PQR-RV" for r in coef[1:])

    def test_single_model_panel_b(self, tmp_path, small_config):
        out = tmp_path / "one"
        assert main(["study", "--config", str(small_config), "--simulate", "mvn",
                     "--models", "riskmetrics", "--out-dir", str(out)]) == 0
        rows = read_csv(out / "panel_b.csv")
        assert len(rows) == 2 and "single model" in rows[1][-1]

    def test_empty_model_list(self, tmp_path, small_config):
        out = tmp_path / "none"
        assert main(["study", "--config", str(small_config), "--simulate", "mvn",
                     "--models", "", "--out-dir", str(out)]) == 0
        for name in ("panel_a.csv", "panel_b.csv", "gmvar.csv"):
            assert len(read_csv(out / name)) == 1

    def test_rerun_is_byte_identical(self, tmp_path, small_config):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert main(["study", "--config", str(small_config), "--simulate", "mvn",
                         "--models", "pqr-rv,uqr-rv,riskmetrics", "--seed", "7", "--out-dir", str(out)]) == 0
        names = sorted(p.name for p in outs[0].iterdir())
        assert names == sorted(p.name for p in outs[1].iterdir())
        for name in names:
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name

    def test_simulate_command(self, tmp_path):
        out = tmp_path / "sim"
        assert main(["simulate", "--days", "5", "--assets", "2", "--window", "3", "--out-dir", str(out)]) == 0
        assert (out / "ledger.csv").exists() and (out / "measures.csv").exists()
