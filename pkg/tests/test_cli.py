"""Command-line surface: file outputs, exit codes, determinism."""

import json
import os

import pytest
import yaml

from steerid.cli import main
from steerid.config import ConfigError, ExperimentConfig
from steerid.report import load_dataset

RECOVERY_CFG = {
    "vehicle": {"mass": 3.1, "lf": 0.159, "lr": 0.171, "Iz": 0.04712,
                "h_cg": 0.074, "mu": 1.0489, "C_Sf": 4.728, "C_Sr": 5.546,
                "max_steer": 0.34},
    "rollout": {"dt": 0.005, "steps": 300, "integrator": "euler"},
    "problem": {"mode": "trajectory_match",
                "decision": ["lf", "lr", "C_Sf", "C_Sr"],
                "init_ranges": {"lf": [0.08, 0.25], "lr": [0.08, 0.25],
                                "C_Sf": [2.5, 8.0], "C_Sr": [2.5, 8.0]},
                "target_speed": 1.0},
    "losses": {"weight": 100.0, "gamma": 0.01, "stride": 10},
    "optimizer": {"kind": "adam", "epochs": 4, "batch": 2, "lr": 0.02,
                  "clip_norm": 100.0,
                  "early_stopping": {"enabled": False}},
    "generation": {"count": 4, "val_count": 1},
    "seeds": {"base": 0, "count": 1},
}

EVAL_CFG = {
    "vehicle": RECOVERY_CFG["vehicle"],
    "rollout": {"dt": 0.002, "steps": 400, "integrator": "rk4"},
    "problem": {"mode": "lane_keeping", "decision": ["mass", "C_af"],
                "init_ranges": {"mass": [0.5, 40.0], "C_af": [10.0, 50.0]},
                "target_speed": 1.0, "ema_alpha": 0.05,
                "scale_derivative_by_dt": True},
    "poles": ["-2+2j", "-2-2j", "-150+15j", "-150-15j"],
    "reference": {"radius": 30.0, "side": "left", "lateral_offset": 1.0},
}


def write_cfg(tmp_path, payload, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(payload))
    return str(path)


@pytest.fixture
def recovery_cfg(tmp_path):
    cfg = dict(RECOVERY_CFG)
    cfg["output_dir"] = str(tmp_path / "out")
    return write_cfg(tmp_path, cfg)


class TestGenerate:
    def test_writes_trajectories_manifest_and_figure(self, tmp_path, recovery_cfg):
        out = str(tmp_path / "ds")
        assert main(["generate", "--config", recovery_cfg, "--out", out]) == 0
        files = sorted(os.listdir(out))
        assert "manifest.json" in files
        assert "fig_dataset.png" in files
        assert sum(f.startswith("traj_") for f in files) == 4
        data = load_dataset(out)
        assert len(data.runs) == 4

    def test_seed_determinism_byte_identical(self, tmp_path, recovery_cfg):
        outs = []
        for name in ("a", "b"):
            out = str(tmp_path / name)
            assert main(["generate", "--config", recovery_cfg, "--out", out,
                         "--seed", "7", "--no-figures"]) == 0
            outs.append(out)
        for fname in sorted(os.listdir(outs[0])):
            with open(os.path.join(outs[0], fname), "rb") as fa, \
                    open(os.path.join(outs[1], fname), "rb") as fb:
                assert fa.read() == fb.read(), fname

    def test_count_one_is_config_error(self, tmp_path, recovery_cfg):
        code = main(["generate", "--config", recovery_cfg,
                     "--out", str(tmp_path / "x"), "--count", "1"])
        assert code == 2


class TestIdentify:
    @pytest.fixture
    def dataset(self, tmp_path, recovery_cfg):
        out = str(tmp_path / "ds")
        main(["generate", "--config", recovery_cfg, "--out", out,
              "--no-figures"])
        return out

    def test_outputs_and_headers(self, tmp_path, recovery_cfg, dataset):
        out = str(tmp_path / "run")
        code = main(["identify", "--config", recovery_cfg,
                     "--dataset", dataset, "--out", out, "--no-figures"])
        assert code == 0
        files = os.listdir(out)
        assert "report_seed0.json" in files
        assert "loss_curve_seed0.csv" in files
        assert "loss_curve_mean.csv" in files
        with open(os.path.join(out, "loss_curve_seed0.csv")) as fh:
            assert fh.readline().strip() == "epoch,split,loss"
        with open(os.path.join(out, "param_curve_seed0.csv")) as fh:
            assert fh.readline().strip() == "epoch,lf,lr,C_Sf,C_Sr"
        with open(os.path.join(out, "report_seed0.json")) as fh:
            rep = json.load(fh)
        assert rep["config"]["problem"]["mode"] == "trajectory_match"
        assert len(rep["records"]) >= 4

    def test_loss_curves_reproducible(self, tmp_path, recovery_cfg, dataset):
        payloads = []
        for name in ("r1", "r2"):
            out = str(tmp_path / name)
            assert main(["identify", "--config", recovery_cfg,
                         "--dataset", dataset, "--out", out, "--seed", "3",
                         "--no-figures"]) == 0
            with open(os.path.join(out, "loss_curve_seed3.csv"), "rb") as fh:
                payloads.append(fh.read())
        assert payloads[0] == payloads[1]

    def test_missing_dataset_path_is_config_error(self, tmp_path, recovery_cfg):
        code = main(["identify", "--config", recovery_cfg,
                     "--dataset", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "r"), "--no-figures"])
        assert code == 2

    def test_cmaes_curve_allows_empty_cells(self, tmp_path, recovery_cfg, dataset):
        out = str(tmp_path / "runc")
        code = main(["identify", "--config", recovery_cfg,
                     "--dataset", dataset, "--out", out,
                     "--optimizer", "cmaes", "--epochs", "2", "--no-figures"])
        assert code == 0
        with open(os.path.join(out, "loss_curve_seed0.csv")) as fh:
            header = fh.readline().strip()
        assert header == "epoch,split,loss"


class TestGains:
    def test_prints_gains_and_eigenvalues(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, EVAL_CFG)
        assert main(["gains", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "k1" in out and "eigenvalues" in out

    def test_unstable_pole_rejected(self, tmp_path):
        bad = dict(EVAL_CFG)
        bad["poles"] = [2.0, -4.0, -7.0, -10.0]
        cfg = write_cfg(tmp_path, bad)
        assert main(["gains", "--config", cfg]) == 2

    def test_check_grad_writes_reports(self, tmp_path):
        cfg = write_cfg(tmp_path, EVAL_CFG)
        out = str(tmp_path / "g")
        assert main(["gains", "--config", cfg, "--check-grad",
                     "--out", out]) == 0
        with open(os.path.join(out, "gains.json")) as fh:
            payload = json.load(fh)
        assert "gradient_checks" in payload
        for rep in payload["gradient_checks"].values():
            assert rep["max_rel_err"] < 1e-4


class TestEvaluate:
    def test_writes_profile_and_summary(self, tmp_path):
        cfg_d = dict(EVAL_CFG)
        cfg_d["output_dir"] = str(tmp_path / "ev")
        cfg = write_cfg(tmp_path, cfg_d)
        assert main(["evaluate", "--config", cfg, "--no-figures"]) == 0
        out = cfg_d["output_dir"]
        with open(os.path.join(out, "errors.csv")) as fh:
            assert fh.readline().strip() == "t,e1,e1_dot,e2,e2_dot"
            assert len(fh.readlines()) == 400
        with open(os.path.join(out, "summary.json")) as fh:
            summary = json.load(fh)
        assert set(summary) >= {"steady_state_abs_e1", "steady_state_abs_e2",
                                "gains", "eigenvalues"}

    def test_identified_gains_from_report(self, tmp_path, recovery_cfg):
        ds = str(tmp_path / "ds2")
        main(["generate", "--config", recovery_cfg, "--out", ds,
              "--no-figures"])
        run = str(tmp_path / "run2")
        main(["identify", "--config", recovery_cfg, "--dataset", ds,
              "--out", run, "--no-figures"])
        cfg_d = dict(EVAL_CFG)
        cfg_d["output_dir"] = str(tmp_path / "ev2")
        cfg = write_cfg(tmp_path, cfg_d, name="eval.yaml")
        code = main(["evaluate", "--config", cfg, "--gains-from", "identified",
                     "--report", os.path.join(run, "report_seed0.json"),
                     "--no-figures"])
        assert code == 0

    def test_missing_report_path_echoed(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, EVAL_CFG)
        code = main(["evaluate", "--config", cfg, "--gains-from", "identified",
                     "--report", "/nonexistent/r.json", "--no-figures",
                     "--out", str(tmp_path / "e")])
        assert code == 2
        assert "/nonexistent/r.json" in capsys.readouterr().err


class TestConfig:
    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key extra"):
            ExperimentConfig.from_dict({"extra": 1})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ConfigError, match="vehicle.massa"):
            ExperimentConfig.from_dict({"vehicle": {"massa": 3.0}})

    def test_unknown_key_exit_code(self, tmp_path):
        cfg = write_cfg(tmp_path, {"vehicle": {"bogus": 1.0}})
        assert main(["gains", "--config", cfg]) == 2

    def test_missing_config_file(self):
        assert main(["gains", "--config", "/does/not/exist.yaml"]) == 2

    def test_pole_formats(self):
        cfg = ExperimentConfig.from_dict(
            {"poles": [-5, "-2+2j", [-1.0, 0.5]]})
        assert cfg.poles == (complex(-5, 0), complex(-2, 2), complex(-1, 0.5))

    def test_resolved_config_round_trips(self):
        cfg = ExperimentConfig.from_dict(RECOVERY_CFG)
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    def test_figures_rendered_by_default(self, tmp_path, recovery_cfg):
        out = str(tmp_path / "dsfig")
        assert main(["generate", "--config", recovery_cfg, "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "fig_dataset.png"))
