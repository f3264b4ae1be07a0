import json

import pytest

from frcap.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUN, main
from frcap.config import ConfigError, apply_override, finalize, load_config, train_config


class TestConfig:
    def test_defaults_validate(self):
        cfg = finalize({}, env={})
        assert cfg["schema_version"] == 1 and cfg["experiment"] == "train"

    def test_experiment_defaults(self):
        cfg = finalize({}, experiment="conditioning", env={})
        assert cfg["dataset"]["kind"] == "piecewise_linear_curve"
        assert cfg["train"]["loss"] == "squared"
        # user values win over experiment defaults
        cfg = finalize({"train": {"loss": "absolute"}}, experiment="conditioning", env={})
        assert cfg["train"]["loss"] == "absolute" and cfg["train"]["damping"] == 1e-3

    def test_override_parsing(self):
        cfg = {"a": {"b": 1}}
        apply_override(cfg, "a.b=2.5")
        apply_override(cfg, "a.c=[1, 2]")
        apply_override(cfg, "d.e=hello")
        assert cfg == {"a": {"b": 2.5, "c": [1, 2]}, "d": {"e": "hello"}}
        with pytest.raises(ConfigError):
            apply_override(cfg, "novalue")
        with pytest.raises(ConfigError, match="not a section"):
            apply_override(cfg, "a.b.c=1")

    def test_overrides_applied(self):
        cfg = finalize({}, ["train.lr=0.5", "network.hidden=[4]", "seed=9"], env={})
        assert cfg["train"]["lr"] == 0.5 and cfg["network"]["hidden"] == [4]
        assert train_config(cfg).seed == 9

    def test_seed_env(self):
        assert finalize({"seed": 1}, env={"FRCAP_SEED": "7"})["seed"] == 7
        with pytest.raises(ConfigError, match="FRCAP_SEED"):
            finalize({}, env={"FRCAP_SEED": "x"})

    def test_validation_errors_name_the_path(self):
        with pytest.raises(ConfigError, match="train.lr"):
            finalize({"train": {"lr": "fast"}}, env={})
        with pytest.raises(ConfigError, match="<root>"):
            finalize({"colour": "red"}, env={})
        with pytest.raises(ConfigError, match="schema_version"):
            finalize({"schema_version": 2}, env={})

    def test_file_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.json", env={})
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(bad, env={})
        bad.write_text("[]")
        with pytest.raises(ConfigError, match="object"):
            load_config(bad, env={})

    def test_train_config_errors(self):
        cfg = finalize({}, env={})
        cfg["train"]["lr"] = -1.0
        with pytest.raises(ConfigError, match="invalid train section"):
            train_config(cfg)


def run_cli(args, tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("FRCAP_SEED", raising=False)
    code = main(args + ["--set", f"output_dir={json.dumps(str(tmp_path))}"])
    return code, capsys.readouterr()


class TestCLI:
    def test_train_ok(self, tmp_path, monkeypatch, capsys):
        code, out = run_cli(["train", "--set", "train.epochs=5", "--set", "network.hidden=[4]"],
                            tmp_path, monkeypatch, capsys)
        assert code == EXIT_OK
        assert (tmp_path / "history.csv").exists() and (tmp_path / "network.json").exists()
        assert str(tmp_path / "summary.json") in out.out

    def test_config_file(self, tmp_path, monkeypatch, capsys):
        cfgf = tmp_path / "c.json"
        cfgf.write_text(json.dumps({"rademacher": {"ps": [2], "Ns": [20], "trials": 50}}))
        code, _ = run_cli(["rademacher", "--config", str(cfgf)], tmp_path, monkeypatch, capsys)
        assert code == EXIT_OK
        lines = (tmp_path / "rademacher.csv").read_text().splitlines()
        assert lines[0] == "p,N,gamma,mean,se,bound,within_bound" and len(lines) == 2

    def test_invalid_config_exit_1(self, tmp_path, monkeypatch, capsys):
        code, out = run_cli(["train", "--set", "train.optimizer=lbfgs"], tmp_path,
                            monkeypatch, capsys)
        assert code == EXIT_CONFIG and "train.optimizer" in out.err

    def test_runtime_config_error_exit_1(self, tmp_path, monkeypatch, capsys):
        code, out = run_cli(["conditioning", "--set", 'dataset.kind="two_blobs"'], tmp_path,
                            monkeypatch, capsys)
        assert code == EXIT_CONFIG and "regression" in out.err

    def test_run_failure_exit_2(self, tmp_path, monkeypatch, capsys):
        code, out = run_cli(["train", "--set", "train.lr=1e8", "--set", "train.loss=squared",
                             "--set", 'dataset.kind="gaussian_linear"'],
                            tmp_path, monkeypatch, capsys)
        assert code == EXIT_RUN and "non-finite" in out.err

    def test_failed_sweep_points_exit_2(self, tmp_path, monkeypatch, capsys):
        code, out = run_cli(["sweep", "--set", "sweep.widths=[2, 3]", "--set", "train.lr=1e8",
                             "--set", 'network.activation="linear"',
                             "--set", "train.loss=squared",
                             "--set", 'dataset.kind="gaussian_linear"'],
                            tmp_path, monkeypatch, capsys)
        assert code == EXIT_RUN and "2 failure(s)" in out.err
        rows = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(rows) == 3 and all(",failed," in r for r in rows[1:])

    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit):
            main(["fit"])
