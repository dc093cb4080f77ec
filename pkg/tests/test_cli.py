import json

import pytest

from fbbs.cli import main, parse_config
from fbbs.errors import ConfigError
from fbbs.sitegen import load_dataset


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config(None, [])
        assert cfg["n_antennas"] == 32
        assert cfg["budget_set"] == (9, 15, 21, 32)

    def test_file_parsing(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment line\n"
            "n_antennas = 16\n"
            "budgets = 4, 8, 16   # trailing comment\n"
            "\n"
            "learning_rate = 1e-3\n"
        )
        cfg = parse_config(str(path), [])
        assert cfg["n_antennas"] == 16
        assert cfg["budgets"] == (4, 8, 16)
        assert cfg["learning_rate"] == 1e-3

    def test_override_beats_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("n_antennas = 16\n")
        cfg = parse_config(str(path), ["n_antennas=8"])
        assert cfg["n_antennas"] == 8

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError, match="frobnicate"):
            parse_config(None, ["frobnicate=3"])

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="n_antennas"):
            parse_config(None, ["n_antennas=many"])

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("just some words\n")
        with pytest.raises(ConfigError, match="run.cfg:1"):
            parse_config(str(path), [])

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            parse_config(None, ["noequals"])

    def test_bool_and_path_keys(self):
        cfg = parse_config(None, ["use_ema=false", "dataset=/tmp/x.ds"])
        assert cfg["use_ema"] is False
        assert cfg["dataset"] == "/tmp/x.ds"


class TestMain:
    def test_selftest_exit_zero(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_missing_out(self, capsys):
        assert main(["gen-data"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_override_exit_code(self, capsys):
        assert main(["gen-data", "--set", "bogus=1", "--out", "/tmp/x"]) == 1
        assert "bogus" in capsys.readouterr().err

    def test_missing_dataset_file(self, capsys, tmp_path):
        rc = main(["train", "--set", f"dataset={tmp_path}/none.ds",
                   "--out", str(tmp_path / "m.ckpt")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_gen_data_roundtrip(self, capsys, tmp_path):
        out = tmp_path / "tiny.ds"
        rc = main(["gen-data", "--set", "n_antennas=8", "--set", "n_users=20",
                   "--out", str(out)])
        assert rc == 0
        assert "wrote dataset" in capsys.readouterr().out
        ds = load_dataset(str(out))
        assert ds.n_users == 20 and ds.n_antennas == 8

    def test_train_then_eval_pipeline(self, capsys, tmp_path):
        ds_path = tmp_path / "tiny.ds"
        assert main(["gen-data", "--set", "n_antennas=8", "--set", "n_users=24",
                     "--out", str(ds_path)]) == 0
        ckpt = tmp_path / "tiny.ckpt"
        train_args = [
            "train", "--set", f"dataset={ds_path}", "--set", "n_antennas=8",
            "--set", "embed_dim=16", "--set", "n_blocks=1", "--set", "n_heads=2",
            "--set", "cond_dim=16", "--set", "max_epochs=2",
            "--set", "stage1_epochs=1", "--set", "budget_set=3,5,8",
            "--set", "save_stage1=true", "--out", str(ckpt),
        ]
        assert main(train_args) == 0
        assert ckpt.exists() and (tmp_path / "tiny.ckpt.stage1").exists()
        assert (tmp_path / "tiny.ckpt.loss.csv").exists()

        out_csv = tmp_path / "eval.csv"
        eval_args = [
            "eval", "--set", f"dataset={ds_path}", "--set", f"checkpoint={ckpt}",
            "--set", "budgets=4,8", "--set", "brainstorm_list=1,2",
            "--set", "steps_list=1", "--set", "n_test_users=4",
            "--out", str(out_csv),
        ]
        assert main(eval_args) == 0
        lines = out_csv.read_text().splitlines()
        assert lines[0].startswith("method,q,m,steps")
        assert len(lines) > 3
        manifest = json.loads((tmp_path / "eval.csv.manifest.json").read_text())
        assert "fbbs" in manifest["checkpoints"]

    def test_seed_flag_propagates(self, tmp_path):
        a = tmp_path / "a.ds"
        b = tmp_path / "b.ds"
        for out in (a, b):
            assert main(["gen-data", "--set", "n_antennas=8",
                         "--set", "n_users=20", "--seed", "77",
                         "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
