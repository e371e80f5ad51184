"""CLI tests: subcommand round-trips, determinism, config precedence, exit codes."""

import numpy as np
import pytest

from preflab.cli import main
from preflab.data import load_dataset


def run(argv):
    return main(argv)


@pytest.fixture
def episodes_file(tmp_path):
    path = tmp_path / "episodes.jsonl"
    assert run(["gen-data", "--env", "maze7", "--episodes", "12", "--seed", "0",
                "--episode-len", "40", "--out", str(path)]) == 0
    return path


@pytest.fixture
def labeled_file(tmp_path, episodes_file):
    path = tmp_path / "labeled.jsonl"
    assert run(["label-oracle", "--data", str(episodes_file), "--pairs", "12",
                "--segment-len", "16", "--seed", "1", "--out", str(path)]) == 0
    return path


@pytest.fixture
def checkpoint(tmp_path, labeled_file):
    path = tmp_path / "model.ckpt"
    assert run(["train", "--variant", "markov", "--data", str(labeled_file),
                "--epochs", "3", "--lr", "1e-3", "--seed", "0",
                "--out", str(path), "--curve-out", str(tmp_path / "curve.csv")]) == 0
    return path


class TestGenData:
    def test_deterministic_outputs_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        args = ["gen-data", "--env", "maze7", "--episodes", "20", "--seed", "0"]
        assert run(args + ["--out", str(a)]) == 0
        assert run(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bad_flag_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            run(["gen-data", "--env", "pong", "--out", str(tmp_path / "x.jsonl")])
        assert err.value.code == 2

    def test_missing_data_path_is_named_error(self, tmp_path):
        code = run(["label-oracle", "--data", str(tmp_path / "nope.jsonl"),
                    "--out", str(tmp_path / "o.jsonl")])
        assert code == 1


class TestLabeledData:
    def test_labeled_file_round_trips(self, labeled_file):
        ds = load_dataset(labeled_file)
        assert len(ds.triples) == 12
        assert all(t.source == "oracle" for t in ds.triples)

    def test_train_then_eval_and_relabel(self, tmp_path, episodes_file, labeled_file, checkpoint):
        assert run(["eval", "--checkpoint", str(checkpoint), "--data", str(labeled_file),
                    "--tie-band", "0.05", "--out", str(tmp_path / "eval.csv")]) == 0
        assert (tmp_path / "eval.csv").exists()
        assert (tmp_path / "curve.csv").read_text().startswith("epoch,mean_loss,eval_accuracy")
        relabeled = tmp_path / "relabeled.jsonl"
        assert run(["relabel", "--checkpoint", str(checkpoint), "--data", str(episodes_file),
                    "--window", "16", "--out", str(relabeled)]) == 0
        ds = load_dataset(relabeled)
        assert all(t.learned_rewards is not None for t in ds.trajectories.values())
        qcsv = tmp_path / "q.csv"
        assert run(["train-policy", "--data", str(relabeled), "--sweeps", "30",
                    "--out", str(qcsv)]) == 0
        assert len(qcsv.read_text().splitlines()) == 1 + 49 * 4

    def test_train_missing_data_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            run(["train", "--variant", "markov", "--out", str(tmp_path / "m.ckpt")])
        assert err.value.code == 2


class TestAttentionExport:
    def test_export(self, tmp_path, episodes_file, labeled_file):
        ckpt = tmp_path / "mm.ckpt"
        assert run(["train", "--variant", "multimodal", "--data", str(labeled_file),
                    "--epochs", "1", "--d-model", "16", "--heads", "2", "--t-max", "16",
                    "--out", str(ckpt)]) == 0
        out = tmp_path / "att.csv"
        assert run(["export-attention", "--checkpoint", str(ckpt), "--data", str(episodes_file),
                    "--segment-index", "0", "--out", str(out)]) == 0
        assert out.read_text().startswith("t,w_state,w_action,w_inter,reward")


class TestConfigFile:
    def test_config_overrides_defaults_flags_override_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("episodes=7\nseed=3\n")
        out = tmp_path / "eps.jsonl"
        assert run(["gen-data", "--env", "maze7", "--config", str(cfg),
                    "--seed", "5", "--out", str(out)]) == 0
        ds = load_dataset(out)
        assert len(ds.trajectories) == 7  # from config file
        assert all("-s5-" in k for k in ds.trajectories)  # flag beat config

    def test_unknown_config_key_is_usage_error(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("episodez=7\n")
        with pytest.raises(SystemExit) as err:
            run(["gen-data", "--env", "maze7", "--config", str(cfg),
                 "--out", str(tmp_path / "x.jsonl")])
        assert err.value.code == 2
