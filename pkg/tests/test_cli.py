"""CLI surface: every subcommand exercised end to end at toy scale."""

import csv
import json

import numpy as np
import pytest
from PIL import Image

from daae.cli import main
from daae.config import config_hash, load_config
from daae.errors import ConfigError

pytestmark = pytest.mark.slow


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def train_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "cnn_run"
    code = run_cli(
        "train", "--variant", "cnn", "--synth", "60", "--epochs", "1",
        "--seed", "1", "--out", str(out),
        "--set", "train.batch_size=8", "--set", "train.steps_per_epoch=2",
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def aae_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "ssdaae_run"
    code = run_cli(
        "train", "--variant", "ssdaae", "--synth", "60", "--epochs", "1",
        "--sigma", "0.1", "--seed", "1", "--out", str(out),
        "--set", "train.batch_size=4", "--set", "train.steps_per_epoch=2",
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "synthds"
    code = run_cli(
        "synth-data", "--n-per-class", "40", "--seed", "2", "--out", str(out),
        "--set", "data.n_unlabelled=30", "--set", "data.n_labelled_train=20",
        "--set", "data.n_val=12", "--set", "data.n_test=12",
    )
    assert code == 0
    return out


class TestTrain:
    def test_writes_run_artifacts(self, train_run):
        assert (train_run / "config.json").exists()
        assert (train_run / "steps.jsonl").exists()
        assert (train_run / "checkpoints" / "epoch_0000" / "manifest.json").exists()
        manifest = json.loads(
            (train_run / "checkpoints" / "epoch_0000" / "manifest.json").read_text()
        )
        assert manifest["model"]["kind"] == "cnn"

    def test_sigma_recorded_in_manifest(self, aae_run):
        manifest = json.loads(
            (aae_run / "checkpoints" / "epoch_0000" / "manifest.json").read_text()
        )
        assert manifest["model"]["kind"] == "ssdaae"
        assert manifest["model"]["sigma"] == pytest.approx(0.1)

    def test_rerun_reproduces_step_log(self, train_run, tmp_path):
        rerun = tmp_path / "rerun"
        code = run_cli(
            "train", "--variant", "cnn", "--synth", "60", "--epochs", "1",
            "--seed", "1", "--out", str(rerun),
            "--set", "train.batch_size=8", "--set", "train.steps_per_epoch=2",
        )
        assert code == 0
        assert (rerun / "steps.jsonl").read_bytes() == (train_run / "steps.jsonl").read_bytes()
        for rel in ("checkpoints/best/params/cnn.head.weight.f32",):
            assert (rerun / rel).read_bytes() == (train_run / rel).read_bytes()

    def test_unknown_config_key_exits_nonzero(self, capsys, tmp_path):
        code = run_cli("train", "--set", "train.bogus_key=1", "--out", str(tmp_path / "x"))
        assert code == 2
        assert "bogus_key" in capsys.readouterr().err


class TestEval:
    def test_eval_checkpoint_on_split(self, aae_run, dataset_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        code = run_cli(
            "eval", "--checkpoint", str(aae_run / "checkpoints" / "best"),
            "--data", str(dataset_dir), "--split", "test", "--out", str(out),
        )
        assert code == 0
        rows = list(csv.reader((out / "test_metrics.csv").open()))
        assert rows[0] == ["sensitivity_target", "threshold", "sensitivity", "specificity"]
        assert len(rows) == 6  # header + 4 targets + auc
        scores = list(csv.reader((out / "test_scores.csv").open()))
        assert scores[0] == ["id", "score", "label"]
        assert len(scores) == 13  # header + 12 test examples

    def test_threshold_split_protocol(self, aae_run, dataset_dir, tmp_path):
        out = tmp_path / "eval2"
        code = run_cli(
            "eval", "--checkpoint", str(aae_run / "checkpoints" / "best"),
            "--data", str(dataset_dir), "--split", "test",
            "--threshold-split", "val", "--out", str(out),
        )
        assert code == 0
        assert (out / "test_metrics.csv").exists()


class TestSample:
    def test_grid_written_and_reproducible(self, aae_run, tmp_path):
        out = tmp_path / "samples"
        code = run_cli("sample", "--checkpoint", str(aae_run / "checkpoints" / "best"),
                       "--n", "16", "--label", "both", "--seed", "4", "--out", str(out))
        assert code == 0
        img0 = Image.open(out / "samples_label0_seed4.png")
        assert img0.size == (4 * 64, 4 * 64)  # 16 tiles in a 4x4 grid
        before = (out / "samples_label1_seed4.png").read_bytes()
        assert run_cli("sample", "--checkpoint", str(aae_run / "checkpoints" / "best"),
                       "--n", "16", "--label", "1", "--seed", "4", "--out", str(out)) == 0
        assert (out / "samples_label1_seed4.png").read_bytes() == before

    def test_cnn_checkpoint_rejected(self, train_run, tmp_path, capsys):
        code = run_cli("sample", "--checkpoint", str(train_run / "checkpoints" / "best"),
                       "--out", str(tmp_path))
        assert code == 2
        assert "nothing to sample" in capsys.readouterr().err


class TestPreprocessAndSynthData:
    def test_preprocess_writes_dataset(self, tmp_path):
        img_dir = tmp_path / "raw"
        img_dir.mkdir()
        rng = np.random.default_rng(0)
        tone = np.array([0.82, 0.62, 0.52])
        for i in range(30):
            arr = np.clip(tone[None, None, :] + rng.normal(0, 0.03, (80, 80, 3)), 0, 1)
            Image.fromarray((arr * 255).astype(np.uint8)).save(img_dir / f"img{i}.png")
        labels = tmp_path / "labels.csv"
        rows = [f"img{i},{'malignant' if i % 2 else 'benign'}" for i in range(20)]
        labels.write_text("id,label\n" + "\n".join(rows) + "\n")
        out = tmp_path / "ds"
        code = run_cli(
            "preprocess", "--images", str(img_dir), "--labels", str(labels),
            "--out", str(out), "--seed", "0",
            "--set", "data.n_unlabelled=8", "--set", "data.n_labelled_train=8",
            "--set", "data.n_val=4", "--set", "data.n_test=4",
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["ingest_stats"]["rejected"] == 0
        assert manifest["splits"]["labelled_train"]["count"] == 8
        # rerun is idempotent: byte-identical manifest
        out2 = tmp_path / "ds2"
        run_cli(
            "preprocess", "--images", str(img_dir), "--labels", str(labels),
            "--out", str(out2), "--seed", "0",
            "--set", "data.n_unlabelled=8", "--set", "data.n_labelled_train=8",
            "--set", "data.n_val=4", "--set", "data.n_test=4",
        )
        a = json.loads((out / "manifest.json").read_text())
        b = json.loads((out2 / "manifest.json").read_text())
        a.pop("source"), b.pop("source")
        assert a == b

    def test_synth_data_round_trip(self, dataset_dir):
        from daae.data import load_dataset

        splits, manifest = load_dataset(dataset_dir)
        assert manifest["generator"] == "synthetic"
        assert len(splits["unlabelled"]) == 30
        assert splits["unlabelled"].labels is None
        assert len(splits["val"]) == 12


class TestAblateAndSweep:
    def test_ablate_produces_full_table(self, tmp_path):
        out = tmp_path / "ablation"
        code = run_cli(
            "ablate", "--synth", "60", "--epochs", "1", "--seed", "0", "--out", str(out),
            "--set", "train.batch_size=4", "--set", "train.steps_per_epoch=2",
        )
        assert code == 0
        rows = list(csv.reader((out / "ablation.csv").open()))
        assert rows[0] == ["variant", "sensitivity_target", "threshold", "sensitivity", "specificity"]
        assert len(rows) == 1 + 6 * 4
        variants = {r[0] for r in rows[1:]}
        assert variants == {"cnn", "cnn+noise", "saae", "sdaae", "ssaae", "ssdaae"}
        # fairness: every run logged the same shared hyperparameter hash
        hashes = {
            (out / d / "shared_hash.txt").read_text()
            for d in ("cnn", "cnn_noise", "saae", "sdaae", "ssaae", "ssdaae")
        }
        assert len(hashes) == 1

    def test_noise_sweep_rows(self, tmp_path):
        out = tmp_path / "sweep"
        code = run_cli(
            "noise-sweep", "--synth", "60", "--epochs", "1", "--seed", "0",
            "--sigmas", "0,0.1", "--out", str(out),
            "--set", "train.batch_size=4", "--set", "train.steps_per_epoch=2",
        )
        assert code == 0
        rows = list(csv.reader((out / "sweep.csv").open()))
        assert rows[0] == ["sigma", "sensitivity_target", "specificity"]
        assert len(rows) == 1 + 2 * 4
        assert {r[0] for r in rows[1:]} == {"0.0", "0.1"}

    def test_sweep_default_sigma_list(self):
        from daae.cli import SWEEP_SIGMAS

        assert SWEEP_SIGMAS == (0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0)

    def test_sweep_requires_ssdaae(self, tmp_path, capsys):
        code = run_cli("noise-sweep", "--variant", "cnn", "--synth", "40",
                       "--out", str(tmp_path / "x"))
        assert code == 2


class TestConfig:
    def test_flat_and_nested_forms_agree(self, tmp_path):
        flat = tmp_path / "flat.json"
        flat.write_text(json.dumps({"train.epochs": 7, "variant": "saae"}))
        nested = tmp_path / "nested.json"
        nested.write_text(json.dumps({"train": {"epochs": 7}, "variant": "saae"}))
        a, b = load_config(flat), load_config(nested)
        assert a == b
        assert a.train.epochs == 7

    def test_override_typing(self, tmp_path):
        cfg = load_config(None, ["train.epochs=3", "train.sigma=0.25", "data.augment=true"])
        assert cfg.train.epochs == 3 and isinstance(cfg.train.epochs, int)
        assert cfg.train.sigma == 0.25
        assert cfg.data.augment is True

    def test_unknown_key_rejected_by_name(self):
        with pytest.raises(ConfigError, match="nope"):
            load_config(None, ["train.nope=1"])

    def test_hash_stable_and_sensitive(self):
        a = load_config(None, ["train.epochs=3"])
        b = load_config(None, ["train.epochs=3"])
        c = load_config(None, ["train.epochs=4"])
        assert config_hash(a) == config_hash(b) != config_hash(c)
