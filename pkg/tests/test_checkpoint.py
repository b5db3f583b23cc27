"""Checkpoint round-trips: parameters, optimizer buffers, RNG state."""

import numpy as np
import pytest

from daae import checkpoint as ckpt
from daae.data import DataBatch, SynthSpec, synth_generate
from daae.errors import ConfigError
from daae.models import build_variant
from daae.training import TrainConfig, Trainer


def trained_trainer(kind="ssaae", steps=1):
    model = build_variant(kind, sigma=0.1, seed=2)
    trainer = Trainer(model, TrainConfig(epochs=1, batch_size=2, seed=2))
    corpus = synth_generate(SynthSpec(n_per_class=4, seed=0))
    for i in range(steps):
        batch = DataBatch(corpus.images[2 * i : 2 * i + 2],
                          corpus.labels[2 * i : 2 * i + 2].astype(np.float32),
                          corpus.ids[2 * i : 2 * i + 2])
        trainer.train_step(batch)
    return trainer


class TestRoundTrip:
    def test_parameters_bit_exact(self, tmp_path):
        trainer = trained_trainer()
        ckpt.save_checkpoint(tmp_path / "c", trainer.model,
                             optimizers=trainer.optimizers(),
                             rng_state=trainer.rng_state(), epoch=0)
        loaded, opt_states, rng_state, manifest = ckpt.load_checkpoint(tmp_path / "c")
        assert loaded.kind == trainer.model.kind
        for (n1, p1), (n2, p2) in zip(loaded.parameters(), trainer.model.parameters()):
            assert n1 == n2
            assert np.array_equal(p1.data, p2.data)

    def test_save_load_save_byte_identical(self, tmp_path):
        trainer = trained_trainer()
        d1, d2 = tmp_path / "c1", tmp_path / "c2"
        ckpt.save_checkpoint(d1, trainer.model, optimizers=trainer.optimizers(),
                             rng_state=trainer.rng_state(), epoch=3)
        loaded, opt_states, rng_state, _ = ckpt.load_checkpoint(d1)
        # rebuild a trainer around the loaded model and restore its buffers
        trainer2 = Trainer(loaded, TrainConfig(epochs=1, batch_size=2, seed=2))
        for name, opt in trainer2.optimizers().items():
            if name in opt_states:
                opt.load_state_dict(opt_states[name])
        trainer2.set_rng_state(rng_state)
        ckpt.save_checkpoint(d2, loaded, optimizers=trainer2.optimizers(),
                             rng_state=trainer2.rng_state(), epoch=3)
        files1 = sorted(p.relative_to(d1) for p in d1.rglob("*.f32"))
        files2 = sorted(p.relative_to(d2) for p in d2.rglob("*.f32"))
        assert files1 == files2
        for rel in files1:
            assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes(), rel
        assert (d1 / "manifest.json").read_bytes() == (d2 / "manifest.json").read_bytes()

    def test_optimizer_state_restored(self, tmp_path):
        trainer = trained_trainer(steps=2)
        ckpt.save_checkpoint(tmp_path / "c", trainer.model, optimizers=trainer.optimizers(),
                             rng_state=trainer.rng_state(), epoch=0)
        _, opt_states, _, _ = ckpt.load_checkpoint(tmp_path / "c")
        original = trainer.opt_ae.state_dict()["square_avg"]
        restored = opt_states["autoencoder"]["square_avg"]
        assert set(restored) == set(original)
        for name in original:
            assert np.array_equal(np.asarray(restored[name]), original[name])

    def test_rng_state_round_trips(self, tmp_path):
        trainer = trained_trainer()
        state = trainer.rng_state()
        ckpt.save_checkpoint(tmp_path / "c", trainer.model, rng_state=state, epoch=0)
        _, _, loaded_state, _ = ckpt.load_checkpoint(tmp_path / "c")
        rng1 = np.random.default_rng()
        rng1.bit_generator.state = loaded_state
        rng2 = np.random.default_rng()
        rng2.bit_generator.state = state
        assert np.array_equal(rng1.standard_normal(8), rng2.standard_normal(8))

    def test_manifest_declares_layout(self, tmp_path):
        trainer = trained_trainer(kind="cnn")
        ckpt.save_checkpoint(tmp_path / "c", trainer.model, epoch=1, config_hash="abc123")
        manifest = ckpt.load_manifest(tmp_path / "c")
        assert "channel_major" in manifest["flatten_order"]
        assert manifest["config_hash"] == "abc123"
        assert manifest["epoch"] == 1
        assert manifest["model"]["kind"] == "cnn"
        names = {e["name"] for e in manifest["arrays"]}
        assert "cnn.trunk.conv1.weight" in names

    def test_missing_parameter_detected(self, tmp_path):
        trainer = trained_trainer(kind="cnn")
        ckpt.save_checkpoint(tmp_path / "c", trainer.model, epoch=0)
        (tmp_path / "c" / "params" / "cnn.head.weight.f32").unlink()
        with pytest.raises((ConfigError, FileNotFoundError)):
            ckpt.load_checkpoint(tmp_path / "c")

    def test_shape_mismatch_detected(self, tmp_path):
        trainer = trained_trainer(kind="cnn")
        ckpt.save_checkpoint(tmp_path / "c", trainer.model, epoch=0)
        blob = tmp_path / "c" / "params" / "cnn.head.bias.f32"
        blob.write_bytes(b"\x00" * 12)  # wrong length
        with pytest.raises(ConfigError):
            ckpt.load_checkpoint(tmp_path / "c")
