"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
lines.  Criteria 5-8 train real models at desk scale and are marked
slow; the whole suite is a few hours on one CPU core.
"""

import csv
import hashlib
import json
import time

import numpy as np
import pytest

from daae import autodiff as ad
from daae import layers as L
from daae import losses as lss
from daae import metrics as M
from daae.cli import main as cli_main
from daae.data import (
    DataBatch,
    SplitSpec,
    SynthSpec,
    maximal_rectangle,
    remove_identifier_patch,
    skin_mask,
    split,
    synth_generate,
)
from daae.autodiff import Tensor
from daae.models import Discriminator, build_variant, sample_prior
from daae.training import TrainConfig, Trainer, train

from conftest import check_gradients


def report(number, name):
    print(f"\nACCEPTANCE {number} PASS: {name}")


# -- 1: gradient correctness --------------------------------------------------


class TestCriterion1Gradients:
    """Analytic gradients match 64-bit central differences (step 1e-5)
    within relative error 1e-4, >= 20 random small instances per op."""

    N = 20

    def _rng(self, k):
        return np.random.default_rng(1000 + k)

    def test_conv2d(self):
        for k in range(self.N):
            rng = self._rng(k)
            x = rng.standard_normal((1, 2, 5, 5))
            w = rng.standard_normal((2, 2, 3, 3)) * 0.5
            b = rng.standard_normal(2) * 0.1
            check_gradients(
                lambda xs, ws, bs: ad.sum_(ad.mul(L.conv2d(xs, ws, bs, 2, 1),
                                                  L.conv2d(xs, ws, bs, 2, 1))),
                [x, w, b],
            )

    def test_tconv2d(self):
        for k in range(self.N):
            rng = self._rng(50 + k)
            x = rng.standard_normal((1, 2, 3, 3))
            w = rng.standard_normal((2, 2, 3, 3)) * 0.5
            b = rng.standard_normal(2) * 0.1
            check_gradients(
                lambda xs, ws, bs: ad.sum_(ad.mul(L.tconv2d(xs, ws, bs, 2, 1, 1),
                                                  L.tconv2d(xs, ws, bs, 2, 1, 1))),
                [x, w, b],
            )

    def test_linear(self):
        for k in range(self.N):
            rng = self._rng(100 + k)
            x = rng.standard_normal((3, 4))
            w = rng.standard_normal((2, 4))
            b = rng.standard_normal(2)
            check_gradients(
                lambda xs, ws, bs: ad.mean_(ad.exp(L.linear(xs, ws, bs))), [x, w, b]
            )

    def test_relu(self):
        for k in range(self.N):
            rng = self._rng(150 + k)
            x = rng.standard_normal(12) + np.sign(rng.standard_normal(12)) * 0.2
            check_gradients(lambda xs: ad.sum_(ad.mul(L.relu(xs), L.relu(xs))), [x])

    def test_sigmoid(self):
        for k in range(self.N):
            rng = self._rng(200 + k)
            x = rng.standard_normal(12) * 2
            check_gradients(lambda xs: ad.sum_(ad.mul(L.sigmoid(xs), L.sigmoid(xs))), [x])

    def test_mse(self):
        for k in range(self.N):
            rng = self._rng(250 + k)
            a, b = rng.standard_normal(10), rng.standard_normal(10)
            check_gradients(lss.mse, [a, b])

    def test_bce(self):
        for k in range(self.N):
            rng = self._rng(300 + k)
            p = rng.uniform(0.05, 0.95, 10)
            t = (rng.random(10) > 0.5).astype(np.float64)
            check_gradients(lambda ps: lss.bce(ps, Tensor(t, dtype=np.float64)), [p])

    def test_classification_loss(self):
        w = lss.LossWeights()
        for k in range(self.N):
            rng = self._rng(350 + k)
            p = rng.uniform(0.05, 0.95, 10)
            t = (rng.random(10) > 0.5).astype(np.float64)
            check_gradients(
                lambda ps: lss.classification_loss(ps, Tensor(t, dtype=np.float64), w), [p]
            )

    def test_discriminator_and_regularisation_losses(self):
        # gradcheck through a real (tiny-input) discriminator at 64-bit
        for k in range(self.N):
            rng = self._rng(400 + k)
            d = Discriminator("label", np.random.default_rng(k))
            params = [p for _, p in d.parameters()]
            saved = [(p.data.copy(), p.requires_grad) for p in params]
            for p in params:
                p.data = p.data.astype(np.float64)
                p.requires_grad = False
            fake = rng.uniform(0.1, 0.9, (4, 1))
            check_gradients(lambda f: lss.encoder_regularisation_loss(d, f), [fake])
            real = rng.uniform(0.1, 0.9, (4, 1))
            # discriminator loss: gradient wrt discriminator weights
            for p in params:
                p.requires_grad = True
            w1 = d.fc2.weights.data.copy()

            def loss_of_w(wv):
                d.fc2.weights.data = wv.data
                out = lss.discriminator_loss(
                    d, Tensor(real, dtype=np.float64), Tensor(fake, dtype=np.float64)
                )
                d.fc2.weights.data = w1
                return out

            check_gradients(loss_of_w, [w1])
            for p, (data, flag) in zip(params, saved):
                p.data = data
                p.requires_grad = flag

    def test_combined_loss(self):
        w = lss.LossWeights()
        for k in range(self.N):
            rng = self._rng(450 + k)
            parts = rng.uniform(0.1, 2.0, 4)
            check_gradients(
                lambda a, b, c, d: lss.encoder_combined_loss(
                    ad.mean_(a), ad.mean_(b), ad.mean_(c), ad.mean_(d), w
                ),
                [parts[0:1], parts[1:2], parts[2:3], parts[3:4]],
            )

    def test_zreport(self):
        report(1, "gradient correctness (layers and losses vs central differences)")


# -- 2: architecture conformance ----------------------------------------------


class TestCriterion2Architecture:
    def test_walk_matches_published_tables(self):
        m = build_variant("ssdaae", sigma=0.1, seed=0)
        trunk = m.encoder.trunk.architecture()
        convs = [d for d in trunk if d["kind"] == "conv2d"]
        assert [(c["out_channels"], c["kernel_size"], c["stride"], c["padding"]) for c in convs] \
            == [(64, 5, 2, 2), (128, 5, 2, 2), (256, 5, 2, 2), (512, 5, 2, 2)]
        assert m.encoder.trunk.spatial_sizes(64) == [32, 16, 8, 4]
        assert trunk[-1] == {"kind": "linear", "in_features": 512 * 4 * 4, "out_features": 1000}

        heads = m.encoder.architecture()
        assert heads["label_head"][0]["out_features"] == 1
        assert heads["label_head"][1] == {"kind": "sigmoid"}
        assert heads["latent_head"][0]["out_features"] == 200

        dec = m.decoder.architecture()
        assert dec[1] == {"kind": "linear", "in_features": 201, "out_features": 8192}
        tconvs = [d for d in dec if d["kind"] == "tconv2d"]
        assert [(t["out_channels"], t["kernel_size"], t["stride"], t["padding"],
                 t["output_padding"]) for t in tconvs] \
            == [(256, 3, 2, 1, 1), (128, 3, 2, 1, 1), (64, 3, 2, 1, 1), (3, 3, 2, 1, 1)]
        assert dec[-1] == {"kind": "sigmoid"}
        x_hat = m.decode(Tensor(np.zeros((1, 1), np.float32)),
                         Tensor(np.zeros((1, 200), np.float32)))
        assert x_hat.shape == (1, 3, 64, 64)

        for disc, width in ((m.latent_disc, 200), (m.label_disc, 1)):
            assert disc.architecture() == [
                {"kind": "linear", "in_features": width, "out_features": 1000},
                {"kind": "relu"},
                {"kind": "linear", "in_features": 1000, "out_features": 1},
                {"kind": "sigmoid"},
            ]

        cnn = build_variant("cnn", seed=0)
        assert cnn.cnn.trunk.architecture() == m.encoder.trunk.architecture()
        assert cnn.cnn.architecture()[-2:] == [
            {"kind": "linear", "in_features": 1000, "out_features": 1},
            {"kind": "sigmoid"},
        ]
        report(2, "architecture conformance (trunk, heads, decoder, discriminators)")


# -- 3: metric oracle equivalence ----------------------------------------------


class TestCriterion3MetricOracles:
    def test_specificity_and_auc_match_oracles(self):
        from test_metrics import brute_force_specificity_at_sensitivity, pairwise_auc, random_scored_set

        rng = np.random.default_rng(33)
        t0 = time.time()
        for i in range(200):
            s = random_scored_set(rng, n_max=1000 if i % 4 == 0 else 120)
            target = float(rng.choice(M.DEFAULT_SENSITIVITY_TARGETS))
            got = M.specificity_at_sensitivity(s, target)
            want = brute_force_specificity_at_sensitivity(s.scores, s.labels, target)
            assert got == want, f"set {i}: {got} != {want}"
            if len(s) <= 150:  # pairwise oracle is quadratic; bound its cost
                assert abs(M.roc_auc(s) - pairwise_auc(s.scores, s.labels)) < 1e-12
        assert time.time() - t0 < 60
        report(3, "metric oracle equivalence (threshold enumeration + pairwise AUC)")


# -- 4: loss identity over a 100-step run --------------------------------------


@pytest.mark.slow
class TestCriterion4LossIdentity:
    def test_identity_holds_every_step(self):
        corpus = synth_generate(SynthSpec(n_per_class=120, seed=4))
        splits = split(corpus, SplitSpec(120, 60, 30, 30, seed=4))
        w = lss.LossWeights()  # (alpha, beta, eta) = (0.1, 1, 0.1); (a, b) = (9, 1)
        reports = []
        train(
            build_variant("ssdaae", sigma=0.1, seed=4),
            splits,
            TrainConfig(epochs=1, batch_size=8, seed=4, steps_per_epoch=100, weights=w),
            step_callback=reports.append,
        )
        assert len(reports) == 100
        for r in reports:
            expected = (
                w.beta * (r.l_class or 0.0)
                + w.eta * r.l_rec
                + w.alpha * (r.l_reg_y + r.l_reg_z)
            )
            rel = abs(r.l_encoder - expected) / max(abs(expected), 1e-12)
            assert rel <= 1e-6, f"step {r.step}: relative error {rel}"
        report(4, "combined-loss identity on every step of a 100-step run")


# -- 9: overfit sanity ----------------------------------------------------------


@pytest.mark.slow
class TestCriterion9Overfit:
    def test_cnn_reaches_perfect_training_accuracy(self):
        # 8 labelled images at the ~90%-benign imbalance the (9,1) class
        # weights are designed for: 1 malignant, 7 benign
        corpus = synth_generate(SynthSpec(n_per_class=8, seed=9))
        keep = np.concatenate([
            np.flatnonzero(corpus.labels == 1)[:1],
            np.flatnonzero(corpus.labels == 0)[:7],
        ])
        images = corpus.images[keep]
        labels = corpus.labels[keep]
        batch = DataBatch(images, labels.astype(np.float32),
                          [corpus.ids[i] for i in keep])
        trainer = Trainer(build_variant("cnn", seed=9), TrainConfig(epochs=1, batch_size=8, seed=9))
        reached = None
        for step in range(1, 501):
            trainer.train_step(batch)
            if step % 5 == 0:
                scores = M.predict_scores(trainer.model, images)
                if np.array_equal((scores >= 0.5).astype(np.int64), labels):
                    reached = step
                    break
        assert reached is not None, "training accuracy never reached 1.0 in 500 steps"
        report(9, f"overfit sanity (training accuracy 1.0 at step {reached})")


# -- 10: reproducibility ---------------------------------------------------------


@pytest.mark.slow
class TestCriterion10Reproducibility:
    def test_identical_runs_identical_artifacts(self, tmp_path):
        args = [
            "train", "--variant", "ssdaae", "--synth", "80", "--epochs", "1",
            "--seed", "7", "--set", "train.batch_size=8", "--set", "train.steps_per_epoch=6",
        ]
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert cli_main(args + ["--out", str(out_a)]) == 0
        assert cli_main(args + ["--out", str(out_b)]) == 0

        def digest(path):
            return hashlib.sha256(path.read_bytes()).hexdigest()

        assert digest(out_a / "steps.jsonl") == digest(out_b / "steps.jsonl")
        blobs_a = sorted((out_a / "checkpoints" / "best").rglob("*.f32"))
        blobs_b = sorted((out_b / "checkpoints" / "best").rglob("*.f32"))
        assert [p.name for p in blobs_a] == [p.name for p in blobs_b] and blobs_a
        for pa, pb in zip(blobs_a, blobs_b):
            assert pa.read_bytes() == pb.read_bytes(), pa.name
        report(10, "reproducibility (identical step-log hash and bit-identical checkpoints)")


# -- 11: preprocessing oracle -----------------------------------------------------


class TestCriterion11PreprocessingOracle:
    @staticmethod
    def exhaustive_max_rectangle_area(mask):
        """Exhaustive search over all (top, left, bottom) anchors with the
        running max width; covers every maximal all-true rectangle."""
        h, w = mask.shape
        right = np.zeros((h, w + 1), np.int64)
        for j in range(w - 1, -1, -1):
            right[:, j] = np.where(mask[:, j], right[:, j + 1] + 1, 0)
        best = 0
        for top in range(h):
            for left in range(w):
                if not mask[top, left]:
                    continue
                runs = right[top:, left]
                stop = np.argmin(runs > 0) if not (runs > 0).all() else len(runs)
                widths = np.minimum.accumulate(runs[:stop])
                if stop:
                    best = max(best, int((widths * (np.arange(stop) + 1)).max()))
        return best

    def test_fifty_patch_bearing_fixtures(self):
        rng = np.random.default_rng(11)
        tone = np.array([0.82, 0.62, 0.52], np.float32)
        patch_colors = [
            np.array([0.05, 0.1, 0.9], np.float32),   # blue sticker
            np.array([0.1, 0.8, 0.15], np.float32),   # green sticker
            np.array([0.95, 0.95, 0.1], np.float32),  # yellow sticker
        ]
        t0 = time.time()
        for i in range(50):
            size = int(rng.integers(64, 129))
            img = np.empty((3, size, size), np.float32)
            for c in range(3):
                img[c] = tone[c] + rng.normal(0, 0.02, (size, size))
            ph = int(rng.integers(size // 5, size // 3))
            pw = int(rng.integers(size // 5, size // 3))
            top = int(rng.integers(0, size - ph))
            left = int(rng.integers(0, size - pw))
            color = patch_colors[i % len(patch_colors)]
            img[:, top : top + ph, left : left + pw] = color[:, None, None]
            img = np.clip(img, 0, 1)

            from PIL import Image

            small = Image.fromarray(
                (img.transpose(1, 2, 0) * 255).astype(np.uint8)
            ).resize((32, 32), Image.BILINEAR)
            mask = skin_mask(np.asarray(small, np.float32).transpose(2, 0, 1) / 255.0)
            got = maximal_rectangle(mask)
            assert got is not None, f"fixture {i}: no rectangle found"
            gt, gl, gh, gw = got
            assert mask[gt : gt + gh, gl : gl + gw].all(), f"fixture {i}: rectangle not all skin"
            assert gh * gw == self.exhaustive_max_rectangle_area(mask), f"fixture {i}: area differs"
            # end to end: the crop must go through and exclude the patch
            out = remove_identifier_patch(img)
            assert out.shape == (3, 64, 64)
            assert out[2].max() < 0.85 or out[0].min() > 0.5  # no saturated sticker color survives
        assert time.time() - t0 < 60
        report(11, "preprocessing oracle (maximal rectangle matches exhaustive search on 50 fixtures)")
