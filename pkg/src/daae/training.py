"""Training: per-minibatch three-phase schedule and the epoch loop.

Each minibatch of an autoencoding variant runs, in order:

  1. autoencoder phase: corrupt (when denoising), encode, decode, then one
     RMSProp step on {trunk, label head, latent head, decoder} minimizing
     beta*l_class + eta*l_rec + alpha*(l_reg_y + l_reg_z); l_class drops
     out on unlabelled batches.
  2. discriminator phase: one RMSProp step each for the latent and label
     discriminators on real-vs-fake BCE, with the fake samples detached
     so nothing propagates into the encoder.
  3. regularisation phase: a fresh encoder forward, then one RMSProp step
     on {trunk, label head, latent head} minimizing alpha*(l_reg_z +
     l_reg_y) against the frozen discriminators.

CNN variants run a single weighted-classification step instead.  Each
phase zeroes every gradient it produced after stepping, so no gradient
outlives its phase.

Semi-supervised variants alternate labelled and unlabelled minibatches
1:1 with the smaller stream recycled (reshuffled each pass); supervised
variants never consume unlabelled data.  Checkpoints are written per
epoch and the best epoch is chosen by validation specificity at
sensitivity 0.95.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import losses as lss
from . import metrics
from .autodiff import Tensor, backward, zero_grads
from .data import DataBatch
from .errors import ConfigError, ProtocolError
from .losses import LossWeights
from .models import sample_prior
from .optim import RMSProp

MODES = ("supervised", "semi_supervised", "pretrain_then_finetune")
SELECTION_SENSITIVITY = 0.95


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr_autoencoder: float = 1e-4
    lr_discriminator: float = 1e-4
    momentum_autoencoder: float = 0.0
    momentum_discriminator: float = 0.2
    sigma: float = 0.1
    mode: str = "semi_supervised"
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    pretrain_epochs: int = 0  # leading unlabelled-only epochs in pretrain_then_finetune
    steps_per_epoch: int = 0  # 0 = derive from the data size

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("epochs must be >= 0 and batch_size positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")


@dataclass
class StepReport:
    """Losses observed at one step; None marks a term the variant lacks."""

    step: int
    l_class: float | None = None
    l_rec: float | None = None
    l_reg_z: float | None = None
    l_reg_y: float | None = None
    l_disc_z: float | None = None
    l_disc_y: float | None = None
    l_encoder: float | None = None

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    epoch_summaries: list
    val_reports: list
    best_epoch: int
    best_val_specificity: float
    steps_taken: int
    final_val_report: object = None


class Trainer:
    """Owns the optimizer states and the RNG stream for one training run."""

    def __init__(self, model, cfg):
        self.model = model
        self.cfg = cfg
        self.rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 0x5EED)))
        self.step_index = 0
        if model.uses_autoencoder:
            self.opt_ae = RMSProp(
                model.autoencoder_parameters(), cfg.lr_autoencoder, cfg.momentum_autoencoder
            )
            self.opt_reg = RMSProp(
                model.encoder_parameters(), cfg.lr_autoencoder, cfg.momentum_autoencoder
            )
            self.opt_disc_z = RMSProp(
                model.latent_disc.parameters(), cfg.lr_discriminator, cfg.momentum_discriminator
            )
            self.opt_disc_y = RMSProp(
                model.label_disc.parameters(), cfg.lr_discriminator, cfg.momentum_discriminator
            )
        else:
            self.opt_cnn = RMSProp(
                model.parameters(), cfg.lr_autoencoder, cfg.momentum_autoencoder
            )

    def optimizers(self):
        if self.model.uses_autoencoder:
            return {
                "autoencoder": self.opt_ae,
                "regularisation": self.opt_reg,
                "disc_latent": self.opt_disc_z,
                "disc_label": self.opt_disc_y,
            }
        return {"classifier": self.opt_cnn}

    def train_step(self, batch):
        """One full three-phase update (or one classification step for CNNs)."""
        labelled = batch.labels is not None
        if not labelled and not self.model.uses_unlabelled:
            raise ProtocolError(f"{self.model.kind} is supervised; unlabelled batch rejected")
        self.step_index += 1
        if self.model.uses_autoencoder:
            return self._autoencoder_step(batch, labelled)
        return self._cnn_step(batch)

    def _cnn_step(self, batch):
        x = Tensor(batch.images)
        y = Tensor(batch.labels)
        scores = self.model.cnn_forward(x, rng=self.rng)
        loss = lss.classification_loss(scores, y, self.cfg.weights)
        backward(loss)
        self.opt_cnn.step()
        self.opt_cnn.zero_grad()
        return StepReport(step=self.step_index, l_class=loss.item())

    def _autoencoder_step(self, batch, labelled):
        m, w = self.model, self.cfg.weights
        x = Tensor(batch.images)
        x_noisy = m.maybe_corrupt(x, rng=self.rng)

        # phase 1: autoencoder update on the combined loss
        y_hat, z_hat = m.encode(x_noisy)
        x_hat = m.decode(y_hat, z_hat)
        l_rec = lss.mse(x_hat, x)  # target is the clean input
        l_class = (
            lss.classification_loss(y_hat, Tensor(batch.labels), w) if labelled else None
        )
        l_reg_y = lss.encoder_regularisation_loss(m.label_disc, y_hat)
        l_reg_z = lss.encoder_regularisation_loss(m.latent_disc, z_hat)
        l_encoder = lss.encoder_combined_loss(l_class, l_rec, l_reg_y, l_reg_z, w)
        backward(l_encoder)
        self.opt_ae.step()
        self.opt_ae.zero_grad()

        # phase 2: one step per discriminator, fakes detached
        batch_n = batch.images.shape[0]
        z_real = sample_prior("latent", batch_n, self.rng)
        y_real = sample_prior("label", batch_n, self.rng, m.label_prior)
        l_disc_z = lss.discriminator_loss(m.latent_disc, z_real, z_hat.detach())
        backward(l_disc_z)
        self.opt_disc_z.step()
        self.opt_disc_z.zero_grad()
        l_disc_y = lss.discriminator_loss(m.label_disc, y_real, y_hat.detach())
        backward(l_disc_y)
        self.opt_disc_y.step()
        self.opt_disc_y.zero_grad()

        # phase 3: regularisation-only update through the fresh encoder
        y_hat3, z_hat3 = m.encode(x_noisy.detach())
        reg = (
            lss.encoder_regularisation_loss(m.label_disc, y_hat3)
            + lss.encoder_regularisation_loss(m.latent_disc, z_hat3)
        ) * w.alpha
        backward(reg)
        self.opt_reg.step()
        self.opt_reg.zero_grad()

        return StepReport(
            step=self.step_index,
            l_class=None if l_class is None else l_class.item(),
            l_rec=l_rec.item(),
            l_reg_z=l_reg_z.item(),
            l_reg_y=l_reg_y.item(),
            l_disc_z=l_disc_z.item(),
            l_disc_y=l_disc_y.item(),
            l_encoder=l_encoder.item(),
        )

    def rng_state(self):
        return self.rng.bit_generator.state

    def set_rng_state(self, state):
        self.rng.bit_generator.state = state


def _batches(dataset, batch_size, rng, labelled):
    """One shuffled pass over `dataset` as DataBatches."""
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        labels = None
        if labelled:
            labels = dataset.labels[idx].astype(np.float32).reshape(-1, 1)
        yield DataBatch(
            images=np.ascontiguousarray(dataset.images[idx]),
            labels=labels,
            ids=[dataset.ids[i] for i in idx],
        )


def _recycled(dataset, batch_size, rng, labelled):
    """Endless shuffled batch stream; reshuffles at each pass."""
    while True:
        yield from _batches(dataset, batch_size, rng, labelled)


def _epoch_plan(model, cfg, splits, epoch):
    """Which batch streams feed this epoch, and how many steps it has."""
    labelled = splits["labelled_train"]
    n_lab = max(1, (len(labelled) + cfg.batch_size - 1) // cfg.batch_size)
    pretraining = (
        model.uses_autoencoder
        and model.uses_unlabelled
        and cfg.mode == "pretrain_then_finetune"
        and epoch < cfg.pretrain_epochs
    )
    semi = model.uses_unlabelled and cfg.mode != "supervised" and not pretraining
    if semi or pretraining:
        unlabelled = splits.get("unlabelled")
        if unlabelled is None or len(unlabelled) == 0:
            raise ConfigError(f"{model.kind} trains on unlabelled data but none was provided")
        n_unlab = max(1, (len(unlabelled) + cfg.batch_size - 1) // cfg.batch_size)
    if pretraining:
        steps = cfg.steps_per_epoch or n_unlab
        return {"kind": "unlabelled_only", "steps": steps}
    if semi:
        steps = cfg.steps_per_epoch or 2 * max(n_lab, n_unlab)
        return {"kind": "alternating", "steps": steps}
    steps = cfg.steps_per_epoch or n_lab
    return {"kind": "labelled_only", "steps": steps}


def train(
    model,
    splits,
    cfg,
    run_dir=None,
    checkpoint_every=1,
    eval_targets=metrics.DEFAULT_SENSITIVITY_TARGETS,
    step_callback=None,
):
    """Run the full training loop for one variant.

    `splits` must contain labelled_train and val; semi-supervised variants
    additionally need unlabelled.  Per-epoch checkpoints and a JSONL step
    log are emitted under `run_dir` when given; the model ends up holding
    the parameters of the best epoch by validation specificity at
    sensitivity 0.95.
    """
    labelled = splits.get("labelled_train")
    if labelled is None or len(labelled) == 0:
        raise ConfigError("training requires a non-empty labelled_train split")
    if labelled.labels is None:
        raise ConfigError("labelled_train split carries no labels")
    val = splits.get("val")

    trainer = Trainer(model, cfg)
    run_dir = Path(run_dir) if run_dir is not None else None
    log_fh = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(run_dir / "steps.jsonl", "w")

    lab_rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 0xBA7C)))
    unlab_rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 0xBA7C + 1)))

    epoch_summaries, val_reports = [], []
    best_epoch, best_spec, best_params = -1, -np.inf, None

    try:
        for epoch in range(cfg.epochs):
            plan = _epoch_plan(model, cfg, splits, epoch)
            lab_stream = _recycled(labelled, cfg.batch_size, lab_rng, labelled=True)
            unlab_stream = (
                _recycled(splits["unlabelled"], cfg.batch_size, unlab_rng, labelled=False)
                if plan["kind"] != "labelled_only"
                else None
            )

            reports = []
            for i in range(plan["steps"]):
                if plan["kind"] == "unlabelled_only":
                    batch = next(unlab_stream)
                elif plan["kind"] == "alternating":
                    batch = next(unlab_stream) if i % 2 == 0 else next(lab_stream)
                else:
                    batch = next(lab_stream)
                report = trainer.train_step(batch)
                reports.append(report)
                if log_fh is not None:
                    log_fh.write(report.to_json() + "\n")
                if step_callback is not None:
                    step_callback(report)
            if log_fh is not None:
                log_fh.flush()

            summary = _summarize(epoch, reports)
            epoch_summaries.append(summary)

            val_report = None
            if val is not None and len(val) > 0:
                val_report = metrics.evaluate(
                    model, val, targets=eval_targets, provenance=f"val@epoch{epoch}"
                )
                val_reports.append(val_report)
                spec95 = val_report.specificity_at(SELECTION_SENSITIVITY)
                summary["val_specificity_at_095"] = spec95
                if spec95 > best_spec:
                    best_spec = spec95
                    best_epoch = epoch
                    best_params = {n: p.data.copy() for n, p in model.parameters()}

            if run_dir is not None and (epoch + 1) % checkpoint_every == 0:
                ckpt.save_checkpoint(
                    run_dir / "checkpoints" / f"epoch_{epoch:04d}",
                    model,
                    optimizers=trainer.optimizers(),
                    rng_state=trainer.rng_state(),
                    epoch=epoch,
                    extra={"epoch_summary": summary},
                )
    finally:
        if log_fh is not None:
            log_fh.close()

    if best_params is not None:
        for name, p in model.parameters():
            p.assign_(best_params[name])
        if run_dir is not None:
            ckpt.save_checkpoint(
                run_dir / "checkpoints" / "best",
                model,
                optimizers=trainer.optimizers(),
                rng_state=trainer.rng_state(),
                epoch=best_epoch,
                extra={"selected_by": f"val specificity at sensitivity {SELECTION_SENSITIVITY}"},
            )

    final_val = val_reports[best_epoch] if best_epoch >= 0 else None
    return TrainResult(
        epoch_summaries=epoch_summaries,
        val_reports=val_reports,
        best_epoch=best_epoch,
        best_val_specificity=float(best_spec) if best_epoch >= 0 else float("nan"),
        steps_taken=trainer.step_index,
        final_val_report=final_val,
    )


def _summarize(epoch, reports):
    fields = ("l_class", "l_rec", "l_reg_z", "l_reg_y", "l_disc_z", "l_disc_y", "l_encoder")
    summary = {"epoch": epoch, "steps": len(reports)}
    for f in fields:
        values = [getattr(r, f) for r in reports if getattr(r, f) is not None]
        summary[f] = float(np.mean(values)) if values else None
    return summary
