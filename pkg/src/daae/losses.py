"""Loss kernels and their weighted combination.

All losses reduce by mean over every element, are non-negative, and hit
zero exactly at their stated optimum (up to the 1e-12 log clamp).  The
per-batch combination for the encoder is

    l_encoder = beta * l_class + eta * l_rec + alpha * (l_reg_y + l_reg_z)

with l_class dropped on unlabelled batches.  The classification loss
carries per-class weights (a for label 1, b for label 0) to counter class
imbalance; with (a, b) = (1, 1) it reduces to plain binary cross-entropy.
"""

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ConfigError, DomainError, ShapeError


@dataclass
class LossWeights:
    """Coefficients of the combined encoder loss and the class weights."""

    alpha: float = 0.1
    beta: float = 1.0
    eta: float = 0.1
    a: float = 9.0
    b: float = 1.0

    def __post_init__(self):
        for field in ("alpha", "beta", "eta", "a", "b"):
            if getattr(self, field) < 0:
                raise ConfigError(f"loss weight {field} must be non-negative")


def _check_same_shape(x, y, op):
    if x.shape != y.shape:
        raise ShapeError(f"{op}: shapes {x.shape} and {y.shape} differ")


def bce(prediction, target):
    """Mean of -[t*log(p) + (1-t)*log(1-p)] with clamped logs."""
    prediction, target = as_tensor(prediction), as_tensor(target)
    _check_same_shape(prediction, target, "bce")
    if np.any(prediction.data < 0) or np.any(prediction.data > 1):
        raise DomainError("bce predictions must lie in [0, 1]")
    t = target.data
    pos = ad.mul(Tensor(t), ad.clamped_log(prediction))
    neg = ad.mul(Tensor(1.0 - t), ad.clamped_log(ad.sub(1.0, prediction)))
    return ad.negate(ad.mean_(ad.add(pos, neg)))


def mse(a, b):
    """Mean of squared differences."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mse")
    diff = ad.sub(a, b)
    return ad.mean_(ad.mul(diff, diff))


def classification_loss(y_hat, y, weights):
    """Class-weighted binary cross-entropy: weight `a` on label-1 terms, `b` on label-0."""
    y_hat, y = as_tensor(y_hat), as_tensor(y)
    _check_same_shape(y_hat, y, "classification_loss")
    if np.any(y_hat.data < 0) or np.any(y_hat.data > 1):
        raise DomainError("predicted probabilities must lie in [0, 1]")
    t = y.data
    pos = ad.mul(Tensor(weights.a * t), ad.clamped_log(y_hat))
    neg = ad.mul(Tensor(weights.b * (1.0 - t)), ad.clamped_log(ad.sub(1.0, y_hat)))
    return ad.negate(ad.mean_(ad.add(pos, neg)))


@contextmanager
def frozen(params):
    """Temporarily clear requires_grad so no vjps are recorded for `params`."""
    tensors = [p for _, p in params] if params and isinstance(params[0], tuple) else list(params)
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, flag in zip(tensors, saved):
            t.requires_grad = flag


def discriminator_loss(discriminator, real, fake):
    """BCE of the discriminator over [real -> 1, fake -> 0].

    `fake` is detached here: a discriminator update must not move the
    encoder, so no gradient may flow past the detachment point.
    """
    real, fake = as_tensor(real), as_tensor(fake)
    if real.shape[1:] != fake.shape[1:]:
        raise ShapeError(f"real {real.shape} and fake {fake.shape} rows differ in width")
    scores = discriminator(ad.concat([real.detach(), fake.detach()], axis=0))
    targets = np.zeros(scores.shape, dtype=scores.dtype)
    targets[: real.shape[0]] = 1.0
    return bce(scores, Tensor(targets))


def encoder_regularisation_loss(discriminator, fake):
    """-mean log T(fake) with the discriminator frozen.

    The non-saturating objective: pushed down, it drives the discriminator
    score of encoded samples toward 1.  Gradient flows only into whatever
    produced `fake`.
    """
    with frozen(discriminator.parameters()):
        scores = discriminator(as_tensor(fake))
    return bce(scores, Tensor(np.ones(scores.shape, dtype=scores.dtype)))


def encoder_combined_loss(l_class, l_rec, l_reg_y, l_reg_z, weights):
    """beta*l_class + eta*l_rec + alpha*(l_reg_y + l_reg_z); l_class may be None."""
    total = ad.add(
        ad.mul(weights.eta, l_rec),
        ad.mul(weights.alpha, ad.add(l_reg_y, l_reg_z)),
    )
    if l_class is not None:
        total = ad.add(ad.mul(weights.beta, l_class), total)
    return total
