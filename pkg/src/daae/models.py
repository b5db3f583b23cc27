"""Model zoo: the shared conv trunk, encoder/decoder stacks, the two
discriminators, the plain CNN classifier, and the six ablation variants.

All variants operate on 3x64x64 images in [0,1].  The encoder trunk is
four stride-2 convolutions (64, 128, 256, 512 filters, kernel 5, padding
2) taking 64x64 down to 4x4, flattened channel-major into a 1000-feature
linear layer.  The label head is linear(1000->1)+sigmoid, the latent head
linear(1000->200).  The decoder consumes the concatenation [y_hat, z_hat]
(201 features), expands to 512x4x4, and doubles the extent four times
with k=3, s=2, p=1, output_padding=1 transposed convolutions, ending in a
sigmoid.  Both discriminators are linear(in->1000)+relu+linear(1000->1)+
sigmoid with in=200 (latent) or in=1 (label).

Variant capability flags (denoising, autoencoder, unlabelled):

    cnn        -  -  -        ssaae      -  x  x
    cnn+noise  x  -  -        sdaae      x  x  -
    saae       -  x  -        ssdaae     x  x  x
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ConfigError, ProtocolError, ShapeError
from .layers import Conv2D, Linear, TransposedConv2D, relu, sigmoid

IMAGE_SHAPE = (3, 64, 64)
TRUNK_FEATURES = 1000
LATENT_DIM = 200
TRUNK_CHANNELS = (64, 128, 256, 512)
TRUNK_FLAT = 512 * 4 * 4  # channel-major flatten of the last conv output

VARIANT_FLAGS = {
    # kind: (uses_denoising, uses_autoencoder, uses_unlabelled)
    "cnn": (False, False, False),
    "cnn+noise": (True, False, False),
    "saae": (False, True, False),
    "sdaae": (True, True, False),
    "ssaae": (False, True, True),
    "ssdaae": (True, True, True),
}

VARIANT_KINDS = tuple(VARIANT_FLAGS)


def canonical_kind(kind):
    k = kind.strip().lower().replace("-", "+").replace("_", "+")
    k = {"cnn+": "cnn"}.get(k, k)
    if k not in VARIANT_FLAGS:
        raise ConfigError(f"unknown model variant {kind!r}; expected one of {VARIANT_KINDS}")
    return k


@dataclass
class CorruptionSpec:
    """Additive zero-mean Gaussian pixel noise with standard deviation sigma."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError(f"corruption sigma must be non-negative, got {self.sigma}")


def corrupt(spec, x, rng=None):
    """x + Normal(0, sigma^2) noise, i.i.d. per element; identity when sigma = 0.

    Deterministic from `spec.seed` unless a generator is passed (the
    training loop passes its own stream so noise varies per step).  The
    result is intentionally not clipped back to [0,1].
    """
    x = as_tensor(x)
    if spec.sigma == 0:
        return x
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.sigma, size=x.shape).astype(x.dtype)
    return ad.add(x, Tensor(noise))


def _prefixed(prefix, layer):
    return [(f"{prefix}.{name}", p) for name, p in layer.parameters()]


class ConvTrunk:
    """Shared feature extractor: 4 stride-2 convs + relu, flatten, linear to 1000."""

    def __init__(self, rng):
        chans = (IMAGE_SHAPE[0],) + TRUNK_CHANNELS
        self.convs = [
            Conv2D(chans[i], chans[i + 1], kernel_size=5, stride=2, padding=2, rng=rng)
            for i in range(4)
        ]
        self.fc = Linear(TRUNK_FLAT, TRUNK_FEATURES, rng)

    def __call__(self, x):
        if x.shape[1:] != IMAGE_SHAPE:
            raise ShapeError(f"expected input [B, 3, 64, 64], got {x.shape}")
        h = x
        for conv in self.convs:
            h = relu(conv(h))
        flat = ad.reshape(h, (h.shape[0], TRUNK_FLAT))
        return self.fc(flat)

    def spatial_sizes(self, extent=64):
        sizes = []
        for conv in self.convs:
            extent, _ = conv.out_hw(extent, extent)
            sizes.append(extent)
        return sizes

    def parameters(self):
        params = []
        for i, conv in enumerate(self.convs, start=1):
            params += _prefixed(f"conv{i}", conv)
        params += _prefixed("fc", self.fc)
        return params

    def architecture(self):
        arch = []
        for conv in self.convs:
            arch.append(conv.describe())
            arch.append({"kind": "relu"})
        arch.append({"kind": "flatten", "order": "channel_major"})
        arch.append(self.fc.describe())
        return arch


class EncoderStack:
    """Trunk plus the label head (1 unit, sigmoid) and latent head (200 units)."""

    def __init__(self, rng):
        self.trunk = ConvTrunk(rng)
        self.label_head = Linear(TRUNK_FEATURES, 1, rng)
        self.latent_head = Linear(TRUNK_FEATURES, LATENT_DIM, rng)

    def __call__(self, x):
        h = self.trunk(x)
        y_hat = sigmoid(self.label_head(h))
        z_hat = self.latent_head(h)
        return y_hat, z_hat

    def trunk_parameters(self):
        return [(f"encoder.trunk.{n}", p) for n, p in self.trunk.parameters()]

    def label_parameters(self):
        return [(f"encoder.label_head.{n}", p) for n, p in self.label_head.parameters()]

    def latent_parameters(self):
        return [(f"encoder.latent_head.{n}", p) for n, p in self.latent_head.parameters()]

    def parameters(self):
        return self.trunk_parameters() + self.label_parameters() + self.latent_parameters()

    def architecture(self):
        return {
            "trunk": self.trunk.architecture(),
            "label_head": [self.label_head.describe(), {"kind": "sigmoid"}],
            "latent_head": [self.latent_head.describe()],
        }


class DecoderStack:
    """linear(201 -> 8192) + relu, then four doubling transposed convs to 3x64x64."""

    def __init__(self, rng):
        self.fc = Linear(1 + LATENT_DIM, TRUNK_FLAT, rng)
        chans = (512, 256, 128, 64, IMAGE_SHAPE[0])
        self.tconvs = [
            TransposedConv2D(
                chans[i], chans[i + 1], kernel_size=3, stride=2, padding=1,
                output_padding=1, rng=rng,
            )
            for i in range(4)
        ]

    def __call__(self, y_hat, z_hat):
        if y_hat.ndim != 2 or y_hat.shape[1] != 1:
            raise ShapeError(f"label input must be [B, 1], got {y_hat.shape}")
        if z_hat.ndim != 2 or z_hat.shape[1] != LATENT_DIM:
            raise ShapeError(f"latent input must be [B, {LATENT_DIM}], got {z_hat.shape}")
        code = ad.concat([y_hat, z_hat], axis=1)
        h = relu(self.fc(code))
        h = ad.reshape(h, (h.shape[0], 512, 4, 4))
        for tconv in self.tconvs[:-1]:
            h = relu(tconv(h))
        return sigmoid(self.tconvs[-1](h))

    def parameters(self):
        params = [(f"decoder.fc.{n}", p) for n, p in self.fc.parameters()]
        for i, tconv in enumerate(self.tconvs, start=1):
            params += [(f"decoder.tconv{i}.{n}", p) for n, p in tconv.parameters()]
        return params

    def architecture(self):
        arch = [{"kind": "concat", "width": 1 + LATENT_DIM}, self.fc.describe(), {"kind": "relu"}]
        for tconv in self.tconvs[:-1]:
            arch.append(tconv.describe())
            arch.append({"kind": "relu"})
        arch.append(self.tconvs[-1].describe())
        arch.append({"kind": "sigmoid"})
        return arch


class Discriminator:
    """Two-layer MLP scoring whether its input came from the prior."""

    def __init__(self, variant, rng):
        if variant not in ("latent", "label"):
            raise ConfigError(f"discriminator variant must be latent|label, got {variant!r}")
        self.variant = variant
        self.in_features = LATENT_DIM if variant == "latent" else 1
        self.fc1 = Linear(self.in_features, TRUNK_FEATURES, rng)
        self.fc2 = Linear(TRUNK_FEATURES, 1, rng)

    def __call__(self, v):
        v = as_tensor(v)
        if v.ndim != 2 or v.shape[1] != self.in_features:
            raise ShapeError(
                f"{self.variant} discriminator expects [B, {self.in_features}], got {v.shape}"
            )
        return sigmoid(self.fc2(relu(self.fc1(v))))

    def parameters(self):
        prefix = f"disc_{self.variant}"
        return _prefixed(f"{prefix}.fc1", self.fc1) + _prefixed(f"{prefix}.fc2", self.fc2)

    def architecture(self):
        return [self.fc1.describe(), {"kind": "relu"}, self.fc2.describe(), {"kind": "sigmoid"}]


class CnnClassifier:
    """Trunk + linear(1000 -> 1) + sigmoid; same trunk spec as the encoder."""

    def __init__(self, rng):
        self.trunk = ConvTrunk(rng)
        self.head = Linear(TRUNK_FEATURES, 1, rng)

    def __call__(self, x):
        return sigmoid(self.head(self.trunk(x)))

    def parameters(self):
        params = [(f"cnn.trunk.{n}", p) for n, p in self.trunk.parameters()]
        params += [(f"cnn.head.{n}", p) for n, p in self.head.parameters()]
        return params

    def architecture(self):
        return self.trunk.architecture() + [self.head.describe(), {"kind": "sigmoid"}]


@dataclass
class ModelVariant:
    """One ablation model: capability flags plus its parameter-bearing parts."""

    kind: str
    uses_denoising: bool
    uses_autoencoder: bool
    uses_unlabelled: bool
    corruption: CorruptionSpec
    label_prior: float = 0.5
    encoder: EncoderStack = None
    decoder: DecoderStack = None
    latent_disc: Discriminator = None
    label_disc: Discriminator = None
    cnn: CnnClassifier = None

    def maybe_corrupt(self, x, rng=None):
        """Apply the corruption process when this variant trains with noise."""
        if not self.uses_denoising:
            return as_tensor(x)
        return corrupt(self.corruption, x, rng=rng)

    def encode(self, x):
        if not self.uses_autoencoder:
            raise ProtocolError(f"{self.kind} has no encoder")
        return self.encoder(as_tensor(x))

    def decode(self, y_hat, z_hat):
        if not self.uses_autoencoder:
            raise ProtocolError(f"{self.kind} has no decoder")
        return self.decoder(as_tensor(y_hat), as_tensor(z_hat))

    def cnn_forward(self, x, rng=None):
        """Training forward for CNN variants; cnn+noise corrupts the input first."""
        if self.uses_autoencoder:
            raise ProtocolError(f"{self.kind} is not a CNN variant")
        return self.cnn(self.maybe_corrupt(x, rng))

    def classify(self, x):
        """Clean-input malignancy scores in (0,1); used at evaluation time."""
        if self.uses_autoencoder:
            y_hat, _ = self.encode(x)
            return y_hat
        return self.cnn(as_tensor(x))

    def parameters(self):
        if self.uses_autoencoder:
            return (
                self.encoder.parameters()
                + self.decoder.parameters()
                + self.latent_disc.parameters()
                + self.label_disc.parameters()
            )
        return self.cnn.parameters()

    def encoder_parameters(self):
        """The three encoder groups together: trunk, label head, latent head."""
        return (
            self.encoder.trunk_parameters()
            + self.encoder.label_parameters()
            + self.encoder.latent_parameters()
        )

    def autoencoder_parameters(self):
        return self.encoder_parameters() + self.decoder.parameters()


def build_variant(kind, sigma=0.1, seed=0, label_prior=0.5):
    """Construct one of the six ablation models with seeded initialization."""
    kind = canonical_kind(kind)
    denoise, autoenc, unlab = VARIANT_FLAGS[kind]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xDAAE)))
    corruption = CorruptionSpec(sigma=sigma if denoise else 0.0, seed=seed)
    m = ModelVariant(
        kind=kind,
        uses_denoising=denoise,
        uses_autoencoder=autoenc,
        uses_unlabelled=unlab,
        corruption=corruption,
        label_prior=label_prior,
    )
    if autoenc:
        m.encoder = EncoderStack(rng)
        m.decoder = DecoderStack(rng)
        m.latent_disc = Discriminator("latent", rng)
        m.label_disc = Discriminator("label", rng)
    else:
        m.cnn = CnnClassifier(rng)
    return m


def sample_prior(kind, batch, rng, label_prior=0.5):
    """Draw prior samples: 200-d standard normal or Bernoulli labels in {0., 1.}."""
    if kind == "latent":
        return Tensor(rng.standard_normal((batch, LATENT_DIM)).astype(np.float32))
    if kind == "label":
        draws = (rng.random((batch, 1)) < label_prior).astype(np.float32)
        return Tensor(draws)
    raise ConfigError(f"prior kind must be latent|label, got {kind!r}")


def generate(model, n, label="random", seed=0):
    """Decode `n` prior draws into images; `label` is 0, 1, or 'random'."""
    if n <= 0:
        raise ConfigError(f"sample count must be positive, got {n}")
    if not model.uses_autoencoder:
        raise ProtocolError(f"{model.kind} has no decoder to sample from")
    rng = np.random.default_rng(seed)
    z = sample_prior("latent", n, rng)
    if label == "random":
        y = sample_prior("label", n, rng, model.label_prior)
    elif label in (0, 1, 0.0, 1.0):
        y = Tensor(np.full((n, 1), float(label), dtype=np.float32))
    else:
        raise ConfigError(f"label must be 0, 1 or 'random', got {label!r}")
    return model.decode(y, z).data
