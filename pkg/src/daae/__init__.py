"""daae: semi-supervised denoising adversarial autoencoders for binary
lesion classification, with a from-scratch differentiable tensor core.

The public pieces most callers want:

    from daae.autodiff import Tensor, backward
    from daae.models import build_variant
    from daae.training import TrainConfig, train
    from daae.metrics import evaluate
    from daae.data import synth_generate, SynthSpec, split, SplitSpec
"""

__version__ = "0.1.0"
