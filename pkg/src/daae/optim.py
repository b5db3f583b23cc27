"""RMSProp with optional momentum on the normalized gradient.

Update per parameter, elementwise:

    v <- decay * v + (1 - decay) * g^2
    m <- momentum * m + g / sqrt(v + eps)
    p <- p - lr * m

With momentum = 0 this is the plain momentum-free RMSProp update.
Buffers are allocated lazily on the first step and persist across steps.
"""

import numpy as np

from .errors import ConfigError, ContractError


class RMSProp:
    def __init__(self, params, lr, momentum=0.0, decay=0.99, eps=1e-8):
        """`params` is a list of (name, Tensor) pairs; names key the state."""
        if lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {lr}")
        if not 0 <= momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        if not 0 < decay < 1:
            raise ConfigError(f"decay must be in (0, 1), got {decay}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.decay = decay
        self.eps = eps
        self._square_avg = {}
        self._momentum_buf = {}
        self._scratch = {}

    def step(self):
        for name, p in self.params:
            if p.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient")
            g = p.grad
            if g.shape != p.shape:
                raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            v = self._square_avg.get(name)
            if v is None:
                v = np.zeros_like(p.data)
                self._square_avg[name] = v
            scratch = self._scratch.get(name)
            if scratch is None or scratch.shape != p.shape:
                scratch = np.empty_like(p.data)
                self._scratch[name] = scratch
            # v <- decay*v + (1-decay)*g^2, then update <- g/sqrt(v+eps),
            # all in place: the optimizer pass is memory-bound on big layers
            np.multiply(g, g, out=scratch)
            v *= self.decay
            scratch *= 1.0 - self.decay
            v += scratch
            np.add(v, self.eps, out=scratch)
            np.sqrt(scratch, out=scratch)
            np.divide(g, scratch, out=scratch)
            if self.momentum > 0:
                m = self._momentum_buf.get(name)
                if m is None:
                    m = np.zeros_like(p.data)
                    self._momentum_buf[name] = m
                m *= self.momentum
                m += scratch
                np.multiply(m, self.lr, out=scratch)
            else:
                scratch *= self.lr
            p.data -= scratch

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def state_dict(self):
        """Buffers by name, for checkpointing."""
        return {
            "square_avg": {k: v.copy() for k, v in self._square_avg.items()},
            "momentum_buf": {k: v.copy() for k, v in self._momentum_buf.items()},
        }

    def load_state_dict(self, state):
        self._square_avg = {k: np.array(v) for k, v in state.get("square_avg", {}).items()}
        self._momentum_buf = {k: np.array(v) for k, v in state.get("momentum_buf", {}).items()}
