"""Layer vocabulary: 2-d convolution, transposed convolution, linear,
relu and sigmoid, all differentiable through the tape.

Convolution is cross-correlation (no kernel flip).  Weights are stored
``[out_channels, in_channels, k, k]`` for both conv and transposed conv;
linear weights are ``[out_features, in_features]``.  Initialization is
uniform in ±1/sqrt(fan_in) with zero biases, drawn from a caller-supplied
seeded generator so runs are reproducible.

The hot path is im2col/col2im (see `daae.backend`) plus one BLAS GEMM per
direction; everything here stays shape-exact with the formulas:

    conv out extent   = floor((n + 2p - k)/s) + 1
    tconv out extent  = (n - 1)s - 2p + k + output_padding
"""

import numpy as np
from scipy.special import expit

from . import backend
from .autodiff import Tensor, as_tensor, make_node
from .errors import ConfigError, ShapeError

DTYPE = np.float32


def uniform_init(rng, shape, fan_in, dtype=DTYPE):
    # relu-gain-corrected uniform (Kaiming): variance 2/fan_in keeps
    # activation scale roughly constant through the relu conv stack.
    # Plain +-1/sqrt(fan_in) shrinks activations ~6x in variance per layer,
    # which starves the fixed-learning-rate optimizer of signal.
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def conv_output_extent(n, kernel_size, stride, padding):
    return (n + 2 * padding - kernel_size) // stride + 1


def tconv_output_extent(n, kernel_size, stride, padding, output_padding):
    return (n - 1) * stride - 2 * padding + kernel_size + output_padding


def conv2d(x, weight, bias, stride, padding):
    """Cross-correlation of ``x`` [B,C,H,W] with ``weight`` [O,C,k,k] plus bias."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [B,C,H,W] input, got {x.shape}")
    b_, c, h, w = x.shape
    o, cw, k, _ = weight.shape
    if c != cw:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {cw}")
    out_h = conv_output_extent(h, k, stride, padding)
    out_w = conv_output_extent(w, k, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d input {h}x{w} too small for k={k}, s={stride}, p={padding}")

    cols = backend.im2col(x.data, k, stride, padding, out_h, out_w)  # [B*L, C*k*k]
    wmat = weight.data.reshape(o, -1)
    out_mat = cols @ wmat.T + bias.data  # [B*L, O]
    out = np.ascontiguousarray(out_mat.reshape(b_, out_h, out_w, o).transpose(0, 3, 1, 2))

    memo = {}

    def grad_mat(g):
        if "gmat" not in memo:
            memo["gmat"] = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        return memo["gmat"]

    def vjp_x(g):
        dcols = grad_mat(g) @ wmat
        return backend.col2im(dcols, b_, c, h, w, k, stride, padding, out_h, out_w)

    def vjp_w(g):
        return (grad_mat(g).T @ cols).reshape(weight.shape)

    def vjp_b(g):
        return g.sum(axis=(0, 2, 3))

    return make_node(out, "conv2d", [(x, vjp_x), (weight, vjp_w), (bias, vjp_b)])


def tconv2d(x, weight, bias, stride, padding, output_padding):
    """Transposed convolution: the adjoint of `conv2d` with matched geometry.

    ``x`` is [B,C_in,h,w], ``weight`` [C_out,C_in,k,k]; output spatial extent
    is (n-1)*stride - 2*padding + k + output_padding.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4:
        raise ShapeError(f"tconv2d expects [B,C,H,W] input, got {x.shape}")
    b_, c_in, h, w = x.shape
    c_out, cw, k, _ = weight.shape
    if c_in != cw:
        raise ShapeError(f"tconv2d channel mismatch: input has {c_in}, weight expects {cw}")
    if not 0 <= output_padding < stride:
        raise ConfigError(f"output_padding must be in [0, stride), got {output_padding}")
    out_h = tconv_output_extent(h, k, stride, padding, output_padding)
    out_w = tconv_output_extent(w, k, stride, padding, output_padding)

    # Matched conv maps [B, c_out, out_h, out_w] -> [B, c_in, h, w]; its
    # weight matrix is this layer's weight with the channel axes swapped.
    w_adj = np.ascontiguousarray(weight.data.transpose(1, 0, 2, 3)).reshape(c_in, -1)
    x_mat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, c_in)  # [B*h*w, C_in]
    cols = x_mat @ w_adj  # [B*h*w, c_out*k*k]
    out = backend.col2im(cols, b_, c_out, out_h, out_w, k, stride, padding, h, w)
    out += bias.data[None, :, None, None]

    memo = {}

    def grad_cols(g):
        if "cols" not in memo:
            memo["cols"] = backend.im2col(g, k, stride, padding, h, w)  # [B*h*w, c_out*k*k]
        return memo["cols"]

    def vjp_x(g):
        dx_mat = grad_cols(g) @ w_adj.T  # [B*h*w, c_in]
        return np.ascontiguousarray(dx_mat.reshape(b_, h, w, c_in).transpose(0, 3, 1, 2))

    def vjp_w(g):
        dw_adj = x_mat.T @ grad_cols(g)  # [c_in, c_out*k*k]
        return np.ascontiguousarray(
            dw_adj.reshape(c_in, c_out, k, k).transpose(1, 0, 2, 3)
        )

    def vjp_b(g):
        return g.sum(axis=(0, 2, 3))

    return make_node(out, "tconv2d", [(x, vjp_x), (weight, vjp_w), (bias, vjp_b)])


def linear(x, weight, bias):
    """Affine map of ``x`` [B,in] by ``weight`` [out,in] and ``bias`` [out]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T + bias.data
    return make_node(
        out,
        "linear",
        [
            (x, lambda g: g @ weight.data),
            (weight, lambda g: g.T @ x.data),
            (bias, lambda g: g.sum(axis=0)),
        ],
    )


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0  # subgradient 0 at exactly 0
    return make_node(np.where(mask, x.data, 0), "relu", [(x, lambda g: np.where(mask, g, 0))])


def sigmoid(x):
    x = as_tensor(x)
    out = expit(x.data)
    # vjp uses sigma(x)*sigma(-x): identical math to out*(1-out) but it
    # keeps resolving when out rounds to exactly 1.0 in float32
    return make_node(out, "sigmoid", [(x, lambda g: g * out * expit(-x.data))])


def activation(kind, x):
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


class Conv2D:
    """Convolution layer owning its weights; spatial extent shrinks by `stride`."""

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size, stride, padding, rng):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weights = Tensor(uniform_init(rng, shape, fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=DTYPE), requires_grad=True)

    def __call__(self, x):
        return conv2d(x, self.weights, self.bias, self.stride, self.padding)

    def out_hw(self, h, w):
        return (
            conv_output_extent(h, self.kernel_size, self.stride, self.padding),
            conv_output_extent(w, self.kernel_size, self.stride, self.padding),
        )

    def parameters(self):
        return [("weight", self.weights), ("bias", self.bias)]

    def describe(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
        }


class TransposedConv2D:
    """Transposed convolution layer; with k=3, s=2, p=1, op=1 the extent doubles."""

    kind = "tconv2d"

    def __init__(
        self, in_channels, out_channels, kernel_size, stride, padding, output_padding, rng
    ):
        if not 0 <= output_padding < stride:
            raise ConfigError(f"output_padding must be in [0, stride), got {output_padding}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weights = Tensor(uniform_init(rng, shape, fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=DTYPE), requires_grad=True)

    def __call__(self, x):
        return tconv2d(x, self.weights, self.bias, self.stride, self.padding, self.output_padding)

    def out_hw(self, h, w):
        return (
            tconv_output_extent(h, self.kernel_size, self.stride, self.padding, self.output_padding),
            tconv_output_extent(w, self.kernel_size, self.stride, self.padding, self.output_padding),
        )

    def parameters(self):
        return [("weight", self.weights), ("bias", self.bias)]

    def describe(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
            "output_padding": self.output_padding,
        }


class Linear:
    kind = "linear"

    def __init__(self, in_features, out_features, rng):
        self.in_features = in_features
        self.out_features = out_features
        self.weights = Tensor(
            uniform_init(rng, (out_features, in_features), in_features), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_features, dtype=DTYPE), requires_grad=True)

    def __call__(self, x):
        return linear(x, self.weights, self.bias)

    def parameters(self):
        return [("weight", self.weights), ("bias", self.bias)]

    def describe(self):
        return {
            "kind": self.kind,
            "in_features": self.in_features,
            "out_features": self.out_features,
        }
