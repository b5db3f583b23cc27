"""Shared test oracles.

The gradient oracle is central finite differences at 64-bit with step
1e-5; analytic backward must agree within relative error 1e-4 (measured
as max abs deviation over the max abs finite-difference entry).  The
oracle perturbs raw numpy arrays and re-runs the forward closure, so it
is independent of the tape it checks.
"""

import numpy as np
import pytest

from daae.autodiff import Tensor, backward


def finite_difference_gradient(f, arrays, index, step=1e-5):
    """d f(arrays) / d arrays[index] by central differences; f returns a float."""
    x = arrays[index]
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(*arrays)
        flat[i] = orig - step
        fm = f(*arrays)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def relative_error(analytic, reference):
    scale = max(np.abs(reference).max(), 1e-10)
    return np.abs(analytic - reference).max() / scale


def check_gradients(build, arrays, tol=1e-4, step=1e-5):
    """Assert backward of `build(*tensors)` matches finite differences.

    `build` maps Tensors to a scalar Tensor; `arrays` are float64 numpy
    arrays (perturbed in place by the oracle, restored afterwards).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build(*tensors)
    backward(loss)

    def scalar_f(*arrs):
        ts = [Tensor(a, dtype=np.float64) for a in arrs]
        return float(build(*ts).data)

    for i, t in enumerate(tensors):
        fd = finite_difference_gradient(scalar_f, arrays, i, step=step)
        assert t.grad is not None, f"no gradient on input {i}"
        err = relative_error(t.grad, fd)
        assert err < tol, f"input {i}: relative error {err:.3g} >= {tol}"


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
