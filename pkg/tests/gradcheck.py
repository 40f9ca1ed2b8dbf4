"""Finite-difference oracle shared by the gradient tests.

The oracle only ever calls the forward function on perturbed numpy inputs;
it never touches a tape, so it stays independent of the reverse-mode path
it is used to check.
"""

import numpy as np

from oncokit.autodiff import Tape, Tensor, backward


def numeric_grad(f, arrays, index, h=1e-5):
    """Central-difference gradient of scalar f(*arrays) w.r.t. arrays[index]."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    target = arrays[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(*arrays)
        flat[i] = orig - h
        fm = f(*arrays)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(a, b):
    # the 1e-6 floor acts as an absolute tolerance for gradients that are
    # mathematically zero but carry float dust on one side
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-6)
    return np.linalg.norm(a - b) / denom


def check_op(f, arrays, tol=1e-6, h=1e-5):
    """Compare taped gradients of scalar f against central differences.

    ``f`` must accept numpy arrays or Tensors interchangeably and return a
    scalar (float for arrays, 0-d Tensor for Tensors). Returns the worst
    relative error over all inputs.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = f(*tensors)
    grads = backward(tape, out)

    def f_np(*arrs):
        res = f(*[Tensor(a) for a in arrs])
        return float(res.data)

    worst = 0.0
    for i, t in enumerate(tensors):
        analytic = grads[t].data
        numeric = numeric_grad(f_np, arrays, i, h=h)
        worst = max(worst, rel_err(analytic, numeric))
    return worst
