"""Central finite-difference gradient checking."""

from typing import Callable, Sequence

import numpy as np

from .ops import mul, sum as tsum
from .tensor import Tensor, backward


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``arr`` (mutated in place, restored)."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a-b|| / max(||a||, ||b||)``, 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], seed: int = 0, eps: float = 1e-4) -> float:
    """Compare analytic and numeric gradients of ``sum(fn(*inputs) * R)`` for a fixed random R.

    Inputs must be float64 arrays. Returns the worst relative error over all inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    rng = np.random.default_rng(seed)
    proj = Tensor(rng.standard_normal(out.shape))
    loss = tsum(mul(out, proj)) if out.ndim else out
    backward(loss)

    def scalar():
        o = fn(*[Tensor(a) for a in arrays])
        return float((o.data * proj.data).sum()) if o.ndim else float(o.data)

    worst = 0.0
    for arr, leaf in zip(arrays, leaves):
        num = numeric_grad(scalar, arr, eps)
        ana = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        worst = max(worst, relative_error(ana, num))
    return worst
