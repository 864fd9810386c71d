"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from nacodec.tensor import Tensor


def fd_gradient(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x (x is temporarily
    mutated in place)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(build, arrays: dict, rel: float = 1e-6, eps: float = 1e-6):
    """Compare reverse-mode and finite-difference gradients.

    ``build`` maps a dict of name -> Tensor to a scalar Tensor. ``arrays``
    holds float64 ndarrays. Returns the worst relative error seen.
    """
    tensors = {k: Tensor(v.astype(np.float64), requires_grad=True)
               for k, v in arrays.items()}
    loss = build(tensors)
    loss.backward()
    worst = 0.0
    for name, arr in arrays.items():
        ad = tensors[name].grad
        assert ad is not None, f"no gradient reached {name}"

        def f(x, name=name):
            probe = {k: Tensor(v.astype(np.float64)) for k, v in arrays.items()}
            probe[name] = Tensor(x)
            return build(probe).item()

        fd = fd_gradient(f, arr.astype(np.float64), eps=eps)
        err = rel_error(np.asarray(ad, dtype=np.float64), fd)
        assert err < rel, f"gradient mismatch for {name}: rel err {err:.3e}"
        worst = max(worst, err)
    return worst
