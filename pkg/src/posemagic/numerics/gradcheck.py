"""Central finite-difference oracle for the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Param, Tensor, backward, no_grad


class NonDeterministicError(RuntimeError):
    pass


def _value(f: Callable[[], Tensor]) -> float:
    with no_grad():
        return float(np.asarray(f().data).reshape(-1)[0])


def grad_check(f: Callable[[], Tensor], params: Sequence[Param], eps: float = 1e-6,
               return_details: bool = False):
    """Largest relative gap between analytic and central-difference gradients.

    ``f`` takes no arguments and reads ``params`` by reference.  The error for
    one entry is ``|a - n| / max(|a|, |n|, 1e-8)``; the maximum over every
    entry of every parameter is returned.  With ``return_details`` a
    ``{param_name: max_error}`` mapping is returned as well.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    base = _value(f)
    if _value(f) != base:
        raise NonDeterministicError("f returned different values for identical inputs")

    for p in params:
        p.zero_grad()
    loss = f()
    if loss.size != 1:
        raise ValueError(f"grad_check: f must return a scalar, got shape {loss.shape}")
    backward(loss)
    analytic = {id(p): p.grad.copy() for p in params}

    worst = 0.0
    per_param = {}
    for p in params:
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = _value(f)
            flat[i] = orig - eps
            fm = _value(f)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * eps)
        a = analytic[id(p)].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        err = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
        per_param[p.name or f"param{len(per_param)}"] = err
        worst = max(worst, err)
    if return_details:
        return worst, per_param
    return worst
