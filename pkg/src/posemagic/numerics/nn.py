"""Activations and normalization layers on top of the tape."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor import Tensor, as_tensor, custom_op, gelu, relu, softplus, tanh

LN_EPS = 1e-5
BN_EPS = 1e-5

_ACTIVATIONS = {"relu": relu, "gelu": gelu, "tanh": tanh, "softplus": softplus}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")
    return fn(x)


@dataclass
class NormState:
    """Running statistics and mode flag of one batch-norm layer."""

    channels: int
    momentum: float = 0.1
    eps: float = BN_EPS
    training: bool = True
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if self.running_mean is None:
            self.running_mean = np.zeros(self.channels)
        if self.running_var is None:
            self.running_var = np.ones(self.channels)


def _affine_backward(g, xhat, gamma, beta, lead_axes):
    gg = (g * xhat).sum(axis=lead_axes) if gamma is not None and gamma.requires_grad else None
    gb = g.sum(axis=lead_axes) if beta is not None and beta.requires_grad else None
    return gg, gb


def layer_norm(x, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
               eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    gamma = None if gamma is None else as_tensor(gamma)
    beta = None if beta is None else as_tensor(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    g_arr = gamma.data if gamma is not None else None
    out = xhat if gamma is None else xhat * g_arr
    if beta is not None:
        out = out + beta.data
    lead = tuple(range(xd.ndim - 1))

    def _bw(g):
        gx = g if g_arr is None else g * g_arr
        gx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        gg, gb = _affine_backward(g, xhat, gamma, beta, lead)
        res = [gx]
        if gamma is not None:
            res.append(gg)
        if beta is not None:
            res.append(gb)
        return tuple(res)

    parents = [x] + [p for p in (gamma, beta) if p is not None]
    return custom_op(out, parents, _bw, "layer_norm")


def batch_norm(x, gamma: Optional[Tensor], beta: Optional[Tensor], state: NormState) -> Tensor:
    """Normalize each channel (last axis) over every other axis.

    In training mode batch statistics are used and the running estimates are
    updated in place; in eval mode the running estimates are used.  A batch of
    a single row is allowed: its variance is 0 and the ``eps`` floor keeps the
    result finite (the output is then ``beta``).
    """
    x = as_tensor(x)
    gamma = None if gamma is None else as_tensor(gamma)
    beta = None if beta is None else as_tensor(beta)
    xd = x.data
    if xd.shape[-1] != state.channels:
        raise ValueError(f"batch_norm: expected {state.channels} channels, got shape {xd.shape}")
    lead = tuple(range(xd.ndim - 1))
    rows = xd.size // xd.shape[-1]
    if state.training:
        mu = xd.mean(axis=lead)
        var = ((xd - mu) ** 2).mean(axis=lead)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        unbiased = var * rows / (rows - 1) if rows > 1 else var
        state.running_var = (1 - m) * state.running_var + m * unbiased
    else:
        mu, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (xd - mu) * inv
    g_arr = gamma.data if gamma is not None else None
    out = xhat if gamma is None else xhat * g_arr
    if beta is not None:
        out = out + beta.data
    training = state.training

    def _bw(g):
        gx = g if g_arr is None else g * g_arr
        if training:
            gx = inv * (gx - gx.mean(axis=lead) - xhat * (gx * xhat).mean(axis=lead))
        else:
            gx = gx * inv
        gg, gb = _affine_backward(g, xhat, gamma, beta, lead)
        res = [gx]
        if gamma is not None:
            res.append(gg)
        if beta is not None:
            res.append(gb)
        return tuple(res)

    parents = [x] + [p for p in (gamma, beta) if p is not None]
    return custom_op(out, parents, _bw, "batch_norm")


def normalize(x, kind: str, state: Optional[NormState] = None,
              gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None) -> Tensor:
    if kind == "layer":
        return layer_norm(x, gamma, beta)
    if kind == "batch":
        if state is None:
            state = NormState(as_tensor(x).shape[-1])
        return batch_norm(x, gamma, beta, state)
    raise ValueError(f"unknown norm kind {kind!r}")
