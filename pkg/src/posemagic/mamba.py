"""Mamba stream of a Magic Block.

Three paths share one layer-normalized copy of the input: a forward SSM path,
a backward SSM path run on the sequence-reversed projection (bidirectional
variant only), and an independent gating path.  The paths are merged by
Hadamard gating and added back to the input through ``W_p3``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .numerics import Param, Tensor, as_tensor, flip, gelu, layer_norm, linear
from .ssm import ConfigError, SsmParams, ssm_forward


class MambaStreamParams:
    """Weights of one Mamba stream; ``w_b``/``ssm_b`` are ``None`` when causal."""

    def __init__(self, d: int, n: int, rng: np.random.Generator, bidirectional: bool = True,
                 prefix: str = "mamba") -> None:
        bound = 1.0 / np.sqrt(d)

        def proj(name: str) -> Param:
            return Param(rng.uniform(-bound, bound, (d, d)), f"{prefix}.{name}")

        self.d = d
        self.bidirectional = bidirectional
        self.norm_gamma = Param(np.ones(d), f"{prefix}.norm.gamma")
        self.norm_beta = Param(np.zeros(d), f"{prefix}.norm.beta")
        self.w_p1 = proj("W_p1")
        self.w_p2 = proj("W_p2")
        self.w_f = proj("W_f")
        self.ssm_f = SsmParams.init(d, n, rng, f"{prefix}.ssm_f")
        self.w_b: Optional[Param] = proj("W_b") if bidirectional else None
        self.ssm_b: Optional[SsmParams] = (
            SsmParams.init(d, n, rng, f"{prefix}.ssm_b") if bidirectional else None)
        # zero so that a freshly built block is the identity map
        self.w_p3 = Param(np.zeros((d, d)), f"{prefix}.W_p3")

    def params(self) -> list[Param]:
        out = [self.norm_gamma, self.norm_beta, self.w_p1, self.w_p2, self.w_f]
        out += self.ssm_f.params()
        if self.bidirectional:
            out.append(self.w_b)
            out += self.ssm_b.params()
        out.append(self.w_p3)
        return out


def _paths(X: Tensor, p: MambaStreamParams, scan_impl: str):
    if X.ndim != 3 or X.shape[-1] != p.d:
        raise ConfigError(f"Mamba stream expects (B, L, {p.d}) input, got {X.shape}")
    xn = layer_norm(X, p.norm_gamma, p.norm_beta)
    u = linear(xn, p.w_p1)
    x_f = ssm_forward(gelu(linear(u, p.w_f)), p.ssm_f, scan_impl)
    x_i = gelu(linear(xn, p.w_p2))
    return u, x_f, x_i


def mamba_bidirectional(X, p: MambaStreamParams, scan_impl: str = "sequential") -> Tensor:
    """``X + (X_f * X_i + X_b * X_i) W_p3`` for ``X`` of shape ``(B, L, d)``."""
    X = as_tensor(X)
    if not p.bidirectional:
        raise ConfigError("bidirectional stream requires backward-path weights")
    u, x_f, x_i = _paths(X, p, scan_impl)
    x_b = flip(ssm_forward(gelu(linear(flip(u, 1), p.w_b)), p.ssm_b, scan_impl), 1)
    return X + linear(x_f * x_i + x_b * x_i, p.w_p3)


def mamba_unidirectional(X, p: MambaStreamParams, scan_impl: str = "sequential") -> Tensor:
    """Causal variant: ``X + (X_f * X_i) W_p3``; output at step t sees steps <= t only."""
    X = as_tensor(X)
    _, x_f, x_i = _paths(X, p, scan_impl)
    return X + linear(x_f * x_i, p.w_p3)


def mamba_stream(X, p: MambaStreamParams, causal: bool, scan_impl: str = "sequential") -> Tensor:
    if causal:
        return mamba_unidirectional(X, p, scan_impl)
    return mamba_bidirectional(X, p, scan_impl)
