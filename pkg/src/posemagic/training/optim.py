"""Adaptive-moment optimizer with decoupled weight decay, and the epoch schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import Param


@dataclass
class OptConfig:
    lr: float = 8e-4
    lr_decay: float = 0.99
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def lr_at_epoch(cfg: OptConfig, epoch: int) -> float:
    return cfg.lr * cfg.lr_decay ** epoch


@dataclass
class OptState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0


class AdamW:
    """``p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`` per parameter.

    Moments are keyed by parameter name, so names must be unique.
    """

    def __init__(self, params: list[Param], cfg: OptConfig | None = None) -> None:
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.cfg = cfg or OptConfig()
        self.state = OptState(
            m={p.name: np.zeros_like(p.data) for p in self.params},
            v={p.name: np.zeros_like(p.data) for p in self.params},
        )

    @property
    def lr(self) -> float:
        return lr_at_epoch(self.cfg, self.state.epoch)

    def end_epoch(self) -> None:
        self.state.epoch += 1

    def step(self) -> None:
        st, cfg = self.state, self.cfg
        st.step += 1
        b1, b2 = cfg.betas
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        lr = self.lr
        for p in self.params:
            g = p.grad
            m = st.m[p.name]
            v = st.v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
            if cfg.weight_decay:
                update = update + cfg.weight_decay * p.data
            p.data -= lr * update

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
