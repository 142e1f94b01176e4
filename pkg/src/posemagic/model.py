"""Hybrid Mamba-GCN lifter: embedding, N Magic Blocks, tanh expansion, regression head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import (
    GcnStreamParams,
    Skeleton,
    gcn_stream,
    load_skeleton,
    normalize_adjacency,
    spatial_adjacency,
    temporal_provider,
)
from .mamba import MambaStreamParams, mamba_bidirectional, mamba_stream
from .numerics import NormState, Param, Tensor, as_tensor, concat, linear, no_grad, softmax, tanh
from .ssm import ConfigError

DIRECTIONS = ("bidirectional", "causal")


@dataclass
class ModelConfig:
    N: int = 26
    d: int = 128
    d_prime: int = 512
    k: int = 2
    J: int = 17
    n: int = 16
    direction: str = "bidirectional"
    T_train: int = 243
    skeleton: Optional[str] = None
    lambda_v: float = 20.0
    mlp_ratio: int = 4
    fusion: str = "position"
    knn_similarity: str = "dot"
    scan_impl: str = "sequential"
    output_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("d", "d_prime", "k", "J", "n", "T_train", "mlp_ratio"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.N < 0:
            raise ConfigError(f"N must be >= 0, got {self.N}")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.fusion not in ("position", "channel"):
            raise ConfigError(f"fusion must be 'position' or 'channel', got {self.fusion!r}")
        if self.knn_similarity not in ("dot", "cosine"):
            raise ConfigError(f"knn_similarity must be 'dot' or 'cosine', got {self.knn_similarity!r}")
        if self.scan_impl not in ("sequential", "parallel"):
            raise ConfigError(f"scan_impl must be 'sequential' or 'parallel'")
        if self.lambda_v < 0:
            raise ConfigError("lambda_v must be >= 0")

    @property
    def causal(self) -> bool:
        return self.direction == "causal"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**d)


class MagicBlockParams:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str) -> None:
        d = cfg.d
        self.spatial_mamba = MambaStreamParams(d, cfg.n, rng, True, f"{prefix}.s_mamba")
        self.temporal_mamba = MambaStreamParams(d, cfg.n, rng, not cfg.causal, f"{prefix}.t_mamba")
        self.spatial_gcn = GcnStreamParams(d, rng, cfg.mlp_ratio, f"{prefix}.s_gcn")
        self.temporal_gcn = GcnStreamParams(d, rng, cfg.mlp_ratio, f"{prefix}.t_gcn")
        out = 2 if cfg.fusion == "position" else 2 * d
        bound = 1.0 / np.sqrt(2 * d)
        self.fusion_w = Param(rng.uniform(-bound, bound, (2 * d, out)), f"{prefix}.fusion.W")

    def params(self) -> list[Param]:
        return (self.spatial_mamba.params() + self.temporal_mamba.params()
                + self.spatial_gcn.params() + self.temporal_gcn.params() + [self.fusion_w])

    def norm_states(self) -> list[NormState]:
        return [self.spatial_gcn.bn_state, self.temporal_gcn.bn_state]


def adaptive_fusion(X_M, X_G, W) -> Tensor:
    """Convex per-position mix ``a_M * X_M + a_G * X_G`` with ``softmax(W [X_M, X_G])``.

    ``W`` of shape ``(2d, 2)`` gives one weight pair per position; ``(2d, 2d)``
    gives one pair per channel.
    """
    X_M, X_G, W = as_tensor(X_M), as_tensor(X_G), as_tensor(W)
    if X_M.shape != X_G.shape:
        raise ConfigError(f"fusion inputs differ in shape: {X_M.shape} vs {X_G.shape}")
    d = X_M.shape[-1]
    logits = linear(concat([X_M, X_G], axis=-1), W)
    if W.shape[-1] == 2:
        alpha = softmax(logits, -1)
        return alpha[..., 0:1] * X_M + alpha[..., 1:2] * X_G
    alpha = softmax(logits.reshape(*X_M.shape[:-1], 2, d), -2)
    return alpha[..., 0, :] * X_M + alpha[..., 1, :] * X_G


def _to_temporal(x: Tensor, B: int, T: int, J: int, d: int) -> Tensor:
    return x.reshape(B, T, J, d).transpose(0, 2, 1, 3).reshape(B * J, T, d)


def _from_temporal(x: Tensor, B: int, T: int, J: int, d: int) -> Tensor:
    return x.reshape(B, J, T, d).transpose(0, 2, 1, 3)


def magic_block(X, p: MagicBlockParams, cfg: ModelConfig, spatial_adj: np.ndarray) -> Tensor:
    """One depth level on ``X`` of shape ``(B, T, J, d)``.

    Both streams read the same input.  Each runs joints-as-tokens first and
    frames-as-tokens second; their outputs are merged by adaptive fusion.
    """
    X = as_tensor(X)
    B, T, J, d = X.shape
    xs = X.reshape(B * T, J, d)

    m = mamba_bidirectional(xs, p.spatial_mamba, cfg.scan_impl)
    m = mamba_stream(_to_temporal(m, B, T, J, d), p.temporal_mamba, cfg.causal, cfg.scan_impl)
    x_m = _from_temporal(m, B, T, J, d)

    g = gcn_stream(xs, spatial_adj, p.spatial_gcn)
    provider = temporal_provider(cfg.k, cfg.causal, cfg.knn_similarity == "cosine")
    g = gcn_stream(_to_temporal(g, B, T, J, d), provider, p.temporal_gcn)
    x_g = _from_temporal(g, B, T, J, d)

    return adaptive_fusion(x_m, x_g, p.fusion_w)


class PoseMagicModel:
    """Parameter container and forward pass.

    ``forward`` maps 2D keypoints with confidence, ``(T, J, 3)`` or
    ``(B, T, J, 3)``, to 3D joints of the same shape.  Only a per-joint
    (spatial) positional embedding exists, so any ``T >= 1`` is accepted.
    """

    def __init__(self, cfg: ModelConfig, skeleton: Optional[Skeleton] = None) -> None:
        self.config = cfg
        self.skeleton = skeleton if skeleton is not None else load_skeleton(cfg.skeleton)
        if self.skeleton.joint_count != cfg.J:
            raise ConfigError(f"skeleton has {self.skeleton.joint_count} joints, config J={cfg.J}")
        rng = np.random.default_rng(cfg.seed)
        d, dp = cfg.d, cfg.d_prime
        b_in = 1.0 / np.sqrt(3)
        self.input_w = Param(rng.uniform(-b_in, b_in, (3, d)), "embed.W")
        self.input_b = Param(np.zeros(d), "embed.b")
        self.pos_embed = Param(rng.normal(0.0, 0.02, (cfg.J, d)), "embed.P_pos")
        self.blocks = [MagicBlockParams(cfg, rng, f"block{i}") for i in range(cfg.N)]
        b_e = 1.0 / np.sqrt(d)
        self.expand_w = Param(rng.uniform(-b_e, b_e, (d, dp)), "expand.W")
        self.expand_b = Param(np.zeros(dp), "expand.b")
        b_h = 1.0 / np.sqrt(dp)
        self.head_w = Param(rng.uniform(-b_h, b_h, (dp, 3)), "head.W")
        self.head_b = Param(np.zeros(3), "head.b")
        self.spatial_adj = normalize_adjacency(spatial_adjacency(self.skeleton))

    # -- parameter plumbing -------------------------------------------------
    def params(self) -> list[Param]:
        out = [self.input_w, self.input_b, self.pos_embed]
        for blk in self.blocks:
            out += blk.params()
        out += [self.expand_w, self.expand_b, self.head_w, self.head_b]
        return out

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def norm_states(self) -> list[NormState]:
        return [s for blk in self.blocks for s in blk.norm_states()]

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params()))

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def train(self, mode: bool = True) -> "PoseMagicModel":
        for s in self.norm_states():
            s.training = mode
        return self

    def eval(self) -> "PoseMagicModel":
        return self.train(False)

    @property
    def training(self) -> bool:
        states = self.norm_states()
        return bool(states and states[0].training)

    # -- forward --------------------------------------------------------------
    def embed(self, X2d) -> Tensor:
        X2d = as_tensor(X2d)
        if X2d.shape[-2:] != (self.config.J, 3):
            raise ConfigError(f"expected (..., T, {self.config.J}, 3) input, got {X2d.shape}")
        return linear(X2d, self.input_w, self.input_b) + self.pos_embed

    def forward(self, X2d) -> Tensor:
        X2d = as_tensor(X2d)
        if not np.all(np.isfinite(X2d.data)):
            raise ValueError("input contains NaN or Inf")
        single = X2d.ndim == 3
        if single:
            X2d = X2d.reshape(1, *X2d.shape)
        if X2d.ndim != 4 or X2d.shape[1] < 1:
            raise ConfigError(f"expected (T, J, 3) or (B, T, J, 3) input, got {X2d.shape}")
        x = self.embed(X2d)
        for blk in self.blocks:
            x = magic_block(x, blk, self.config, self.spatial_adj)
        m = tanh(linear(x, self.expand_w, self.expand_b))
        out = linear(m, self.head_w, self.head_b)
        if self.config.output_scale != 1.0:
            out = out * self.config.output_scale
        return out.reshape(*out.shape[1:]) if single else out

    __call__ = forward

    def predict(self, X2d) -> np.ndarray:
        with no_grad():
            return self.forward(X2d).data


def count_params(cfg: ModelConfig) -> int:
    """Scalar parameter count of a model built from ``cfg``."""
    return PoseMagicModel(cfg).num_params()


def reference_config(direction: str = "bidirectional") -> ModelConfig:
    return ModelConfig(N=26, d=128, d_prime=512, k=2, J=17, n=16, direction=direction)


def tiny_config(direction: str = "bidirectional", **overrides) -> ModelConfig:
    """Small configuration used for smoke runs and checks."""
    base = dict(N=2, d=16, d_prime=64, k=2, J=17, n=4, direction=direction, T_train=27)
    base.update(overrides)
    return ModelConfig(**base)
