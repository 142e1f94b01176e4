"""Skeleton and temporal graphs, and the GCN stream.

The spatial graph is the fixed bone topology.  The temporal graph is rebuilt
from the features of every sample and joint: each frame links to its ``k``
most similar frames, restricted to the past when causal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .numerics import (
    NormState,
    Param,
    Tensor,
    as_tensor,
    batch_norm,
    custom_op,
    gelu,
    layer_norm,
    linear,
    relu,
)

DEFAULT_SKELETON = "h36m_17.json"


class GraphError(ValueError):
    pass


@dataclass
class Skeleton:
    joint_count: int
    edges: list[tuple[int, int]]
    left_right_pairs: list[tuple[int, int]] = field(default_factory=list)
    root: int = 0
    names: list[str] = field(default_factory=list)
    rest_pose: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        J = self.joint_count
        self.edges = [tuple(int(v) for v in e) for e in self.edges]
        self.left_right_pairs = [tuple(int(v) for v in e) for e in self.left_right_pairs]
        for i, j in self.edges:
            if not (0 <= i < J and 0 <= j < J):
                raise GraphError(f"edge ({i}, {j}) out of range for {J} joints")
            if i == j:
                raise GraphError(f"self-edge at joint {i}")
        seen: set[int] = set()
        for l, r in self.left_right_pairs:
            if not (0 <= l < J and 0 <= r < J) or l == r or l in seen or r in seen:
                raise GraphError(f"invalid left/right pair ({l}, {r})")
            seen.update((l, r))
        if not 0 <= self.root < J:
            raise GraphError(f"root {self.root} out of range")
        if self.rest_pose is not None:
            self.rest_pose = np.asarray(self.rest_pose, dtype=np.float64)
            if self.rest_pose.shape != (J, 3):
                raise GraphError(f"rest_pose must be ({J}, 3), got {self.rest_pose.shape}")

    def mirror_permutation(self) -> np.ndarray:
        """Joint index map that swaps every left/right pair."""
        perm = np.arange(self.joint_count)
        for l, r in self.left_right_pairs:
            perm[l], perm[r] = r, l
        return perm

    def to_dict(self) -> dict:
        out = {"joint_count": self.joint_count, "edges": [list(e) for e in self.edges],
               "left_right_pairs": [list(p) for p in self.left_right_pairs],
               "root": self.root, "names": list(self.names)}
        if self.rest_pose is not None:
            out["rest_pose"] = self.rest_pose.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        try:
            return cls(int(d["joint_count"]), d["edges"], d.get("left_right_pairs", []),
                       int(d.get("root", 0)), list(d.get("names", [])), d.get("rest_pose"))
        except KeyError as exc:
            raise GraphError(f"skeleton definition is missing field {exc}") from None


def load_skeleton(path: Union[str, Path, None] = None) -> Skeleton:
    """Read a skeleton JSON file; ``None`` gives the bundled 17-joint skeleton."""
    if path is None:
        text = resources.files("posemagic.data").joinpath(DEFAULT_SKELETON).read_text()
    else:
        text = Path(path).read_text()
    return Skeleton.from_dict(json.loads(text))


def default_skeleton() -> Skeleton:
    return load_skeleton(None)


@dataclass
class Adjacency:
    """Binary adjacency with self-loops; ``matrix`` may carry leading batch axes."""

    matrix: np.ndarray
    causal: bool = False


def spatial_adjacency(skeleton: Skeleton) -> Adjacency:
    J = skeleton.joint_count
    A = np.eye(J)
    for i, j in skeleton.edges:
        if not (0 <= i < J and 0 <= j < J):
            raise GraphError(f"edge ({i}, {j}) out of range for {J} joints")
        A[i, j] = A[j, i] = 1.0
    return Adjacency(A, causal=False)


def temporal_similarity(x, cosine: bool = False) -> np.ndarray:
    """Frame-by-frame dot products of one joint's features, ``(..., T, d) -> (..., T, T)``."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if cosine:
        norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
        x = x / np.where(norms > 0, norms, 1.0)
    return np.einsum("...id,...jd->...ij", x, x)


def knn_adjacency(S: np.ndarray, k: int, causal: bool = False) -> Adjacency:
    """Link every frame to its ``k`` most similar other frames, then add self-loops.

    The diagonal is never a candidate.  When ``causal`` only earlier frames are
    candidates, so row ``i`` gets ``min(k, i)`` neighbours.  Ties go to the lower
    frame index.
    """
    if k < 1:
        raise GraphError(f"k must be >= 1, got {k}")
    S = np.asarray(S, dtype=np.float64)
    T = S.shape[-1]
    row, col = np.indices((T, T))
    invalid = (col >= row) if causal else (col == row)
    masked = np.where(invalid, -np.inf, S)
    order = np.argsort(-masked, axis=-1, kind="stable")[..., :min(k, T)]
    keep = np.take_along_axis(masked, order, axis=-1) > -np.inf
    A = np.zeros(S.shape)
    np.put_along_axis(A, order, keep.astype(np.float64), axis=-1)
    A[..., np.arange(T), np.arange(T)] = 1.0
    return Adjacency(A, causal=causal)


def normalize_adjacency(adj: Union[Adjacency, np.ndarray]) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` with ``D`` the row sums (used on both sides)."""
    A = adj.matrix if isinstance(adj, Adjacency) else np.asarray(adj, dtype=np.float64)
    deg = A.sum(axis=-1)
    assert np.all(deg > 0), "adjacency has an empty row; self-loops missing"
    s = 1.0 / np.sqrt(deg)
    return s[..., :, None] * A * s[..., None, :]


def aggregate(norm_adj: np.ndarray, x) -> Tensor:
    """``norm_adj @ x`` along the node axis of ``x`` (``(..., L, d)``).

    Each output row sums its nonzero neighbours in ascending column order, so
    a row's value does not depend on how many nodes follow it.
    """
    x = as_tensor(x)
    W = np.asarray(norm_adj, dtype=np.float64)
    L = x.shape[-2]
    if W.shape[-2:] != (L, L):
        raise GraphError(f"adjacency {W.shape} does not match {L} nodes of input {x.shape}")
    Wb = np.broadcast_to(W, (*x.shape[:-2], L, L))
    nnz = Wb != 0
    m = int(nnz.sum(axis=-1).max()) if Wb.size else 0
    idx = np.argsort(~nnz, axis=-1, kind="stable")[..., :m]
    w = np.take_along_axis(Wb, idx, axis=-1)
    lead = np.indices(x.shape[:-2]).reshape(x.ndim - 2, *x.shape[:-2], 1, 1)
    gathered = x.data[(*lead, idx)] if x.ndim > 2 else x.data[idx]
    out = np.zeros(x.shape)
    for r in range(m):
        out = out + w[..., r, None] * gathered[..., r, :]

    def _bw(g):
        return (np.swapaxes(Wb, -1, -2) @ g,)

    return custom_op(out, (x,), _bw, "aggregate")


class GcnStreamParams:
    """GCN layer weights, its batch-norm, and the residual MLP of one stream."""

    def __init__(self, d: int, rng: np.random.Generator, mlp_ratio: int = 4,
                 prefix: str = "gcn") -> None:
        bound = 1.0 / np.sqrt(d)
        hidden = mlp_ratio * d
        self.d = d
        self.norm1_gamma = Param(np.ones(d), f"{prefix}.norm1.gamma")
        self.norm1_beta = Param(np.zeros(d), f"{prefix}.norm1.beta")
        self.w1 = Param(rng.uniform(-bound, bound, (d, d)), f"{prefix}.W_1")
        self.w2 = Param(rng.uniform(-bound, bound, (d, d)), f"{prefix}.W_2")
        self.bn_gamma = Param(np.ones(d), f"{prefix}.bn.gamma")
        self.bn_beta = Param(np.zeros(d), f"{prefix}.bn.beta")
        self.bn_state = NormState(d)
        self.norm2_gamma = Param(np.ones(d), f"{prefix}.norm2.gamma")
        self.norm2_beta = Param(np.zeros(d), f"{prefix}.norm2.beta")
        self.mlp_w1 = Param(rng.uniform(-bound, bound, (d, hidden)), f"{prefix}.mlp.W_1")
        self.mlp_b1 = Param(np.zeros(hidden), f"{prefix}.mlp.b_1")
        hb = 1.0 / np.sqrt(hidden)
        self.mlp_w2 = Param(rng.uniform(-hb, hb, (hidden, d)), f"{prefix}.mlp.W_2")
        self.mlp_b2 = Param(np.zeros(d), f"{prefix}.mlp.b_2")

    def params(self) -> list[Param]:
        return [self.norm1_gamma, self.norm1_beta, self.w1, self.w2, self.bn_gamma,
                self.bn_beta, self.norm2_gamma, self.norm2_beta, self.mlp_w1, self.mlp_b1,
                self.mlp_w2, self.mlp_b2]


def gcn_layer(x, norm_adj: np.ndarray, p: GcnStreamParams) -> Tensor:
    """``relu(x + BN(A_hat x W_1 + x W_2))`` over ``x`` of shape ``(B, L, d)``."""
    x = as_tensor(x)
    if x.shape[-1] != p.d:
        raise GraphError(f"GCN expects {p.d} channels, got input {x.shape}")
    mixed = linear(aggregate(norm_adj, x), p.w1) + linear(x, p.w2)
    return relu(x + batch_norm(mixed, p.bn_gamma, p.bn_beta, p.bn_state))


AdjacencyProvider = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


def temporal_provider(k: int, causal: bool, cosine: bool = False) -> Callable[[np.ndarray], np.ndarray]:
    """Per-sample, per-joint K-NN graph built from the stream input features."""

    def provide(x: np.ndarray) -> np.ndarray:
        return normalize_adjacency(knn_adjacency(temporal_similarity(x, cosine), k, causal))

    return provide


def gcn_stream(X, adjacency: AdjacencyProvider, p: GcnStreamParams) -> Tensor:
    """Two residual stages: ``X' = X + GCN(LN(X))`` then ``X' + MLP(LN(X'))``."""
    X = as_tensor(X)
    norm_adj = adjacency(X.data) if callable(adjacency) else adjacency
    h = X + gcn_layer(layer_norm(X, p.norm1_gamma, p.norm1_beta), norm_adj, p)
    z = layer_norm(h, p.norm2_gamma, p.norm2_beta)
    z = linear(gelu(linear(z, p.mlp_w1, p.mlp_b1)), p.mlp_w2, p.mlp_b2)
    return h + z
