"""Synthetic 2D/3D pose sequences: a rest skeleton whose joints circle in the x-z plane.

Joint ``j`` of a sequence moves as ``rest_j + a_j (cos(w_j t + phi_j), 0, sin(w_j t + phi_j))``
with ``a_j <= amplitude`` and ``w_j <= 2 pi frequency``.  The rotation sense is
fixed, so depth is recoverable from the phase of the x motion.  The speed of
every joint is at most ``amplitude * 2 pi frequency``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..graph import Skeleton, default_skeleton


@dataclass
class SynthConfig:
    seed: int = 0
    T: int = 27
    sequences: int = 4
    amplitude: float = 60.0
    frequency: float = 0.04
    noise_sigma: float = 0.0
    ortho_scale: float = 1e-3
    skeleton: Optional[Skeleton] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.T < 1 or self.sequences < 0:
            raise ValueError("T must be >= 1 and sequences >= 0")
        if self.amplitude < 0 or self.frequency < 0 or self.noise_sigma < 0:
            raise ValueError("amplitude, frequency and noise_sigma must be non-negative")
        if self.ortho_scale <= 0:
            raise ValueError("ortho_scale must be positive")

    @property
    def max_speed(self) -> float:
        return self.amplitude * 2.0 * np.pi * self.frequency


def project(seq3d: np.ndarray, scale: float) -> np.ndarray:
    """Orthographic camera looking down -z: keep scaled x and y."""
    return np.asarray(seq3d)[..., :2] * scale


def synth_sequence(rng: np.random.Generator, cfg: SynthConfig, skeleton: Skeleton) -> tuple[np.ndarray, np.ndarray]:
    if skeleton.rest_pose is None:
        raise ValueError("skeleton has no rest_pose to animate")
    J = skeleton.joint_count
    amp = cfg.amplitude * rng.uniform(0.5, 1.0, J)
    omega = 2.0 * np.pi * cfg.frequency * rng.uniform(0.5, 1.0, J)
    phase = rng.uniform(0.0, 2.0 * np.pi, J)
    theta = np.arange(cfg.T)[:, None] * omega + phase
    offset = np.stack([amp * np.cos(theta), np.zeros_like(theta), amp * np.sin(theta)], axis=-1)
    seq3d = skeleton.rest_pose[None] + offset

    noise = rng.normal(0.0, cfg.noise_sigma, (cfg.T, J, 2)) if cfg.noise_sigma > 0 else np.zeros((cfg.T, J, 2))
    xy = project(seq3d, cfg.ortho_scale) + noise
    if cfg.noise_sigma > 0:
        conf = np.clip(np.exp(-np.linalg.norm(noise, axis=-1) / cfg.noise_sigma), 0.0, 1.0)
    else:
        conf = np.ones((cfg.T, J))
    return np.concatenate([xy, conf[..., None]], axis=-1), seq3d


def synth_dataset(cfg: SynthConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """``cfg.sequences`` pairs of ``(T, J, 3)`` arrays: (x, y, confidence) and (x, y, z) in mm."""
    skeleton = cfg.skeleton or default_skeleton()
    rng = np.random.default_rng(cfg.seed)
    return [synth_sequence(rng, cfg, skeleton) for _ in range(cfg.sequences)]


def bbox_diagonal(skeleton: Skeleton, margin: float = 0.0) -> float:
    """Diagonal of the rest pose's axis-aligned box, grown by ``margin`` on every side."""
    pts = skeleton.rest_pose
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0) + 2 * margin))
