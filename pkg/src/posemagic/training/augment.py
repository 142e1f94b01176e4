"""Horizontal flip: negate x and swap left/right joints."""

from __future__ import annotations

import numpy as np

from ..graph import GraphError, Skeleton


def flip_pose(seq: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Mirror ``(..., J, C)`` poses; channel 0 is x.  Flipping twice is the identity."""
    if not skeleton.left_right_pairs:
        raise GraphError("skeleton has no left/right pairs; cannot flip")
    seq = np.asarray(seq, dtype=np.float64)
    if seq.shape[-2] != skeleton.joint_count:
        raise GraphError(f"pose has {seq.shape[-2]} joints, skeleton {skeleton.joint_count}")
    out = seq[..., skeleton.mirror_permutation(), :].copy()
    out[..., 0] = -out[..., 0]
    return out


def flip_augment(seq2d: np.ndarray, seq3d: np.ndarray, skeleton: Skeleton) -> tuple[np.ndarray, np.ndarray]:
    return flip_pose(seq2d, skeleton), flip_pose(seq3d, skeleton)


def flip_test(model, seq2d: np.ndarray, skeleton: Skeleton | None = None) -> np.ndarray:
    """Average of ``model(x)`` and the unflipped prediction on ``flip(x)``."""
    skeleton = skeleton or model.skeleton
    plain = model.predict(seq2d)
    mirrored = flip_pose(model.predict(flip_pose(seq2d, skeleton)), skeleton)
    return 0.5 * (plain + mirrored)
