"""Training loss and pose-error metrics.

All metrics take ``(..., T, J, 3)`` arrays; leading axes are pooled.  The
frame interval is the unit time step, so velocity errors are in mm/frame and
acceleration errors in mm/frame^2.
"""

from __future__ import annotations

import numpy as np

from ..numerics import Tensor, as_tensor, l2norm

PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = np.arange(0.0, 151.0, 5.0)


def _check(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    if pred.ndim < 3 or pred.shape[-1] != 3:
        raise ValueError(f"expected (..., T, J, 3) arrays, got {pred.shape}")
    return pred, gt


def pose_loss(pred, gt, lambda_v: float = 20.0) -> Tensor:
    """Summed per-joint L2 position error plus ``lambda_v`` times the same on frame differences.

    ``pred`` may be a tensor on the tape; ``gt`` is treated as a constant.
    With a single frame the velocity term vanishes.
    """
    if lambda_v < 0:
        raise ValueError("lambda_v must be non-negative")
    pred = as_tensor(pred)
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    diff = pred - gt
    loss = l2norm(diff, axis=-1).sum()
    T = pred.shape[-3]
    if T > 1 and lambda_v > 0:
        hi = [slice(None)] * pred.ndim
        lo = [slice(None)] * pred.ndim
        hi[-3], lo[-3] = slice(1, None), slice(None, -1)
        vel = diff[tuple(hi)] - diff[tuple(lo)]
        loss = loss + lambda_v * l2norm(vel, axis=-1).sum()
    return loss


def joint_errors(pred, gt) -> np.ndarray:
    pred, gt = _check(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred, gt) -> float:
    """Mean per-joint position error."""
    return float(joint_errors(pred, gt).mean())


def mpjve(pred, gt) -> float:
    """MPJPE of first temporal differences."""
    pred, gt = _check(pred, gt)
    if pred.shape[-3] < 2:
        raise ValueError("mpjve needs at least 2 frames")
    return mpjpe(np.diff(pred, axis=-3), np.diff(gt, axis=-3))


def acc_err(pred, gt) -> float:
    """MPJPE of second temporal differences."""
    pred, gt = _check(pred, gt)
    if pred.shape[-3] < 3:
        raise ValueError("acc_err needs at least 3 frames")
    return mpjpe(np.diff(pred, n=2, axis=-3), np.diff(gt, n=2, axis=-3))


def pck(pred, gt, threshold_mm: float = PCK_THRESHOLD_MM) -> float:
    """Percentage of joints whose error is below ``threshold_mm``."""
    return float((joint_errors(pred, gt) < threshold_mm).mean() * 100.0)


def auc(pred, gt) -> float:
    """Mean PCK over thresholds 0, 5, ..., 150 mm, in percent."""
    err = joint_errors(pred, gt)
    return float(np.mean([(err < t).mean() for t in AUC_THRESHOLDS_MM]) * 100.0)


def all_metrics(pred, gt) -> dict[str, float]:
    out = {"mpjpe": mpjpe(pred, gt)}
    T = np.shape(pred)[-3]
    out["mpjve"] = mpjve(pred, gt) if T >= 2 else 0.0
    out["acc_err"] = acc_err(pred, gt) if T >= 3 else 0.0
    out["pck"] = pck(pred, gt)
    out["auc"] = auc(pred, gt)
    return out
