"""Mini-batch training loop."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..numerics import backward
from .augment import flip_augment
from .metrics import acc_err, mpjpe, mpjve, pose_loss
from .optim import AdamW, OptConfig


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 90
    batch_size: int = 8
    seed: int = 0
    window: Optional[int] = None
    flip: bool = False
    max_steps: Optional[int] = None
    target_mpjpe: Optional[float] = None
    log_path: Optional[str] = None
    opt: OptConfig = field(default_factory=OptConfig)

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class TrainResult:
    model: object
    log: list[dict]
    step_losses: list[float]
    steps: int
    stopped_early: bool = False


def _crop(pairs, window: Optional[int], rng: np.random.Generator):
    if window is None:
        return pairs
    out = []
    for x2, x3 in pairs:
        T = x2.shape[0]
        if T < window:
            raise ValueError(f"sequence of {T} frames is shorter than window {window}")
        s = int(rng.integers(0, T - window + 1))
        out.append((x2[s:s + window], x3[s:s + window]))
    return out


def _stack(pairs) -> tuple[np.ndarray, np.ndarray]:
    lengths = {p[0].shape[0] for p in pairs}
    if len(lengths) != 1:
        raise ValueError(f"sequences in a batch differ in length {sorted(lengths)}; set a window")
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def evaluate(model, dataset: Sequence[tuple[np.ndarray, np.ndarray]]) -> dict[str, float]:
    """Eval-mode metrics pooled over every frame of every sequence."""
    was_training = model.training
    model.eval()
    try:
        preds = [model.predict(x2) for x2, _ in dataset]
    finally:
        model.train(was_training)
    errs = [np.linalg.norm(p - g, axis=-1).ravel() for p, (_, g) in zip(preds, dataset)]
    out = {"mpjpe": float(np.concatenate(errs).mean())}
    if all(g.shape[0] >= 2 for _, g in dataset):
        out["mpjve"] = float(np.mean([mpjve(p, g) for p, (_, g) in zip(preds, dataset)]))
    if all(g.shape[0] >= 3 for _, g in dataset):
        out["acc_err"] = float(np.mean([acc_err(p, g) for p, (_, g) in zip(preds, dataset)]))
    return out


def train(model, dataset: Sequence[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig) -> TrainResult:
    """Fit ``model`` in place on ``(seq2d, seq3d)`` pairs.

    Batches are drawn in a seeded shuffled order each epoch and the learning
    rate decays once per epoch.  With ``target_mpjpe`` set, training stops as
    soon as the eval-mode training-set MPJPE drops below it.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.params(), cfg.opt)
    skeleton = model.skeleton
    lam = model.config.lambda_v
    log: list[dict] = []
    step_losses: list[float] = []
    log_file = Path(cfg.log_path) if cfg.log_path else None
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        log_file.write_text("")
    model.train()
    steps = 0
    stopped = False
    n_batches = math.ceil(len(dataset) / cfg.batch_size)

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        lr = opt.lr
        epoch_loss, frames = 0.0, 0
        preds, gts = [], []
        for b in range(n_batches):
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
            pairs = [dataset[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            pairs = _crop(pairs, cfg.window, rng)
            if cfg.flip:
                pairs = [flip_augment(x2, x3, skeleton) if rng.random() < 0.5 else (x2, x3)
                         for x2, x3 in pairs]
            x2, x3 = _stack(pairs)
            opt.zero_grad()
            out = model.forward(x2)
            loss = pose_loss(out, x3, lam)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, step {steps} (lr {lr:.3g})")
            backward(loss)
            opt.step()
            steps += 1
            step_losses.append(value)
            epoch_loss += value
            frames += x3.shape[0] * x3.shape[1]
            preds.append(out.data)
            gts.append(x3)
        if not preds:
            break
        entry = {"epoch": epoch, "lr": lr, "train_loss": epoch_loss / frames,
                 "mpjpe": float(np.mean([mpjpe(p, g) for p, g in zip(preds, gts)]))}
        T = gts[0].shape[1]
        entry["mpjve"] = float(np.mean([mpjve(p, g) for p, g in zip(preds, gts)])) if T >= 2 else None
        entry["acc_err"] = float(np.mean([acc_err(p, g) for p, g in zip(preds, gts)])) if T >= 3 else None
        log.append(entry)
        if log_file is not None:
            with log_file.open("a") as fh:
                fh.write(json.dumps(entry) + "\n")
        opt.end_epoch()
        if cfg.target_mpjpe is not None and entry["mpjpe"] < cfg.target_mpjpe:
            if evaluate(model, dataset)["mpjpe"] < cfg.target_mpjpe:
                stopped = True
                break
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break
    model.train()
    return TrainResult(model, log, step_losses, steps, stopped)
