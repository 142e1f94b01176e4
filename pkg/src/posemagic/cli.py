"""``pose-magic`` command line.

Every command prints JSON on stdout (``--pretty`` switches to a readable
layout).  Exit status: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
REFERENCE_PARAM_COUNT = 14.42e6
THREADS_ENV = "POSE_MAGIC_THREADS"


class UsageError(Exception):
    pass


def _emit(obj, pretty: bool, out=None) -> None:
    out = out or sys.stdout
    if pretty:
        if isinstance(obj, dict):
            width = max((len(k) for k in obj), default=0)
            for k, v in obj.items():
                val = f"{v:.6g}" if isinstance(v, float) else json.dumps(v)
                out.write(f"{k:<{width}}  {val}\n")
            return
    out.write(json.dumps(obj, indent=2 if pretty else None) + "\n")


def _existing(path: Optional[str], what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} path does not exist: {p}")
    return p


def _load_model_config(args):
    from .dataio import load_config
    from .model import tiny_config

    cfg = load_config(_existing(args.config, "config")) if args.config else tiny_config()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


# -- commands --------------------------------------------------------------

def cmd_synth(args) -> int:
    from .dataio import save_pose_pairs
    from .training import SynthConfig, synth_dataset

    if args.out is None:
        raise UsageError("--out directory is required")
    cfg = SynthConfig(seed=args.seed or 0, T=args.frames, sequences=args.sequences,
                      amplitude=args.amplitude, frequency=args.frequency, noise_sigma=args.noise)
    pairs = synth_dataset(cfg)
    save_pose_pairs(args.out, pairs)
    _emit({"out": str(args.out), "sequences": len(pairs), "frames": cfg.T}, args.pretty)
    return EXIT_OK


def cmd_train(args) -> int:
    from .dataio import load_pose_pairs, save_checkpoint
    from .model import PoseMagicModel
    from .training import OptConfig, TrainConfig, train

    data = _existing(args.data, "data")
    if args.out is None:
        raise UsageError("--out checkpoint path is required")
    cfg = _load_model_config(args)
    model = PoseMagicModel(cfg)
    pairs = load_pose_pairs(data, model.skeleton)
    if not pairs:
        raise UsageError(f"no sequences in {data}")
    window = args.window
    if window is None and min(p[0].shape[0] for p in pairs) >= cfg.T_train:
        window = cfg.T_train
    log_path = args.log or f"{args.out}.log.jsonl"
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=cfg.seed, window=window,
                       flip=args.flip, max_steps=args.max_steps, log_path=log_path,
                       opt=OptConfig(lr=args.lr, weight_decay=args.weight_decay))
    result = train(model, pairs, tcfg)
    model.eval()
    save_checkpoint(model, args.out, extra={"steps": result.steps})
    losses = result.step_losses
    _emit({"checkpoint": str(args.out), "log": log_path, "steps": result.steps,
           "initial_loss": losses[0] if losses else None,
           "final_loss": losses[-1] if losses else None,
           "final_mpjpe": result.log[-1]["mpjpe"] if result.log else None}, args.pretty)
    return EXIT_OK


def _predict(model, seq2d: np.ndarray, flip: bool) -> np.ndarray:
    from .training import flip_test

    return flip_test(model, seq2d) if flip else model.predict(seq2d)


def cmd_eval(args) -> int:
    from .dataio import load_checkpoint, load_pose_pairs
    from .training import all_metrics

    model = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    pairs = load_pose_pairs(_existing(args.data, "data"), model.skeleton)
    if not pairs:
        raise UsageError(f"no sequences in {args.data}")
    preds = [_predict(model, x2, args.flip) for x2, _ in pairs]
    pred = np.concatenate(preds, axis=0)
    gt = np.concatenate([g for _, g in pairs], axis=0)
    # Temporal metrics must not difference across sequence boundaries.
    per_seq = [all_metrics(p, g) for p, (_, g) in zip(preds, pairs)]
    frames = np.array([g.shape[0] for _, g in pairs], float)
    base = all_metrics(pred[None], gt[None])
    for key in ("mpjve", "acc_err"):
        base[key] = float(np.average([m[key] for m in per_seq], weights=frames))
    _emit({k: base[k] for k in ("mpjpe", "mpjve", "acc_err", "pck", "auc")}, args.pretty)
    return EXIT_OK


def cmd_infer(args) -> int:
    from .dataio import PoseSequence, format_pose_record, load_checkpoint, load_poses

    model = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    data = _existing(args.data, "data")
    if data.is_dir():
        data = data / "poses2d.jsonl"
    seqs = load_poses(data, "2d", model.skeleton)
    lines = [format_pose_record(s.id, _predict(model, s.frames, args.flip), s.fps) for s in seqs]
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_frame(line: str, J: int) -> np.ndarray:
    obj = json.loads(line)
    if isinstance(obj, dict):
        obj = obj.get("frame", obj.get("pose"))
    arr = np.asarray(obj, dtype=np.float64)
    if arr.shape != (J, 3):
        raise ValueError(f"frame must be {J} x 3, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("frame contains NaN or Inf")
    arr[:, 2] = np.clip(arr[:, 2], 0.0, 1.0)
    return arr


def stream_frames(model, lines, window: int, out, err):
    """Emit one 3D frame per valid input frame, computed from the trailing window only."""
    J = model.config.J
    buf: list[np.ndarray] = []
    t = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            frame = _parse_frame(line, J)
        except (ValueError, TypeError) as exc:
            err.write(f"line {lineno}: skipped malformed frame ({exc})\n")
            err.flush()
            continue
        buf.append(frame)
        if len(buf) > window:
            buf.pop(0)
        pose = model.predict(np.stack(buf))[-1]
        out.write(json.dumps({"t": t, "pose": pose.tolist()}) + "\n")
        out.flush()
        t += 1
    return t


def cmd_stream(args) -> int:
    from .dataio import load_checkpoint

    model = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    if not model.config.causal:
        raise UsageError("stream needs a causal checkpoint: a bidirectional model reads future "
                         "frames, so its output for frame t is not available at time t")
    window = args.window or model.config.T_train
    if window < 1:
        raise UsageError("--window must be >= 1")
    stream_frames(model, sys.stdin, window, sys.stdout, sys.stderr)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import GRAD_CHECK_EPS, full_model_grad_check

    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    eps = args.eps or GRAD_CHECK_EPS
    if not 1e-7 <= eps <= 1e-4:
        raise UsageError(f"--eps must lie in [1e-7, 1e-4], got {eps}")
    worst, per_param, count = full_model_grad_check(args.seed or 0, eps=eps, frames=args.frames,
                                                    N=args.blocks, d=args.width)
    ok = worst < 1e-5
    top = sorted(per_param.items(), key=lambda kv: -kv[1])[:3]
    _emit({"max_rel_error": worst, "threshold": 1e-5, "passed": ok, "params": count,
           "eps": eps, "worst_params": dict(top)}, args.pretty)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_bench(args) -> int:
    from .bench import DEFAULT_LENGTHS, bench_scan

    lengths = args.lengths or list(DEFAULT_LENGTHS)
    _emit(bench_scan(lengths, impl=args.impl), args.pretty)
    return EXIT_OK


def cmd_params(args) -> int:
    from .model import count_params, reference_config

    if args.reference_config:
        cfg = reference_config(args.direction)
    else:
        cfg = _load_model_config(args)
    count = count_params(cfg)
    _emit({"count": count, "reference": REFERENCE_PARAM_COUNT, "ratio": count / REFERENCE_PARAM_COUNT,
           "direction": cfg.direction}, args.pretty)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
    common.add_argument("--pretty", action="store_true", help="human-readable output")

    parser = argparse.ArgumentParser(prog="pose-magic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic JSON-lines dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sequences", type=int, default=4)
    p.add_argument("--frames", type=int, default=27)
    p.add_argument("--amplitude", type=float, default=60.0)
    p.add_argument("--frequency", type=float, default=0.04)
    p.add_argument("--noise", type=float, default=0.0, help="2D noise sigma")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.add_argument("--config", help="model config JSON (default: tiny config)")
    p.add_argument("--data", help="directory with poses2d.jsonl and poses3d.jsonl")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log", help="per-epoch JSON-lines log (default: <out>.log.jsonl)")
    p.add_argument("--epochs", type=int, default=90)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=8e-4)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--window", type=int, default=None, help="training crop length")
    p.add_argument("--flip", action="store_true", help="random horizontal flip augmentation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="print metrics of a checkpoint on a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--flip", action="store_true", help="test-time flip averaging")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="lift 2D sequences to 3D")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="2D JSON-lines file or dataset directory")
    p.add_argument("--out", help="output JSON-lines file (default: stdout)")
    p.add_argument("--flip", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("stream", parents=[common], help="causal frame-by-frame lifting on stdin")
    p.add_argument("--checkpoint")
    p.add_argument("--window", type=int, default=None, help="sliding window (default: T_train)")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--frames", type=int, default=6)
    p.add_argument("--blocks", type=int, default=2, help="Magic Blocks N")
    p.add_argument("--width", type=int, default=8, help="channel width d")
    p.add_argument("--eps", type=float, default=None, help="finite-difference step")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", parents=[common], help="scan runtime versus sequence length")
    p.add_argument("--impl", choices=("sequential", "parallel"), default="sequential")
    p.add_argument("--lengths", type=int, nargs="+", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("params", parents=[common], help="parameter count")
    p.add_argument("--config")
    p.add_argument("--reference-config", action="store_true", help="N=26, d=128, d'=512, n=16")
    p.add_argument("--direction", choices=("bidirectional", "causal"), default="bidirectional")
    p.set_defaults(func=cmd_params)
    return parser


def _apply_thread_cap() -> None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    threadpool_limits(limits=n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    from .dataio import CheckpointError, DataError
    from .graph import GraphError
    from .ssm import ConfigError

    try:
        _apply_thread_cap()
        return args.func(args)
    except UsageError as exc:
        print(f"pose-magic {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DataError, CheckpointError, GraphError, ValueError, OSError, RuntimeError) as exc:
        print(f"pose-magic {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
