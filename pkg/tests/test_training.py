import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posemagic.graph import GraphError, Skeleton, default_skeleton
from posemagic.model import ModelConfig, PoseMagicModel
from posemagic.numerics import Param, backward, grad_check
from posemagic.training import (
    AUC_THRESHOLDS_MM,
    AdamW,
    OptConfig,
    SynthConfig,
    TrainConfig,
    TrainingDiverged,
    acc_err,
    all_metrics,
    auc,
    bbox_diagonal,
    evaluate,
    flip_pose,
    flip_test,
    lr_at_epoch,
    mpjpe,
    mpjve,
    pck,
    pose_loss,
    synth_dataset,
    train,
)


# -- brute-force oracles -------------------------------------------------------

def loop_mpjpe(pred, gt):
    total, count = 0.0, 0
    for t in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            dx = [pred[t, j, c] - gt[t, j, c] for c in range(3)]
            total += (dx[0] ** 2 + dx[1] ** 2 + dx[2] ** 2) ** 0.5
            count += 1
    return total / count


def loop_diff(seq):
    return np.array([[[seq[t + 1, j, c] - seq[t, j, c] for c in range(3)]
                      for j in range(seq.shape[1])] for t in range(seq.shape[0] - 1)])


def loop_pck(pred, gt, thr):
    hits = 0
    for t in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            hits += float(np.sqrt(sum((pred[t, j, c] - gt[t, j, c]) ** 2 for c in range(3)))) < thr
    return 100.0 * hits / (pred.shape[0] * pred.shape[1])


def loop_loss(pred, gt, lam):
    pos = sum(np.sqrt(sum((pred[t, j, c] - gt[t, j, c]) ** 2 for c in range(3)))
              for t in range(pred.shape[0]) for j in range(pred.shape[1]))
    vel = 0.0
    for t in range(1, pred.shape[0]):
        for j in range(pred.shape[1]):
            d = [(pred[t, j, c] - gt[t, j, c]) - (pred[t - 1, j, c] - gt[t - 1, j, c]) for c in range(3)]
            vel += np.sqrt(sum(v * v for v in d))
    return pos + lam * vel


class TestMetrics:
    def test_three_four_five(self):
        gt = np.zeros((4, 2, 3))
        pred = gt.copy()
        pred[..., 0], pred[..., 1] = 3.0, 4.0
        assert mpjpe(pred, gt) == pytest.approx(5.0, abs=1e-12)

    def test_constant_drift_has_no_velocity_error(self):
        gt = np.random.default_rng(0).normal(size=(6, 3, 3))
        pred = gt + np.array([10.0, -2.0, 7.0])
        assert mpjpe(pred, gt) == pytest.approx(np.sqrt(153.0), abs=1e-12)
        assert mpjve(pred, gt) == pytest.approx(0.0, abs=1e-12)
        assert acc_err(pred, gt) == pytest.approx(0.0, abs=1e-12)

    def test_linear_drift_has_velocity_but_no_acceleration_error(self):
        gt = np.zeros((5, 1, 3))
        pred = np.zeros((5, 1, 3))
        pred[:, 0, 2] = 2.0 * np.arange(5)
        assert mpjve(pred, gt) == pytest.approx(2.0, abs=1e-12)
        assert acc_err(pred, gt) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_against_loops(self, seed):
        rng = np.random.default_rng(seed)
        T, J = int(rng.integers(3, 9)), int(rng.integers(1, 6))
        gt = rng.normal(0, 100, (T, J, 3))
        pred = gt + rng.normal(0, 80, (T, J, 3))
        assert mpjpe(pred, gt) == pytest.approx(loop_mpjpe(pred, gt), abs=1e-9)
        assert mpjve(pred, gt) == pytest.approx(loop_mpjpe(loop_diff(pred), loop_diff(gt)), abs=1e-9)
        acc_oracle = loop_mpjpe(loop_diff(loop_diff(pred)), loop_diff(loop_diff(gt)))
        assert acc_err(pred, gt) == pytest.approx(acc_oracle, abs=1e-9)
        assert pck(pred, gt) == pytest.approx(loop_pck(pred, gt, 150.0), abs=1e-9)
        aucs = [loop_pck(pred, gt, thr) for thr in range(0, 151, 5)]
        assert auc(pred, gt) == pytest.approx(np.mean(aucs), abs=1e-9)

    def test_auc_thresholds(self):
        assert len(AUC_THRESHOLDS_MM) == 31
        assert AUC_THRESHOLDS_MM[0] == 0 and AUC_THRESHOLDS_MM[-1] == 150

    def test_perfect_prediction(self):
        gt = np.random.default_rng(1).normal(size=(4, 2, 3))
        m = all_metrics(gt, gt)
        assert m["mpjpe"] == 0 and m["mpjve"] == 0 and m["acc_err"] == 0
        assert m["pck"] == 100.0
        # the 0 mm threshold never counts (strict inequality)
        assert m["auc"] == pytest.approx(100.0 * 30 / 31)

    def test_short_sequences(self):
        x = np.zeros((1, 2, 3))
        with pytest.raises(ValueError, match="2 frames"):
            mpjve(x, x)
        with pytest.raises(ValueError, match="3 frames"):
            acc_err(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)))
        m = all_metrics(x, x)
        assert m["mpjve"] == 0.0 and m["acc_err"] == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            mpjpe(np.zeros((2, 3, 3)), np.zeros((2, 4, 3)))
        with pytest.raises(ValueError):
            mpjpe(np.zeros((2, 3, 2)), np.zeros((2, 3, 2)))

    def test_batch_axes_pool(self):
        rng = np.random.default_rng(2)
        gt, pred = rng.normal(size=(2, 5, 3, 3)), rng.normal(size=(2, 5, 3, 3))
        expected = np.mean([loop_mpjpe(pred[b], gt[b]) for b in range(2)])
        assert mpjpe(pred, gt) == pytest.approx(expected, abs=1e-12)


class TestLoss:
    @pytest.mark.parametrize("lam", [0.0, 1.0, 20.0])
    def test_against_loop(self, rng, lam):
        gt = rng.normal(size=(5, 3, 3))
        pred = rng.normal(size=(5, 3, 3))
        assert float(pose_loss(pred, gt, lam).data) == pytest.approx(loop_loss(pred, gt, lam), rel=1e-12)

    def test_single_frame_has_no_velocity_term(self, rng):
        gt, pred = rng.normal(size=(1, 4, 3)), rng.normal(size=(1, 4, 3))
        assert float(pose_loss(pred, gt, 20.0).data) == pytest.approx(loop_loss(pred, gt, 0.0))

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            pose_loss(np.zeros((2, 1, 3)), np.zeros((2, 1, 3)), -1.0)

    def test_gradient(self, rng):
        pred = Param(rng.normal(size=(4, 3, 3)), "pred")
        gt = rng.normal(size=(4, 3, 3))
        assert grad_check(lambda: pose_loss(pred, gt, 20.0), [pred]) < 1e-6

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-1e3, 1e3))
    def test_nonnegative_and_translation_invariant(self, seed, shift):
        rng = np.random.default_rng(seed)
        gt, pred = rng.normal(0, 50, (4, 2, 3)), rng.normal(0, 50, (4, 2, 3))
        a = float(pose_loss(pred, gt).data)
        b = float(pose_loss(pred + shift, gt + shift).data)
        assert a >= 0
        assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


class TestSynth:
    def test_deterministic(self):
        a = synth_dataset(SynthConfig(seed=3, sequences=2, noise_sigma=0.01))
        b = synth_dataset(SynthConfig(seed=3, sequences=2, noise_sigma=0.01))
        for (x2a, x3a), (x2b, x3b) in zip(a, b):
            np.testing.assert_array_equal(x2a, x2b)
            np.testing.assert_array_equal(x3a, x3b)

    def test_shapes_and_noise_free_projection(self):
        cfg = SynthConfig(seed=1, sequences=3, T=10)
        data = synth_dataset(cfg)
        assert len(data) == 3
        for x2, x3 in data:
            assert x2.shape == (10, 17, 3) and x3.shape == (10, 17, 3)
            np.testing.assert_allclose(x2[..., :2], x3[..., :2] * cfg.ortho_scale, atol=1e-15)
            np.testing.assert_array_equal(x2[..., 2], 1.0)

    def test_velocity_bound(self):
        cfg = SynthConfig(seed=2, sequences=4, T=40, amplitude=80, frequency=0.05)
        for _, x3 in synth_dataset(cfg):
            speed = np.linalg.norm(np.diff(x3, axis=0), axis=-1)
            # chord is never longer than arc
            assert speed.max() <= cfg.max_speed + 1e-9

    def test_noisy_confidence_in_unit_interval(self):
        x2, _ = synth_dataset(SynthConfig(seed=4, sequences=1, noise_sigma=0.02))[0]
        assert np.all((x2[..., 2] >= 0) & (x2[..., 2] <= 1))
        assert x2[..., 2].min() < 1

    def test_bbox_diagonal(self, skeleton5):
        # box spans 200 x 400 x 50
        assert bbox_diagonal(skeleton5) == pytest.approx(np.sqrt(200**2 + 400**2 + 50**2))
        assert bbox_diagonal(default_skeleton()) > 1000

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SynthConfig(T=0)
        with pytest.raises(ValueError):
            SynthConfig(noise_sigma=-1)


class TestFlip:
    def test_involution(self, rng):
        sk = default_skeleton()
        seq = rng.normal(size=(4, 17, 3))
        np.testing.assert_array_equal(flip_pose(flip_pose(seq, sk), sk), seq)

    def test_symmetric_rest_pose_is_fixed(self, skeleton5):
        np.testing.assert_array_equal(flip_pose(skeleton5.rest_pose, skeleton5), skeleton5.rest_pose)

    def test_channels(self, skeleton5):
        seq = np.arange(15, dtype=float).reshape(5, 3)
        out = flip_pose(seq, skeleton5)
        np.testing.assert_array_equal(out[1], [-seq[2, 0], seq[2, 1], seq[2, 2]])
        np.testing.assert_array_equal(out[0], [-0.0, 1.0, 2.0])

    def test_errors(self, skeleton5):
        no_pairs = Skeleton(2, [(0, 1)], [], 0, [], None)
        with pytest.raises(GraphError, match="pairs"):
            flip_pose(np.zeros((2, 3)), no_pairs)
        with pytest.raises(GraphError, match="joints"):
            flip_pose(np.zeros((4, 3)), skeleton5)

    def test_flip_test_on_equivariant_model(self, skeleton5, rng):
        class Mirror:
            skeleton = skeleton5

            def predict(self, x):
                # x-odd and y/z-even per joint, with left/right sharing weights
                return np.stack([3.0 * x[..., 0], x[..., 1] ** 2, x[..., 1] + x[..., 2]], axis=-1)

        x = rng.normal(size=(6, 5, 3))
        np.testing.assert_allclose(flip_test(Mirror(), x), Mirror().predict(x), atol=1e-14)

    def test_flip_test_averages(self, skeleton5, rng):
        class Lopsided:
            skeleton = skeleton5

            def predict(self, x):
                return x + np.arange(5.0)[:, None]

        x = rng.normal(size=(3, 5, 3))
        m = Lopsided()
        expected = 0.5 * (m.predict(x) + flip_pose(m.predict(flip_pose(x, skeleton5)), skeleton5))
        np.testing.assert_allclose(flip_test(m, x), expected, atol=1e-14)


class TestOptimizer:
    def test_schedule(self):
        cfg = OptConfig(lr=1e-3, lr_decay=0.5)
        assert lr_at_epoch(cfg, 0) == 1e-3
        assert lr_at_epoch(cfg, 3) == pytest.approx(1.25e-4)

    def test_single_step_matches_formula(self):
        p = Param(np.array([1.0, -2.0]), "p")
        p.grad[...] = [0.5, -4.0]
        cfg = OptConfig(lr=0.1, weight_decay=0.01)
        AdamW([p], cfg).step()
        # first bias-corrected step is sign(g) up to eps
        expected = np.array([1.0, -2.0]) - 0.1 * (np.sign([0.5, -4.0]) + 0.01 * np.array([1.0, -2.0]))
        np.testing.assert_allclose(p.data, expected, rtol=1e-7)

    def test_epoch_decay(self):
        opt = AdamW([Param(np.zeros(1), "p")], OptConfig(lr=1.0, lr_decay=0.9))
        opt.end_epoch()
        opt.end_epoch()
        assert opt.lr == pytest.approx(0.81)

    def test_duplicate_names(self):
        with pytest.raises(ValueError, match="unique"):
            AdamW([Param(np.zeros(1), "a"), Param(np.zeros(1), "a")])

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            OptConfig(lr_decay=0.0)
        with pytest.raises(ValueError):
            OptConfig(betas=(1.0, 0.9))

    def test_minimizes_quadratic(self):
        p = Param(np.array([3.0, -5.0]), "p")
        opt = AdamW([p], OptConfig(lr=0.1, lr_decay=1.0, weight_decay=0.0))
        for _ in range(300):
            opt.zero_grad()
            backward((p * p).sum())
            opt.step()
        np.testing.assert_allclose(p.data, 0.0, atol=0.05)


def tiny_model(direction="bidirectional", seed=0):
    return PoseMagicModel(ModelConfig(N=1, d=8, d_prime=16, J=17, n=2, direction=direction,
                                      T_train=9, output_scale=100.0, seed=seed))


@pytest.fixture(scope="module")
def data():
    return synth_dataset(SynthConfig(seed=0, sequences=4, T=9))


class TestTrainLoop:
    def test_zero_lr_and_decay_leave_params_identical(self, data):
        model = tiny_model()
        before = {p.name: p.data.copy() for p in model.params()}
        cfg = TrainConfig(epochs=2, batch_size=2, opt=OptConfig(lr=0.0, weight_decay=0.0))
        res = train(model, data, cfg)
        assert res.steps == 4
        for p in model.params():
            np.testing.assert_array_equal(p.data, before[p.name])

    def test_loss_trend_decreases(self, data):
        model = tiny_model()
        res = train(model, data, TrainConfig(epochs=30, batch_size=4, opt=OptConfig(lr=5e-3)))
        losses = np.array(res.step_losses)
        ema = [losses[0]]
        for v in losses[1:]:
            ema.append(0.8 * ema[-1] + 0.2 * v)
        assert ema[-1] < 0.8 * ema[0]

    def test_deterministic(self, data):
        cfg = TrainConfig(epochs=2, batch_size=2, flip=True, window=5, seed=7)
        a = train(tiny_model(), data, cfg)
        b = train(tiny_model(), data, cfg)
        assert a.step_losses == b.step_losses
        for pa, pb in zip(a.model.params(), b.model.params()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_log_file(self, data, tmp_path):
        log = tmp_path / "logs" / "train.jsonl"
        res = train(tiny_model(), data, TrainConfig(epochs=3, batch_size=4, log_path=str(log)))
        lines = [json.loads(l) for l in log.read_text().splitlines()]
        assert lines == res.log
        assert [e["epoch"] for e in lines] == [0, 1, 2]
        assert lines[1]["lr"] == pytest.approx(lines[0]["lr"] * 0.99)
        assert {"train_loss", "mpjpe", "mpjve", "acc_err"} <= set(lines[0])

    def test_max_steps(self, data):
        res = train(tiny_model(), data, TrainConfig(epochs=10, batch_size=1, max_steps=5))
        assert res.steps == 5

    def test_target_stops_early(self, data):
        model = tiny_model()
        start = evaluate(model, data)["mpjpe"]
        res = train(model, data, TrainConfig(epochs=50, batch_size=4, target_mpjpe=start * 10))
        assert res.stopped_early and res.steps == 1

    def test_divergence_is_reported(self, data):
        bad = [(x2, np.full_like(x3, 1e308)) for x2, x3 in data]
        with np.errstate(all="ignore"), pytest.raises(TrainingDiverged, match="epoch 0"):
            train(tiny_model(), bad, TrainConfig(epochs=1, batch_size=4))

    def test_ragged_batch_needs_window(self):
        data = [synth_dataset(SynthConfig(seed=0, sequences=1, T=T))[0] for T in (5, 7)]
        with pytest.raises(ValueError, match="window"):
            train(tiny_model(), data, TrainConfig(epochs=1, batch_size=2))
        train(tiny_model(), data, TrainConfig(epochs=1, batch_size=2, window=4))

    def test_empty_dataset(self):
        with pytest.raises(ValueError, match="empty"):
            train(tiny_model(), [], TrainConfig(epochs=1))

    def test_evaluate_restores_mode(self, data):
        model = tiny_model()
        model.train()
        out = evaluate(model, data)
        assert model.training
        assert set(out) == {"mpjpe", "mpjve", "acc_err"}
