import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgpnet import tensor as T
from tgpnet.degradations import PairedSample, default_spec
from tgpnet.io import load_checkpoint
from tgpnet.model import ModelConfig, build_model
from tgpnet.tensor import Parameter, ShapeError, Tensor
from tgpnet.training import (OptimizerState, TrainConfig, TrainingAborted, adamw_step,
                             clip_grad_norm, ema_update, is_embedding_param, l1_loss, lr_at,
                             sample_batch, swapped_weights, train)

from conftest import toy_pool


def short_cfg(**kw):
    base = dict(lr_init=1e-3, warm_epochs=2, cycle_epochs=2, cycles=1, epochs=4,
                steps_per_epoch=1, batch_size=2, crop=16)
    base.update(kw)
    return TrainConfig(**base)


class TestL1:
    def test_examples(self, f64):
        a = Tensor(np.full((2, 3, 4, 4), 0.5))
        assert l1_loss(a, a.data).item() == 0.0
        assert l1_loss(a, np.full(a.shape, 0.25)).item() == pytest.approx(0.25)

    def test_gradient_is_scaled_sign(self, f64):
        out = Tensor(np.array([0.2, 0.5, 0.9]).reshape(1, 1, 1, 3), requires_grad=True)
        with T.Tape():
            T.backward(l1_loss(out, np.array([0.5, 0.5, 0.5]).reshape(1, 1, 1, 3)))
        assert np.allclose(out.grad.ravel(), [-1 / 3, 0.0, 1 / 3])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(Tensor(np.zeros((1, 1, 2, 2))), np.zeros((1, 1, 2, 3)))


class TestSchedule:
    cfg = TrainConfig()

    def test_full_protocol_endpoints(self):
        assert lr_at(0, self.cfg) == 2e-4
        assert lr_at(89, self.cfg) == 2e-4
        assert lr_at(90 + 179, self.cfg) == pytest.approx(1e-6, abs=1e-15)
        assert lr_at(90 + 180, self.cfg) == 2e-4
        assert lr_at(449, self.cfg) == pytest.approx(1e-6, abs=1e-15)

    def test_clamps_past_schedule(self):
        assert lr_at(10_000, self.cfg) == 1e-6

    def test_midpoint(self):
        mid = lr_at(90 + 179 / 2, self.cfg)
        assert mid == pytest.approx((2e-4 + 1e-6) / 2)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 460))
    def test_bounded_and_monotone_within_cycle(self, step):
        lr = lr_at(step, self.cfg)
        assert 1e-6 <= lr <= 2e-4
        if 90 <= step < 449 and (step - 90) % 180 != 179:
            assert lr_at(step + 1, self.cfg) <= lr

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(lr_init=1e-6, lr_min=1e-6)
        with pytest.raises(ValueError):
            TrainConfig(crop=30)
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"learning_rate": 1})


class TestAdamW:
    def _p(self, value, decay=True):
        with T.default_dtype(np.float64):
            p = Parameter((1,), init="zeros", decay=decay)
        p.data[:] = value
        return p

    def test_single_step_oracle(self):
        p = self._p(0.0)
        p.grad = np.ones(1)
        adamw_step({"w": p}, OptimizerState(), 1e-3, TrainConfig(weight_decay=0.0))
        assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)

    def test_zero_grad_zero_decay_is_noop(self):
        p = self._p(0.7)
        p.grad = np.zeros(1)
        adamw_step({"w": p}, OptimizerState(), 1e-3, TrainConfig(weight_decay=0.0))
        assert p.data[0] == 0.7

    def test_decoupled_decay_respects_flag(self):
        a, b = self._p(1.0), self._p(1.0, decay=False)
        a.grad, b.grad = np.zeros(1), np.zeros(1)
        adamw_step({"a": a, "b": b}, OptimizerState(), 0.1, TrainConfig(weight_decay=0.5))
        assert a.data[0] == pytest.approx(0.95) and b.data[0] == 1.0

    def test_groups_independent(self):
        a, b = self._p(0.0), self._p(0.0)
        a.grad, b.grad = np.ones(1), None
        adamw_step({"a": a, "b": b}, OptimizerState(), 1e-3, TrainConfig(weight_decay=0.0))
        assert a.data[0] != 0.0 and b.data[0] == 0.0

    def test_embedding_scale(self):
        names = {"tgp.sites.d2.ltse.w1.weight": True, "tgp.denoise.d2.prompt": True,
                 "tgp.sites.d2.hfm.gamma.weight": False, "stem.weight": False}
        assert {n: is_embedding_param(n) for n in names} == names
        e, h = self._p(0.0), self._p(0.0)
        e.grad, h.grad = np.ones(1), np.ones(1)
        cfg = TrainConfig(weight_decay=0.0, embed_lr_scale=0.1)
        adamw_step({"tgp.denoise.d2.prompt": e, "tgp.sites.d2.hfm.gamma.weight": h},
                   OptimizerState(), 1e-3, cfg)
        assert e.data[0] == pytest.approx(0.1 * h.data[0])

    def test_moment_shape_mismatch(self):
        p = self._p(0.0)
        p.grad = np.ones(1)
        state = OptimizerState(m={"w": np.zeros(2)}, v={"w": np.zeros(2)})
        with pytest.raises(ShapeError):
            adamw_step({"w": p}, state, 1e-3, TrainConfig())


class TestEmaAndClip:
    def test_ema_examples(self):
        s = np.zeros(1)
        ema_update(s, np.ones(1), 0.999)
        assert s[0] == pytest.approx(0.001)
        frozen = np.full(1, 3.0)
        ema_update(frozen, np.ones(1), 1.0)
        assert frozen[0] == 3.0

    def test_geometric_series(self):
        s = np.zeros(1)
        for _ in range(20):
            ema_update(s, np.full(1, 2.0), 0.9)
        assert s[0] == pytest.approx(2.0 * (1 - 0.9 ** 20))

    def test_clip(self):
        a, b = Parameter((1,)), Parameter((1,))
        a.grad, b.grad = np.array([3.0]), np.array([4.0])
        assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
        assert math.hypot(a.grad[0], b.grad[0]) == pytest.approx(1.0)
        assert clip_grad_norm([a, b], None) == pytest.approx(1.0)


class TestSampling:
    def _pool(self, tasks, n=2):
        return [PairedSample(np.full((1, 3, 32, 32), i / 10), np.full((1, 3, 32, 32), i / 10),
                             default_spec(t)) for i, t in enumerate(tasks) for _ in range(n)]

    def test_uniform_mix_frequencies(self):
        tasks = ["denoise", "deblur", "despeckle", "decloud", "deshadow"]
        cfg = TrainConfig(batch_size=1)
        rng = np.random.default_rng(0)
        counts = Counter(sample_batch(self._pool(tasks), cfg, rng).tasks[0] for _ in range(10_000))
        assert all(abs(counts[t] / 10_000 - 0.2) <= 0.02 for t in tasks)

    def test_single_task_and_crop(self):
        b = sample_batch(self._pool(["deblur"]), TrainConfig(batch_size=3, crop=16),
                         np.random.default_rng(0))
        assert b.tasks == ["deblur"] * 3 and b.degraded.shape == (3, 3, 16, 16)

    def test_homogeneous(self):
        cfg = TrainConfig(batch_size=4, homogeneous_batches=True)
        for seed in range(5):
            assert len(set(sample_batch(self._pool(["denoise", "deblur"]), cfg,
                                        np.random.default_rng(seed)).tasks)) == 1

    def test_errors(self):
        with pytest.raises(ValueError):
            sample_batch([], TrainConfig(), np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_batch(self._pool(["denoise"]), TrainConfig(crop=40), np.random.default_rng(0))


@pytest.fixture(scope="module")
def pool():
    return toy_pool(["denoise", "deblur"], per_task=2, size=16)


class TestLoop:
    def test_step0_loss_is_untrained_forward(self, pool):
        cfg = short_cfg(epochs=1)
        model = build_model(ModelConfig.toy(tasks=["denoise", "deblur"]))
        batch = sample_batch(pool, cfg, np.random.default_rng([cfg.seed, 0x7A1]))
        with T.no_grad():
            expect = l1_loss(model(Tensor(batch.degraded.astype(np.float32)), batch.tasks),
                             batch.clean).item()
        rep = train(model, pool, cfg)
        assert rep.losses[0] == expect

    def test_identical_seeds_identical_traces(self, pool):
        runs = [train(build_model(ModelConfig.toy(tasks=["denoise", "deblur"])), pool, short_cfg())
                for _ in range(2)]
        assert runs[0].records == runs[1].records
        assert all(np.array_equal(runs[0].state[k], runs[1].state[k]) for k in runs[0].state)

    def test_ema_diverges_and_swaps_back(self, pool):
        model = build_model(ModelConfig.toy(tasks=["denoise", "deblur"]))
        rep = train(model, pool, short_cfg())
        name = "stem.weight"
        assert not np.array_equal(rep.ema[name], rep.state[name])
        live = model.stem.weight.data.copy()
        with swapped_weights(model, rep.ema):
            assert np.array_equal(model.stem.weight.data, rep.ema[name])
        assert np.array_equal(model.stem.weight.data, live)

    def test_outputs_and_periodic_checkpoints(self, pool, tmp_path):
        model = build_model(ModelConfig.toy(tasks=["denoise", "deblur"]))
        rep = train(model, pool, short_cfg(checkpoint_every=2), out_dir=tmp_path)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["ema.ckpt", "last.ckpt", "step_2.ckpt", "step_4.ckpt", "train_log.jsonl"]
        assert len((tmp_path / "train_log.jsonl").read_text().splitlines()) == 4
        ck = load_checkpoint(tmp_path / "last.ckpt")
        assert np.array_equal(ck.state["stem.weight"], rep.state["stem.weight"])

    def test_non_finite_loss_aborts_keeping_last_good(self, pool, tmp_path):
        bad = [PairedSample(s.clean, np.full_like(s.degraded, np.nan), s.spec) for s in pool]
        model = build_model(ModelConfig.toy(tasks=["denoise", "deblur"]))
        init = model.stem.weight.data.copy()
        with pytest.raises(TrainingAborted):
            train(model, bad, short_cfg(), out_dir=tmp_path)
        ck = load_checkpoint(tmp_path / "last.ckpt")
        assert np.array_equal(ck.state["stem.weight"], init)
