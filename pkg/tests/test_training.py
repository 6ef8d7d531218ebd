import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from memdip import autodiff as ad
from memdip.data import FeatureSet
from memdip.dsp import ConfigError
from memdip.masking import sample_mask_batch
from memdip.model import MemConfig, MemModel, mem_loss
from memdip.training import (
    Adam,
    CurriculumSchedule,
    NonFiniteLossError,
    TrainConfig,
    accuracy,
    fit,
    ratio_for_epoch,
    train_epoch,
)


def tiny_model(strategy="channel", seed=0, n=12, d=17):
    return MemModel(MemConfig(n_channels=n, n_bins=d, embed_size=16, attention_heads=2, feedforward_width=32,
                              strategy=strategy), seed=seed)


def features(x, y):
    m = len(y)
    return FeatureSet(np.asarray(x, float), np.asarray(y), np.array(["alert"] * m, dtype=object),
                      np.array(["s0"] * m, dtype=object), np.arange(m), np.arange(x.shape[2], dtype=float),
                      tuple(f"E{i}" for i in range(x.shape[1])))


class TestSchedule:
    @pytest.mark.parametrize("epoch,ratio", [
        (0, 0.05), (199, 0.05), (200, 0.15), (399, 0.15), (400, 0.25), (600, 0.35), (800, 0.45),
        (1000, 0.55), (1200, 0.65), (1400, 0.75), (1600, 0.85), (1799, 0.85), (1800, 0.9), (5000, 0.9),
    ])
    def test_default_table(self, epoch, ratio):
        assert ratio_for_epoch(CurriculumSchedule(), epoch) == ratio

    def test_boundaries(self):
        assert CurriculumSchedule().boundaries() == [200 * k for k in range(10)]

    @given(st.integers(0, 10_000), st.integers(0, 10_000))
    def test_nondecreasing(self, a, b):
        lo, hi = sorted((a, b))
        s = CurriculumSchedule()
        assert ratio_for_epoch(s, lo) <= ratio_for_epoch(s, hi)

    def test_compressed(self):
        s = CurriculumSchedule.compressed(3, cap_epochs=2)
        assert [r for r, _ in s.stages][:2] == [0.05, 0.15] and s.stages[-1] == (0.9, 2)
        assert s.total_epochs == 9 * 3 + 2
        assert ratio_for_epoch(s, 3) == 0.15

    @pytest.mark.parametrize("stages", [(), ((0.5, 10), (0.2, None)), ((1.5, None),), ((0.1, None), (0.2, 5)),
                                        ((0.1, 0),)])
    def test_invalid(self, stages):
        with pytest.raises(ConfigError):
            CurriculumSchedule(stages)

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            ratio_for_epoch(CurriculumSchedule(), -1)


class TestTrainConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.lr, c.beta1, c.beta2, c.eps, c.batch_size, c.rec_weight) == (1e-4, 0.9, 0.999, 1e-8, 64, 0.1)

    @pytest.mark.parametrize("kw", [dict(batch_size=0), dict(rec_weight=-1.0), dict(lr=-1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_open_schedule_needs_max_epochs(self):
        with pytest.raises(ConfigError):
            TrainConfig(schedule=CurriculumSchedule.fixed(0.1)).epochs

    def test_round_trip(self):
        c = TrainConfig(schedule=CurriculumSchedule.compressed(2, cap_epochs=1), lr=1e-3)
        assert TrainConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


class TestAdam:
    def test_first_step_is_lr_sign(self):
        p = ad.parameter(np.array([1.0, -2.0, 3.0]))
        Adam([p], lr=0.1).step([np.array([0.5, -4.0, 1e-3])])
        np.testing.assert_allclose(p.data, [0.9, -1.9, 2.9], rtol=1e-6)

    def test_hand_computed_two_steps(self):
        p = ad.parameter(np.array([0.0]))
        opt = Adam([p], lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
        opt.step([np.array([1.0])])
        opt.step([np.array([3.0])])
        m = 0.9 * 0.1 + 0.1 * 3.0
        v = 0.999 * 0.001 + 0.001 * 9.0
        step2 = 0.01 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        step1 = 0.01 * 1.0 / (1.0 + 1e-8)
        np.testing.assert_allclose(p.data, [-(step1 + step2)], rtol=1e-12)


class TestTrainEpoch:
    def test_zero_lr_leaves_parameters(self, small_corpus):
        feats = small_corpus.features()
        model = tiny_model()
        before = model.state_dict()
        cfg = TrainConfig(lr=0.0, batch_size=16)
        train_epoch(model, Adam(list(model.parameters()), 0.0), feats, cfg, epoch=0)
        for k, v in model.state_dict().items():
            assert np.array_equal(v, before[k]), k

    def test_memorise_single_sample(self, rng):
        x = rng.normal(size=(1, 12, 17))
        data = features(x, [2])
        model = tiny_model(seed=5)
        cfg = TrainConfig(lr=1e-3, batch_size=1, rec_weight=0.0, schedule=CurriculumSchedule.fixed(0.0), max_epochs=500)
        opt = Adam(list(model.parameters()), cfg.lr)
        for e in range(500):
            m = train_epoch(model, opt, data, cfg, e)
        assert m.train_acc == 1.0
        assert accuracy(model, data) == 1.0

    def test_deterministic(self, small_corpus):
        feats = small_corpus.features()
        runs = []
        for _ in range(2):
            model = tiny_model()
            cfg = TrainConfig(lr=1e-3, batch_size=16, schedule=CurriculumSchedule.fixed(0.3), max_epochs=2)
            opt = Adam(list(model.parameters()), cfg.lr)
            metrics = [train_epoch(model, opt, feats, cfg, e).to_dict() for e in range(2)]
            runs.append((metrics, model.state_dict()))
        assert runs[0][0] == runs[1][0]
        for k in runs[0][1]:
            assert np.array_equal(runs[0][1][k], runs[1][1][k])

    def test_empty_split(self):
        empty = features(np.zeros((0, 12, 17)), np.zeros(0, dtype=int))
        model = tiny_model()
        with pytest.raises(ValueError):
            train_epoch(model, Adam(list(model.parameters())), empty, TrainConfig(), 0)

    def test_non_finite_loss_reports_batch(self, rng):
        data = features(rng.normal(size=(4, 12, 17)), [0, 1, 2, 0])
        model = tiny_model()
        model["cls.w"].data[0, 0] = np.inf
        with pytest.raises(NonFiniteLossError) as info:
            train_epoch(model, Adam(list(model.parameters())), data, TrainConfig(batch_size=2), 0)
        assert info.value.batch_index == 0
        assert np.isinf(info.value.param_norms["cls.w"])


class TestGradientIsolation:
    def grads(self, rec_weight, cls_weight, masked_only=False):
        rng = np.random.default_rng(8)
        model = tiny_model("frequency", n=4, d=5)
        w = rng.normal(size=(3, 4, 5))
        vis, msk = sample_mask_batch(3, model.cfg.n_tokens, 0.4, rng)
        out = model.forward(w, vis, msk)
        total, _, _ = mem_loss(out, np.array([0, 1, 2]), w, rec_weight=rec_weight, cls_weight=cls_weight,
                               masked_only=masked_only, strategy=model.cfg.strategy)
        g = ad.backward(total, list(model.parameters()))
        return {k: g[p] for k, p in model.named_parameters()}

    DECODER_ONLY = ("mask_token", "pos.dec", "dec.", "recon.")

    @pytest.mark.parametrize("masked_only", [False, True])
    def test_alpha_zero_silences_decoder(self, masked_only):
        g = self.grads(rec_weight=0.0, cls_weight=1.0, masked_only=masked_only)
        for k, v in g.items():
            if k.startswith(self.DECODER_ONLY):
                assert not np.any(v), k
        assert np.any(g["cls.w"])

    @pytest.mark.parametrize("masked_only", [False, True])
    def test_no_classification_silences_head(self, masked_only):
        g = self.grads(rec_weight=0.1, cls_weight=0.0, masked_only=masked_only)
        assert not np.any(g["cls.w"]) and not np.any(g["cls.b"])
        assert np.any(g["recon.w"]) and np.any(g["enc.0.attn.wq"])


class TestFit:
    def test_log_and_selection(self, small_corpus, tmp_path):
        feats = small_corpus.features()
        split = small_corpus.split
        train, val = feats.select(split.ids("train")), feats.select(split.ids("val"))
        model = tiny_model()
        cfg = TrainConfig(lr=1e-3, batch_size=16, schedule=((0.05, 2), (0.15, 2)), checkpoint_every=2)
        log = tmp_path / "log.jsonl"
        res = fit(model, train, val, cfg, log_path=log, checkpoint_dir=tmp_path)
        rows = [json.loads(line) for line in log.read_text().splitlines()]
        assert [r["epoch"] for r in rows] == [0, 1, 2, 3]
        assert [r["ratio"] for r in rows] == [0.05, 0.05, 0.15, 0.15]
        assert set(rows[0]) == {"epoch", "ratio", "train_loss_cls", "train_loss_mse", "train_acc", "val_acc"}
        best = max(r["val_acc"] for r in rows)
        assert res.best_val_acc == best >= rows[-1]["val_acc"]
        assert res.best_epoch == min(r["epoch"] for r in rows if r["val_acc"] == best)
        assert accuracy(model, val) == best
        assert sorted(p.name for p in tmp_path.glob("epoch*.ckpt")) == ["epoch00002.ckpt", "epoch00004.ckpt"]

    def test_early_stop(self, small_corpus):
        feats = small_corpus.features()
        model = tiny_model()
        cfg = TrainConfig(lr=0.0, schedule=CurriculumSchedule.fixed(0.1), max_epochs=50, early_stop_patience=3)
        res = fit(model, feats, feats, cfg)
        assert len(res.log) == 4


def test_reconstruction_fits_small_corpus(small_corpus):
    feats = small_corpus.features()
    data = feats.select(feats.ids[:50])
    model = MemModel(MemConfig(embed_size=32, attention_heads=4, feedforward_width=64), seed=0)
    cfg = TrainConfig(lr=3e-3, batch_size=25, rec_weight=1.0, schedule=CurriculumSchedule.fixed(0.0), max_epochs=100)
    opt = Adam(list(model.parameters()), cfg.lr)
    for e in range(cfg.epochs):
        train_epoch(model, opt, data, cfg, e)
    recon = model.forward(data.x).reconstruction.data
    assert np.mean((recon - data.x) ** 2) < 0.1 * data.x.var()
