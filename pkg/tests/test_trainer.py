import math

import numpy as np
import pytest

from gammacas import model, pointprocess, trainer
from gammacas.cli import toy_batch
from gammacas.model import ModelConfig
from gammacas.text import Vocab, clean_tokens
from gammacas.trainer import OptimizerState, TrainConfig


class TestInit:
    cfg = ModelConfig(state_size=5, embed_dim=6, vocab_size=9)

    def test_deterministic(self):
        a = trainer.init_weights(self.cfg, 4)
        b = trainer.init_weights(self.cfg, 4)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_biases(self):
        W = trainer.init_weights(self.cfg, 0)
        special = {"head.B_mu": 1.0, "head.B_A": 1.0, "head.B_gamma": 1.0}
        for name, w in W.items():
            if ".B_" not in name:
                continue
            if name == "cell.B_h":
                assert np.all(w == 3.0)
            else:
                assert np.all(w == special.get(name, 0.0)), name
        assert W["head.B_lambda"] == 0.0

    def test_glorot_bounds(self):
        W = trainer.init_weights(self.cfg, 1)
        for name, w in W.items():
            if ".W_" in name:
                fan_in, fan_out = w.shape if w.ndim == 2 else (w.shape[0], 1)
                assert np.abs(w).max() <= math.sqrt(6 / (fan_in + fan_out)), name
        assert np.abs(W["text.embedding"]).max() <= 0.05


class TestAdam:
    def test_hand_evaluated_step(self):
        w, _ = trainer.adam_step({"x": np.array(0.0)}, {"x": np.array(1.0)}, OptimizerState(),
                                 TrainConfig(learning_rate=0.001))
        assert float(w["x"]) == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)

    def test_zero_gradient(self):
        W = {"x": np.array([1.0, -2.0])}
        w, st = trainer.adam_step(W, {"x": np.zeros(2)}, OptimizerState(), TrainConfig())
        assert np.array_equal(w["x"], W["x"]) and st.step == 1

    def test_clipping(self):
        g = {"a": np.array([30.0, 40.0])}  # norm 50
        clipped, norm = trainer.clip_by_global_norm(g, 5.0)
        assert norm == 50.0
        np.testing.assert_allclose(clipped["a"], [3.0, 4.0])

    def test_clip_applied_before_update(self):
        tc = TrainConfig(clip_norm=5.0)
        st = OptimizerState()
        _, st = trainer.adam_step({"a": np.zeros(2)}, {"a": np.array([30.0, 40.0])}, st, tc)
        np.testing.assert_allclose(st.m["a"], 0.1 * np.array([3.0, 4.0]))


class TestBackward:
    def test_zero_loss_zero_gradient(self):
        S, W, cfg = toy_batch("full", seed=3)
        cfg = model.replace(cfg, zeta=0.0)
        out, _ = model.forward_batch(S, W, cfg)
        S.targets = out["Y"].copy()
        J, grads = trainer.backward(S, W, cfg)
        assert J == 0.0
        assert all(np.all(g == 0) for g in grads.values())

    def test_batch_gradient_is_mean(self):
        S, W, cfg = toy_batch("text_only", seed=4)
        _, g_all = trainer.backward(S.subset([0, 1]), W, cfg)
        _, g0 = trainer.backward(S.subset([0]), W, cfg)
        _, g1 = trainer.backward(S.subset([1]), W, cfg)
        for k in g_all:
            np.testing.assert_allclose(g_all[k], 0.5 * (g0[k] + g1[k]), rtol=1e-10, atol=1e-13)

    def test_non_finite(self):
        S, W, cfg = toy_batch("cascade_only", seed=0)
        W = dict(W, **{"head.B_A": np.array(np.nan)})
        with pytest.raises(trainer.NumericError):
            trainer.backward(S, W, cfg)


class TestGradCheck:
    def test_corrupted_lambda_gradient(self):
        S, W, cfg = toy_batch("full", seed=5)
        _, grads, _ = model.loss_and_grads(S, W, cfg)
        bad = dict(grads, **{"head.W_lambda": 2 * grads["head.W_lambda"]})
        report = trainer.grad_check(W, S, cfg, fraction=1.0, grads=bad)
        assert report["head.W_lambda"] == pytest.approx(1.0, abs=0.05)
        assert max(v for k, v in report.items() if k != "head.W_lambda") <= 1e-4

    def test_eps_halved_stable(self):
        S, W, cfg = toy_batch("cascade_only", seed=6)
        r1 = max(trainer.grad_check(W, S, cfg, eps=1e-5, fraction=1.0).values())
        r2 = max(trainer.grad_check(W, S, cfg, eps=5e-6, fraction=1.0).values())
        assert r1 <= 1e-4 and r2 <= 1e-4
        assert max(r1, r2) <= 10 * max(min(r1, r2), 1e-9)

    def test_subsample_size(self):
        S, W, cfg = toy_batch("full", seed=0)
        report = trainer.grad_check(W, S, cfg, fraction=0.01)
        assert max(report.values()) <= 1e-4


@pytest.fixture(scope="module")
def tiny_corpus():
    corpus = pointprocess.synth_corpus(pointprocess.SynthConfig(n_cascades=12, seed=9))
    vocab = Vocab(sorted({t for c in corpus.cascades for t in clean_tokens(c.root_text)}
                         | {t for n in corpus.news for t in clean_tokens(n.headline)}))
    cfg = ModelConfig(state_size=6, embed_dim=8, vocab_size=len(vocab), news_cap=8)
    S = model.featurize(corpus.cascades, corpus.news, vocab, cfg)
    return S.subset(np.arange(10)), cfg


class TestTrain:
    def test_one_epoch_reduces_loss(self, tiny_corpus):
        S, cfg = tiny_corpus
        tc = TrainConfig(batch_size=4, epochs=1, learning_rate=0.01, seed=0)
        W0 = trainer.init_weights(cfg, tc.seed)
        W1, rows = trainer.train(S, cfg, tc)
        assert len(rows) == 1
        assert set(rows[0]) == {"epoch", "train_loss", "dev_mape24", "dev_tau24", "seconds"}
        assert model.batch_loss(S, W1, cfg) < model.batch_loss(S, W0, cfg)

    def test_deterministic(self, tiny_corpus):
        S, cfg = tiny_corpus
        tc = TrainConfig(batch_size=4, epochs=2, learning_rate=0.01, seed=1)
        a, _ = trainer.train(S, cfg, tc)
        b, _ = trainer.train(S, cfg, tc)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_dev_split_disjoint(self):
        tr, dev = trainer.split_dev(50, 0.1, np.random.default_rng(0))
        assert len(dev) == 5 and not set(tr) & set(dev) and len(set(tr) | set(dev)) == 50

    def test_log_file(self, tiny_corpus, tmp_path):
        S, cfg = tiny_corpus
        trainer.train(S, cfg, TrainConfig(batch_size=5, epochs=2, seed=0),
                      log_path=tmp_path / "log.csv")
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,dev_mape24,dev_tau24,seconds" and len(lines) == 3

    def test_overfit_single_sample(self, tiny_corpus):
        S, cfg = tiny_corpus
        one = S.subset([0])
        W = trainer.init_weights(cfg, 0)
        opt = OptimizerState()
        tc = TrainConfig(learning_rate=1e-3)
        losses = []
        for _ in range(21):
            J, g = trainer.backward(one, W, cfg)
            losses.append(J)
            W, opt = trainer.adam_step(W, g, opt, tc)
        assert np.all(np.diff(losses) < 0)

    def test_persistent_non_finite_aborts(self, tiny_corpus):
        S, cfg = tiny_corpus
        W = trainer.init_weights(cfg, 0)
        W["norm.r_b"] = np.array(np.inf)
        with pytest.warns(RuntimeWarning), pytest.raises(trainer.NumericError, match="3 consecutive"):
            trainer.train(S, cfg, TrainConfig(batch_size=2, epochs=1), init=W)

    def test_rejects_zero_targets(self, tiny_corpus):
        S, cfg = tiny_corpus
        bad = S.subset(np.arange(len(S)))
        bad.targets[0, 0] = 0
        with pytest.raises(ValueError):
            trainer.train(bad, cfg, TrainConfig(epochs=1))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(dev_fraction=0.6)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
