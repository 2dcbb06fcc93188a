import numpy as np
import pytest

from spdmetrics import core
from spdmetrics import datasets as ds
from spdmetrics import network as net
from spdmetrics.exceptions import BadMagic, ConfigError

from conftest import rand_spd, rand_sym


@pytest.fixture
def toy_data():
    spec = ds.SyntheticSpec(dim=6, class_count=3, samples_per_class=8, seed=11)
    return ds.generate_synthetic(spec)


def make_state(rng, dims=(6, 3), mode="mul", **kw):
    cfg = net.NetworkConfig(dims=dims, num_classes=3, alog_mode=mode, **kw)
    return net.init_network(cfg)


class TestConfig:
    def test_dims_must_be_non_increasing(self):
        with pytest.raises(ConfigError):
            net.NetworkConfig(dims=(4, 6), num_classes=2)

    def test_needs_two_classes(self):
        with pytest.raises(ConfigError):
            net.NetworkConfig(dims=(4, 2), num_classes=1)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            net.NetworkConfig(dims=(4, 2), num_classes=2, alog_mode="square")


class TestInit:
    def test_alog_equals_plain_log_at_init(self, rng):
        # with no bilinear layer the log stage must reproduce mln exactly
        for mode in net.ALOG_MODES:
            state = make_state(rng, dims=(4,), mode=mode)
            A = net.effective_factors(state)
            S = rand_spd(rng, 4)
            U, s = core.sym_eig(S)
            layer_out = (U * (A * np.log(s))) @ U.T
            assert np.abs(layer_out - core.mln(S)).max() <= 1e-14

    def test_weights_orthonormal(self, rng):
        state = make_state(rng, dims=(8, 5, 3))
        for W in state.bimap_weights:
            assert np.abs(W @ W.T - np.eye(W.shape[0])).max() <= 1e-12

    def test_same_seed_same_state(self):
        cfg = net.NetworkConfig(dims=(6, 3), num_classes=3, seed=42)
        s1, s2 = net.init_network(cfg), net.init_network(cfg)
        for a, b in zip(s1.bimap_weights, s2.bimap_weights):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(s1.alog_param, s2.alog_param)


class TestForward:
    def test_logeig_network_on_identity_returns_bias(self, rng):
        state = make_state(rng, dims=(3,), mode="none")
        state.clf_bias = rng.standard_normal(3)
        logits = net.forward(state, np.eye(3))
        np.testing.assert_allclose(logits, state.clf_bias, atol=1e-15)

    def test_alog_matches_logeig_at_init(self, rng):
        cfg_kw = dict(dims=(6, 4), num_classes=3, seed=3)
        adaptive = net.init_network(net.NetworkConfig(alog_mode="geom", **cfg_kw))
        plain = net.init_network(net.NetworkConfig(alog_mode="none", **cfg_kw))
        clf = rng.standard_normal(adaptive.clf_weight.shape)
        adaptive.clf_weight = clf
        plain.clf_weight = clf.copy()
        for _ in range(100):
            S = rand_spd(rng, 6)
            la = net.forward(adaptive, S)
            lp = net.forward(plain, S)
            assert np.abs(la - lp).max() <= 1e-14

    def test_logits_finite_on_batch(self, rng, toy_data):
        state = make_state(rng, dims=(6, 3))
        logits = net.forward(state, toy_data.matrices)
        assert np.all(np.isfinite(logits))


class TestLoss:
    def test_uniform_logits(self):
        loss, _ = net.loss_softmax_ce(np.zeros(5), 2)
        assert abs(loss - np.log(5)) <= 1e-12

    def test_confident_correct(self):
        loss, _ = net.loss_softmax_ce(np.array([100.0, 0.0, 0.0]), 0)
        assert loss <= 1e-12

    def test_gradient_sums_to_zero(self, rng):
        logits = rng.standard_normal(7)
        _, g = net.loss_softmax_ce(logits, 3)
        assert abs(g.sum()) <= 1e-12

    def test_gradient_matches_fd(self, rng):
        logits = rng.standard_normal(4)
        _, g = net.loss_softmax_ce(logits, 1)
        h = 1e-7
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            fd = (
                net.loss_softmax_ce(logits + e, 1)[0]
                - net.loss_softmax_ce(logits - e, 1)[0]
            ) / (2 * h)
            assert abs(g[i] - fd) <= 1e-6


class TestBackward:
    def test_zero_grad_logits_gives_zero_grads(self, rng):
        state = make_state(rng, dims=(6, 4, 3), mode="div")
        X = np.stack([rand_spd(rng, 6) for _ in range(3)])
        out = net._forward_backward(state, X, grad_logits=np.zeros((3, 3)))
        assert np.abs(out["grad_alog"]).max() == 0.0
        assert all(np.abs(g).max() == 0.0 for g in out["grad_bimaps"])
        assert np.abs(out["grad_clf_weight"]).max() == 0.0

    @pytest.mark.parametrize(
        "dims,mode",
        [
            ((6, 3), "mul"),
            ((6, 4, 3), "div"),
            ((6, 3), "relu"),
            ((6, 4, 3), "geom"),
            ((6, 4, 3), "none"),
            ((6,), "mul"),
        ],
    )
    def test_parameter_gradients_match_fd(self, rng, dims, mode):
        state = make_state(rng, dims=dims, mode=mode)
        state.alog_param = state.alog_param + rng.uniform(-0.2, 0.2, dims[-1])
        state.clf_weight = rng.standard_normal(state.clf_weight.shape) * 0.3
        X = np.stack([rand_spd(rng, dims[0]) for _ in range(4)])
        y = rng.integers(0, 3, 4)
        out = net._forward_backward(state, X, y)

        def loss():
            return float(net._forward_backward(state, X, y)["losses"].mean())

        h = 1e-6
        g = out["grad_alog"].mean(axis=0)
        for i in range(dims[-1]):
            old = float(state.alog_param[i])
            p = state.alog_param.copy()
            p[i] = old + h
            state.alog_param = p
            up = loss()
            p = p.copy()
            p[i] = old - h
            state.alog_param = p
            down = loss()
            p = p.copy()
            p[i] = old
            state.alog_param = p
            assert abs((up - down) / (2 * h) - g[i]) <= 1e-4

        for k, W in enumerate(state.bimap_weights):
            G = out["grad_bimaps"][k].mean(axis=0)
            for i in range(W.shape[0]):
                for j in range(W.shape[1]):
                    old = W[i, j]
                    W[i, j] = old + h
                    up = loss()
                    W[i, j] = old - h
                    down = loss()
                    W[i, j] = old
                    assert abs((up - down) / (2 * h) - G[i, j]) <= 1e-4


class TestTraining:
    def test_zero_lr_freezes_parameters(self, rng, toy_data):
        state = make_state(rng, dims=(6, 3), lr=0.0)
        before = [W.copy() for W in state.bimap_weights]
        alog_before = state.alog_param.copy()
        state, _ = net.train_epoch(state, toy_data)
        for a, b in zip(before, state.bimap_weights):
            np.testing.assert_allclose(a, b, atol=1e-14)
        np.testing.assert_array_equal(alog_before, state.alog_param)

    def test_loss_decreases_on_separable_data(self, rng, toy_data):
        state = make_state(rng, dims=(6, 3), lr=1e-2)
        losses = []
        for _ in range(5):
            state, metrics = net.train_epoch(state, toy_data)
            losses.append(metrics["loss"])
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_deterministic_metrics(self, toy_data):
        cfg = net.NetworkConfig(dims=(6, 3), num_classes=3, epochs=3, seed=9)
        _, rows1 = net.train(net.init_network(cfg), toy_data)
        _, rows2 = net.train(net.init_network(cfg), toy_data)
        for r1, r2 in zip(rows1, rows2):
            assert r1[:4] == r2[:4]

    def test_threads_do_not_change_results(self, toy_data):
        cfg = net.NetworkConfig(dims=(6, 3), num_classes=3, epochs=3, seed=9)
        s1, rows1 = net.train(net.init_network(cfg), toy_data, threads=1)
        s2, rows2 = net.train(net.init_network(cfg), toy_data, threads=4)
        for r1, r2 in zip(rows1, rows2):
            assert r1[:4] == r2[:4]
        for a, b in zip(s1.bimap_weights, s2.bimap_weights):
            np.testing.assert_array_equal(a, b)

    def test_geom_div_trajectories_agree(self, toy_data):
        kw = dict(dims=(6, 3), num_classes=3, lr=5e-2, seed=5)
        s_div = net.init_network(net.NetworkConfig(alog_mode="div", **kw))
        s_geom = net.init_network(net.NetworkConfig(alog_mode="geom", **kw))
        for _ in range(50):
            s_div, _ = net.train_epoch(s_div, toy_data)
            s_geom, _ = net.train_epoch(s_geom, toy_data)
            gap = np.abs(np.log(s_geom.alog_param) - s_div.alog_param).max()
            assert gap <= 1e-8

    def test_orthogonality_drift_stays_small(self, rng, toy_data):
        state = make_state(rng, dims=(6, 4, 3), mode="relu", lr=5e-2)
        worst = 0.0
        for _ in range(20):
            state, _ = net.train_epoch(state, toy_data)
            for W in state.bimap_weights:
                worst = max(worst, np.abs(W @ W.T - np.eye(W.shape[0])).max())
        assert worst <= 1e-8

    def test_no_spd_violations(self, rng, toy_data):
        state = make_state(rng, dims=(6, 4, 3), mode="mul", lr=1e-2)
        for _ in range(10):
            state, _ = net.train_epoch(state, toy_data)
        assert state.spd_violations == 0

    def test_factor_history_is_recorded(self, rng, toy_data):
        state = make_state(rng, dims=(6, 3), mode="div", lr=1e-2)
        state, _ = net.train_epoch(state, toy_data)
        state, _ = net.train_epoch(state, toy_data)
        assert len(state.factor_history) == 2
        assert state.factor_history[0].shape == (3,)

    def test_divergence_reported_with_epoch(self, toy_data):
        cfg = net.NetworkConfig(dims=(6, 3), num_classes=3, seed=1)
        state = net.init_network(cfg)
        state.clf_weight = state.clf_weight + np.nan
        with pytest.raises(net.TrainingDiverged) as err:
            net.train_epoch(state, toy_data)
        assert err.value.epoch == 1


class TestEvaluate:
    def test_memorized_two_samples(self, rng):
        mats = np.stack([np.eye(3) * 4.0, np.eye(3) * 0.25])
        labels = np.array([0, 1])
        data = ds.SpdDataset(mats, labels, 2)
        cfg = net.NetworkConfig(
            dims=(3,), num_classes=2, alog_mode="none", lr=0.5, epochs=60,
            batch_size=2, seed=0,
        )
        state, _ = net.train(net.init_network(cfg), data)
        assert net.evaluate(state, data)["accuracy"] == 1.0

    def test_confusion_rows_for_absent_classes_are_zero(self, rng, toy_data):
        state = make_state(rng)
        only_class_zero = toy_data.subset(np.nonzero(toy_data.labels == 0)[0])
        confusion = net.evaluate(state, only_class_zero)["confusion"]
        assert confusion[1:].sum() == 0

    def test_untrained_accuracy_near_chance(self, toy_data):
        accs = []
        for seed in range(5):
            cfg = net.NetworkConfig(dims=(6, 3), num_classes=3, seed=seed)
            accs.append(net.evaluate(net.init_network(cfg), toy_data)["accuracy"])
        assert all(abs(a - 1 / 3) <= 0.15 for a in accs)


class TestCheckpoint:
    def test_round_trip(self, rng, toy_data, tmp_path):
        state = make_state(rng, dims=(6, 4, 3), mode="geom", lr=1e-2)
        state, _ = net.train_epoch(state, toy_data)
        path = tmp_path / "model.spdn"
        net.save_checkpoint(state, path)
        loaded = net.load_checkpoint(path)
        assert loaded.config == state.config
        assert loaded.epoch == state.epoch
        for a, b in zip(state.bimap_weights, loaded.bimap_weights):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(state.alog_param, loaded.alog_param)
        np.testing.assert_array_equal(state.clf_weight, loaded.clf_weight)
        np.testing.assert_array_equal(state.clf_bias, loaded.clf_bias)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bogus.spdn"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(BadMagic):
            net.load_checkpoint(path)
