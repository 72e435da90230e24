import numpy as np
import pytest

from logokit.losses import LossConfig, ProxySet
from logokit.synthetic import gaussian_clusters, train_test_split
from logokit.trainer import (
    XAVIER_MAGNITUDE,
    Architecture,
    LabeledFeatureSet,
    LossKind,
    OptimizerState,
    TrainConfig,
    adam_step,
    backward,
    batch_loss_and_grads,
    effective_lr,
    embed,
    fit,
    forward,
    init_params,
    loss_kind_from_string,
    project_norm,
)

from _oracles import max_rel_err, numeric_gradient


def tiny_data(classes=3, per_class=6, d_in=6, sigma=0.15, seed=1):
    return gaussian_clusters(classes, d_in=d_in, points_per_class=per_class, sigma=sigma, seed=seed)


class TestInitParams:
    def test_linear_shapes_and_zero_bias(self):
        p = init_params(Architecture.LINEAR, 12, 0, 5, seed=0)
        assert p.w1.shape == (5, 12)
        assert not np.any(p.b1)
        assert p.w2 is None

    def test_mlp_shapes(self):
        p = init_params(Architecture.MLP1, 12, 7, 5, seed=0)
        assert p.w1.shape == (7, 12)
        assert p.w2.shape == (5, 7)
        assert not np.any(p.b2)

    def test_xavier_bound(self):
        p = init_params(Architecture.LINEAR, 30, 0, 10, seed=3)
        a = XAVIER_MAGNITUDE * np.sqrt(3.0 / ((30 + 10) / 2.0))
        assert np.max(np.abs(p.w1)) <= a
        # the draw should actually use the full range, not collapse
        assert np.max(np.abs(p.w1)) > 0.8 * a

    def test_deterministic(self):
        a = init_params(Architecture.MLP1, 8, 4, 3, seed=9)
        b = init_params(Architecture.MLP1, 8, 4, 3, seed=9)
        assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            init_params(Architecture.LINEAR, 0, 0, 4, seed=0)
        with pytest.raises(ValueError):
            init_params(Architecture.MLP1, 4, 0, 4, seed=0)


class TestProjectNorm:
    def test_three_four_five(self):
        assert np.allclose(project_norm(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])

    def test_norm_hits_target(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = rng.normal(size=6) * rng.uniform(0.1, 50)
            w = project_norm(v, 2.5)
            assert np.linalg.norm(w) == pytest.approx(2.5, rel=1e-12)

    def test_already_at_norm_unchanged(self):
        v = np.array([0.6, 0.8])
        assert np.allclose(project_norm(v, 1.0), v, atol=1e-12)

    def test_near_zero_rejected(self):
        with pytest.raises(ValueError):
            project_norm(np.zeros(3), 1.0)


class TestForwardBackward:
    def test_linear_identity_passthrough(self):
        p = init_params(Architecture.LINEAR, 4, 0, 4, seed=0)
        p.w1[:] = np.eye(4)
        p.b1[:] = 0.0
        f = np.array([1.0, 2.0, 3.0, 4.0])
        emb, _ = forward(p, f, norm=None)
        assert np.array_equal(emb, f)

    def test_projection_error_path(self):
        p = init_params(Architecture.LINEAR, 3, 0, 2, seed=0)
        p.w1[:] = 0.0
        with pytest.raises(ValueError):
            forward(p, np.ones(3), norm=1.0)

    def test_dimension_mismatch(self):
        p = init_params(Architecture.LINEAR, 3, 0, 2, seed=0)
        with pytest.raises(ValueError):
            forward(p, np.ones(4))

    @pytest.mark.parametrize("arch", [Architecture.LINEAR, Architecture.MLP1])
    @pytest.mark.parametrize("norm", [None, 1.0])
    def test_jvp_matches_fd(self, arch, norm):
        rng = np.random.default_rng(2)
        p = init_params(arch, 5, 4, 3, seed=4)
        f = rng.normal(size=5)
        direction = rng.normal(size=3)

        emb, cache = forward(p, f, norm=norm)
        grads = backward(p, cache, direction)
        for name, tensor in p.tensors().items():
            num = numeric_gradient(
                lambda t, n=name: float(direction @ forward(p, f, norm=norm)[0]),
                tensor,
            )
            assert max_rel_err(grads[name], num) <= 1e-4

    def test_embed_matches_forward_rows(self):
        p = init_params(Architecture.MLP1, 6, 5, 4, seed=1)
        rng = np.random.default_rng(3)
        X = rng.normal(size=(7, 6))
        batch = embed(p, X, 1.0)
        for i in range(7):
            row, _ = forward(p, X[i], norm=1.0)
            assert np.allclose(batch[i], row)


class TestSchedule:
    def test_epoch_40_value(self):
        cfg = TrainConfig()
        assert effective_lr(cfg, 40) == pytest.approx(6.4e-5)

    def test_piecewise_constant_steps(self):
        cfg = TrainConfig()
        assert effective_lr(cfg, 0) == effective_lr(cfg, 19) == 1e-4
        assert effective_lr(cfg, 20) == pytest.approx(8e-5)

    def test_nonincreasing(self):
        cfg = TrainConfig()
        rates = [effective_lr(cfg, e) for e in range(200)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))


class TestAdamStep:
    def test_zero_grad_zero_decay_is_noop(self):
        cfg = TrainConfig(weight_decay=0.0)
        params = {"w": np.array([1.0, -2.0])}
        state = OptimizerState.for_params(params)
        adam_step(params, {"w": np.zeros(2)}, state, cfg, epoch=0)
        assert np.array_equal(params["w"], [1.0, -2.0])

    def test_first_step_magnitude_is_lr(self):
        # bias-corrected m/sqrt(v) equals 1 on the first step, so the
        # update is lr to machine precision (epsilon aside)
        cfg = TrainConfig(weight_decay=0.0)
        params = {"w": np.array([0.5])}
        state = OptimizerState.for_params(params)
        adam_step(params, {"w": np.array([1.0])}, state, cfg, epoch=0)
        assert params["w"][0] == pytest.approx(0.5 - 1e-4, abs=1e-9)

    def test_decay_applied_before_update(self):
        # with zero gradient, only the decoupled decay moves the weight
        cfg = TrainConfig(weight_decay=0.01)
        params = {"w": np.array([2.0])}
        state = OptimizerState.for_params(params)
        adam_step(params, {"w": np.array([0.0])}, state, cfg, epoch=0)
        assert params["w"][0] == pytest.approx(2.0 * (1.0 - 1e-4 * 0.01))

    def test_proxies_reprojected(self):
        cfg = TrainConfig()
        proxies = np.array([[3.0, 4.0], [0.0, 2.0]])
        params = {"proxies": proxies}
        state = OptimizerState.for_params(params)
        adam_step(params, {"proxies": np.ones((2, 2))}, state, cfg, epoch=0)
        assert np.allclose(np.linalg.norm(params["proxies"], axis=1), 1.0, rtol=1e-12)

    def test_nonfinite_gradient_rejected(self):
        cfg = TrainConfig()
        params = {"w": np.zeros(2)}
        state = OptimizerState.for_params(params)
        with pytest.raises(RuntimeError):
            adam_step(params, {"w": np.array([np.nan, 0.0])}, state, cfg, epoch=0)


class TestBatchGradients:
    @pytest.mark.parametrize("arch", [Architecture.LINEAR, Architecture.MLP1])
    @pytest.mark.parametrize(
        "loss",
        [
            LossKind.PROXY_TRIPLET,
            LossKind.PROXY_NCA,
            LossKind.CROSS_ENTROPY,
            LossKind.MARGIN,
            LossKind.TRIPLET,
        ],
    )
    def test_full_pipeline_fd(self, arch, loss):
        data = tiny_data()
        feats = data.features[:8]
        labels = list(data.labels[:8])
        cfg = TrainConfig(loss=loss, arch=arch, hidden=5, embedding_dim=4, seed=0)
        params = init_params(arch, data.d_in, cfg.hidden, cfg.embedding_dim, seed=0)
        proxies = ProxySet.initialize(
            sorted(set(labels)), cfg.embedding_dim, norm=cfg.proxy_norm, seed=1
        )
        _, grads = batch_loss_and_grads(params, proxies, feats, labels, cfg)

        tensors = {**params.tensors(), "proxies": proxies.proxies}
        for name, tensor in tensors.items():
            num = numeric_gradient(
                lambda t: batch_loss_and_grads(params, proxies, feats, labels, cfg)[0],
                tensor,
            )
            assert max_rel_err(grads[name], num) <= 1e-3, name

    def test_empty_batch_rejected(self):
        cfg = TrainConfig()
        params = init_params(Architecture.LINEAR, 4, 0, 3, seed=0)
        proxies = ProxySet.initialize(["a", "b"], 3, seed=0)
        with pytest.raises(ValueError):
            batch_loss_and_grads(params, proxies, np.zeros((0, 4)), [], cfg)


class TestFit:
    def test_loss_decreases_on_easy_data(self):
        data = tiny_data(classes=4, per_class=10, d_in=8, sigma=0.05)
        cfg = TrainConfig(
            loss=LossKind.PROXY_TRIPLET, epochs=30, batch_size=8, embedding_dim=6, seed=0
        )
        _, _, history = fit(data, cfg)
        assert history[-1] < history[0]
        assert np.all(np.isfinite(history))

    def test_deterministic_given_seed(self):
        data = tiny_data()
        cfg = TrainConfig(epochs=3, batch_size=4, embedding_dim=4, seed=5)
        p1, x1, h1 = fit(data, cfg)
        p2, x2, h2 = fit(data, cfg)
        assert h1 == h2
        assert np.array_equal(p1.w1, p2.w1)
        assert np.array_equal(x1.proxies, x2.proxies)

    def test_seed_changes_trajectory(self):
        data = tiny_data()
        h1 = fit(data, TrainConfig(epochs=3, batch_size=4, embedding_dim=4, seed=0))[2]
        h2 = fit(data, TrainConfig(epochs=3, batch_size=4, embedding_dim=4, seed=1))[2]
        assert h1 != h2

    def test_single_class_rejected_for_proxy_losses(self):
        data = tiny_data(classes=1)
        with pytest.raises(ValueError):
            fit(data, TrainConfig(loss=LossKind.PROXY_NCA, epochs=1))

    def test_epoch_count_matches_history(self):
        data = tiny_data()
        _, _, history = fit(data, TrainConfig(epochs=7, batch_size=8, embedding_dim=4, seed=0))
        assert len(history) == 7

    @pytest.mark.parametrize(
        "loss",
        [LossKind.CROSS_ENTROPY, LossKind.MARGIN, LossKind.TRIPLET, LossKind.PROXY_NCA],
    )
    def test_all_losses_trainable(self, loss):
        data = tiny_data(classes=3, per_class=8)
        cfg = TrainConfig(loss=loss, epochs=5, batch_size=6, embedding_dim=4, seed=2)
        params, proxies, history = fit(data, cfg)
        assert len(history) == 5
        assert np.all(np.isfinite(history))

    def test_proxy_norms_held_after_every_step(self):
        data = tiny_data(classes=4, per_class=8)
        cfg = TrainConfig(epochs=5, batch_size=8, embedding_dim=4, seed=0)
        worst = 0.0

        def watch(epoch, batch, params, proxies, state):
            nonlocal worst
            worst = max(worst, proxies.max_norm_deviation())

        fit(data, cfg, step_callback=watch)
        assert worst < 1e-6

    def test_step_callback_sees_every_batch(self):
        data = tiny_data(classes=3, per_class=8)  # 24 points
        cfg = TrainConfig(epochs=2, batch_size=10, embedding_dim=4, seed=0)
        calls = []
        fit(data, cfg, step_callback=lambda e, b, *_: calls.append((e, b)))
        assert calls == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]

    def test_mlp_path_trains(self):
        data = tiny_data(classes=3, per_class=8)
        cfg = TrainConfig(
            arch=Architecture.MLP1, hidden=10, epochs=5, batch_size=8, embedding_dim=4, seed=0
        )
        params, _, history = fit(data, cfg)
        assert params.arch is Architecture.MLP1
        assert np.all(np.isfinite(history))


class TestLabeledFeatureSet:
    def test_class_ids_sorted_unique(self):
        data = LabeledFeatureSet(np.zeros((4, 2)), ["b", "a", "b", "a"])
        assert data.class_ids == ["a", "b"]

    def test_length(self):
        data = LabeledFeatureSet(np.zeros((4, 2)), ["a"] * 4)
        assert len(data) == 4

    def test_mismatched_labels_rejected(self):
        with pytest.raises(ValueError):
            LabeledFeatureSet(np.zeros((4, 2)), ["a"] * 3)


class TestSynthetic:
    def test_shapes_and_labels(self):
        data = gaussian_clusters(3, d_in=8, points_per_class=5, sigma=0.1, seed=0)
        assert data.features.shape == (15, 8)
        assert data.labels[0] == "class_00"
        assert data.labels[-1] == "class_02"
        assert data.source_ids[0] == "class_00/0000"

    def test_centers_are_unit_basis(self):
        data = gaussian_clusters(4, d_in=6, points_per_class=200, sigma=0.01, seed=0)
        for c in range(4):
            block = data.features[c * 200 : (c + 1) * 200]
            center = block.mean(axis=0)
            expected = np.zeros(6)
            expected[c] = 1.0
            assert np.allclose(center, expected, atol=0.01)

    def test_split_sizes_and_determinism(self):
        data = gaussian_clusters(3, d_in=4, points_per_class=10, sigma=0.1, seed=0)
        tr1, te1 = train_test_split(data, train_per_class=7, seed=3)
        tr2, te2 = train_test_split(data, train_per_class=7, seed=3)
        assert len(tr1) == 21 and len(te1) == 9
        assert tr1.source_ids == tr2.source_ids
        assert set(tr1.source_ids).isdisjoint(te1.source_ids)

    def test_too_many_classes_rejected(self):
        with pytest.raises(ValueError):
            gaussian_clusters(10, d_in=5, points_per_class=3)


class TestLossKindParsing:
    def test_round_trip(self):
        for kind in LossKind:
            assert loss_kind_from_string(kind.value) is kind

    def test_case_insensitive(self):
        assert loss_kind_from_string("PROXY_NCA") is LossKind.PROXY_NCA

    def test_unknown_rejected(self):
        with pytest.raises(ValueError, match="proxy_triplet"):
            loss_kind_from_string("bogus")
