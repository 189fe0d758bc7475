from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_codes
from entity_embedding.errors import ConfigError, ModeError, ShapeError, UnseenCategoryError
from entity_embedding.services.net import (
    AdamState,
    EmbeddingMatrix,
    InputMode,
    Network,
    TrainConfig,
    adam_step,
    average_embeddings,
    backward,
    embed_dataset,
    embed_lookup,
    ensemble_predictor,
    extract_embeddings,
    forward,
    grad_check,
    predict_ensemble,
    train,
    train_ensemble,
)
from entity_embedding.services.tabular import Dataset, TargetTransform, split
from entity_embedding.utils.numerics import seeded_rng


def build(schema, mode=InputMode.EMBED, hidden=(16, 8), seed=0, **kwargs):
    cfg = TrainConfig(hidden_sizes=hidden, input_mode=mode, **kwargs)
    return Network.initialize(schema, cfg, seeded_rng(seed))


class TestInitialisation:
    def test_parameter_layout(self, small_schema):
        net = build(small_schema)
        assert net.params["embedding_0"].shape == (8, 3)
        assert net.params["dense_0_weight"].shape == (6, 16)
        assert net.params["dense_1_weight"].shape == (16, 8)
        assert net.params["output_weight"].shape == (8, 1)
        assert_array_equal(net.params["dense_0_bias"], np.zeros(16))

    def test_embedding_init_range(self, small_schema):
        net = build(small_schema, embedding_init=0.05)
        for i in range(3):
            assert np.all(np.abs(net.params[f"embedding_{i}"]) <= 0.05)

    def test_glorot_limit(self, small_schema):
        w = build(small_schema).params["dense_0_weight"]
        assert np.all(np.abs(w) <= np.sqrt(6.0 / (6 + 16)))

    def test_extra_dense_layout(self, small_schema):
        net = build(small_schema, InputMode.ONE_HOT_EXTRA_DENSE)
        assert net.params["extra_weight"].shape == (15, 6)
        assert not any(k.startswith("embedding_") for k in net.params)

    def test_seeded(self, small_schema):
        a, b = build(small_schema, seed=4), build(small_schema, seed=4)
        for name in a.params:
            assert_array_equal(a.params[name], b.params[name])

    def test_bad_parameter_shapes(self, small_schema):
        net = build(small_schema)
        params = dict(net.params)
        params["output_bias"] = np.zeros(2)
        with pytest.raises(ShapeError):
            Network(net.cardinalities, net.embedding_dims, net.hidden_sizes, params=params)

    def test_unknown_setting(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_mapping({"dropout": 0.5})


class TestForward:
    def test_outputs_in_unit_interval(self, small_schema):
        net = build(small_schema)
        out = net.forward(random_codes(small_schema, 50))
        assert out.shape == (50,)
        assert np.all((out > 0.0) & (out < 1.0))

    def test_single_vector_gives_scalar(self, small_schema):
        net = build(small_schema)
        x = random_codes(small_schema, 3)
        assert isinstance(forward(net, x[1]), float)
        assert forward(net, x[1]) == pytest.approx(net.forward(x)[1])

    def test_unseen_category(self, small_schema):
        net = build(small_schema)
        with pytest.raises(UnseenCategoryError) as info:
            net.forward(np.array([[8, 0, 0]]))
        assert info.value.feature == 0

    def test_unseen_fallback_uses_mean_embedding(self, small_schema):
        net = build(small_schema, unseen_fallback=True)
        fallback = net.forward(np.array([[8, 1, 0]]))
        table = net.params["embedding_0"]
        params = dict(net.params)
        params["embedding_0"] = np.vstack([table, table.mean(axis=0)])
        widened = Network([9, 5, 2], net.embedding_dims, net.hidden_sizes, params=params)
        assert_allclose(fallback, widened.forward(np.array([[8, 1, 0]])), atol=1e-15)

    def test_wrong_width(self, small_schema):
        with pytest.raises(ShapeError):
            build(small_schema).forward(np.zeros((2, 2), dtype=int))

    def test_one_hot_equivalence(self, small_schema):
        net = build(small_schema, seed=3)
        folded = net.as_one_hot()
        x = random_codes(small_schema, 1000, seed=9)
        assert folded.input_mode is InputMode.ONE_HOT
        assert np.max(np.abs(net.forward(x) - folded.forward(x))) < 1e-10

    def test_fold_needs_embed_mode(self, small_schema):
        with pytest.raises(ModeError):
            build(small_schema, InputMode.ONE_HOT).as_one_hot()


class TestEmbeddingLookup:
    def test_row_lookup(self):
        e = EmbeddingMatrix(0, np.arange(6.0).reshape(3, 2))
        assert_array_equal(embed_lookup(e, 1), [2.0, 3.0])

    def test_fallback_mean(self):
        e = EmbeddingMatrix(0, np.arange(6.0).reshape(3, 2))
        assert_array_equal(embed_lookup(e, 3, fallback_mean=True), [2.0, 3.0])

    def test_unseen(self):
        e = EmbeddingMatrix(2, np.zeros((3, 2)))
        with pytest.raises(UnseenCategoryError):
            embed_lookup(e, -1)

    def test_non_finite_weights(self):
        with pytest.raises(ShapeError):
            EmbeddingMatrix(0, np.array([[np.nan, 1.0]]))


class TestGradients:
    @pytest.mark.parametrize("mode", list(InputMode))
    def test_matches_finite_differences(self, small_schema, mode):
        net = build(small_schema, mode, seed=1)
        x = random_codes(small_schema, 24, seed=2)
        targets = np.random.default_rng(3).uniform(0.2, 0.9, size=24)
        result = grad_check(net, x, targets)
        assert result.checked > 0.9 * sum(p.size for p in net.params.values())
        assert result.max_relative_error < 1e-4

    def test_gradient_keys_mirror_parameters(self, small_schema):
        net = build(small_schema)
        grads = backward(net, random_codes(small_schema, 10), np.full(10, 0.5))
        assert set(grads) == set(net.params)
        for name, g in grads.items():
            assert g.shape == net.params[name].shape

    def test_unused_categories_get_zero_gradient(self, small_schema):
        net = build(small_schema)
        x = np.array([[0, 0, 0], [1, 1, 1]])
        grads = backward(net, x, np.array([0.3, 0.7]))
        assert_array_equal(grads["embedding_0"][2:], 0.0)

    def test_linear_network_is_exact(self, small_schema):
        net = build(small_schema, InputMode.ONE_HOT, hidden=(), seed=4)
        x = random_codes(small_schema, 6, seed=5)
        result = grad_check(net, x, np.zeros(6))
        assert result.kinks == []
        assert result.max_relative_error < 1e-8

    def test_zero_pre_activation_is_reported_as_kink(self, small_schema):
        net = build(small_schema, InputMode.ONE_HOT, hidden=(3,), seed=6)
        # quarter-step weights keep every pre-activation sum exact
        weights = np.random.default_rng(7).integers(-4, 5, size=net.params["dense_0_weight"].shape) / 4.0
        x = random_codes(small_schema, 12, seed=8)
        offsets = np.concatenate([[0], np.cumsum(small_schema.cardinalities)[:-1]])
        bias = np.full(3, 0.125)
        bias[0] = -weights[x[0] + offsets, 0].sum()
        net.params["dense_0_weight"] = weights
        net.params["dense_0_bias"] = bias
        targets = np.random.default_rng(9).uniform(0.2, 0.9, size=12)

        result = grad_check(net, x, targets)
        assert ("dense_0_bias", (0,)) in result.kinks
        for j in x[0] + offsets:
            assert ("dense_0_weight", (int(j), 0)) in result.kinks
        assert result.checked + len(result.kinks) == sum(p.size for p in net.params.values())
        assert result.max_relative_error < 1e-4

    def test_batch_pair_form(self, small_schema):
        net = build(small_schema, seed=1)
        x = random_codes(small_schema, 10, seed=2)
        targets = np.full(10, 0.4)
        assert grad_check(net, (x, targets)) == grad_check(net, x, targets)
        with pytest.raises(ShapeError):
            grad_check(net, x)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        params = {"w": np.array([1.0, 1.0])}
        state = AdamState(learning_rate=0.01)
        adam_step(state, params, {"w": np.array([3.0, -0.5])})
        assert_allclose(params["w"], [0.99, 1.01], rtol=1e-6)
        assert state.t == 1

    def test_mismatched_gradients(self):
        with pytest.raises(ShapeError):
            adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})
        with pytest.raises(ShapeError):
            adam_step(AdamState(), {"w": np.zeros(2)}, {"v": np.zeros(2)})

    def test_zero_gradient_leaves_parameters(self):
        params = {"w": np.array([0.3, -1.2, 5.0])}
        state = AdamState(learning_rate=0.1)
        for _ in range(5):
            adam_step(state, params, {"w": np.zeros(3)})
        assert_array_equal(params["w"], [0.3, -1.2, 5.0])

    def test_constant_gradient_drifts_against_its_sign(self):
        g = np.array([0.5, -2.0, 1e-3])
        params = {"w": np.zeros(3)}
        state = AdamState(learning_rate=0.01)
        trajectory = [params["w"].copy()]
        for _ in range(100):
            adam_step(state, params, {"w": g})
            trajectory.append(params["w"].copy())
        steps = np.diff(np.array(trajectory), axis=0)
        assert np.all(np.sign(steps) == -np.sign(g))
        assert_allclose(params["w"], -np.sign(g), rtol=1e-4)


class TestTraining:
    def test_loss_decreases(self, toy_dataset, small_train_config):
        transform = TargetTransform.fit(toy_dataset)
        net = train(replace(small_train_config, epochs=20), toy_dataset.schema, toy_dataset, transform)
        assert len(net.history) == 21
        assert net.history[-1] < net.history[0]
        assert net.transform is transform

    def test_memorises_small_set(self, small_schema):
        cfg = TrainConfig(epochs=500, batch_size=8, hidden_sizes=(32, 16), learning_rate=0.005, seed=0)
        grid = np.array(np.meshgrid(*[np.arange(m) for m in small_schema.cardinalities], indexing="ij"))
        x = grid.reshape(3, -1).T[np.random.default_rng(5).permutation(80)[:16]]
        targets = np.random.default_rng(6).uniform(0.3, 0.8, size=16)
        transform = TargetTransform(1000.0)
        data = Dataset(small_schema, x, transform.inverse(targets), np.full(16, "2015-01-01", dtype="datetime64[D]"))
        net = train(cfg, small_schema, data, transform)
        assert net.history[-1] < 2e-3

    def test_deterministic(self, toy_dataset, small_train_config):
        transform = TargetTransform.fit(toy_dataset)
        a = train(small_train_config, toy_dataset.schema, toy_dataset, transform)
        b = train(small_train_config, toy_dataset.schema, toy_dataset, transform)
        for name in a.params:
            assert_array_equal(a.params[name], b.params[name])

    def test_ensemble_members_use_distinct_seeds(self, toy_dataset, small_train_config):
        transform = TargetTransform.fit(toy_dataset)
        members = train_ensemble(small_train_config, toy_dataset.schema, toy_dataset, transform)
        assert len(members) == 2
        assert not np.array_equal(members[0].params["embedding_0"], members[1].params["embedding_0"])

    def test_parallel_ensemble_matches_sequential(self, toy_dataset, small_train_config):
        transform = TargetTransform.fit(toy_dataset)
        sequential = train_ensemble(small_train_config, toy_dataset.schema, toy_dataset, transform)
        parallel = train_ensemble(replace(small_train_config, n_jobs=2), toy_dataset.schema, toy_dataset, transform)
        for a, b in zip(sequential, parallel):
            assert_array_equal(a.params["output_weight"], b.params["output_weight"])

    def test_ensemble_prediction_is_inverse_of_mean(self, toy_dataset, small_train_config):
        train_set, test_set = split(toy_dataset, "shuffled", 0.2, seed=0)
        transform = TargetTransform.fit(train_set)
        members = train_ensemble(small_train_config, train_set.schema, train_set, transform)
        mean = np.mean([m.forward(test_set.x) for m in members], axis=0)
        assert_allclose(predict_ensemble(members, test_set.x, transform), transform.inverse(mean), rtol=1e-12)
        assert_allclose(ensemble_predictor(members, "transformed")(test_set.x), mean, rtol=1e-12)
        assert_allclose(ensemble_predictor(members, "sales")(test_set.x), transform.inverse(mean), rtol=1e-12)


class TestEmbeddings:
    def test_extract_copies(self, small_schema):
        net = build(small_schema)
        embs = extract_embeddings(net)
        assert [e.dim for e in embs] == [3, 2, 1]
        embs[0].weights[0, 0] = 42.0
        assert net.params["embedding_0"][0, 0] != 42.0

    def test_extract_needs_embed_mode(self, small_schema):
        with pytest.raises(ModeError):
            extract_embeddings(build(small_schema, InputMode.ONE_HOT))

    def test_average(self, small_schema):
        nets = [build(small_schema, seed=s) for s in range(3)]
        averaged = average_embeddings(nets)
        expected = np.mean([n.params["embedding_1"] for n in nets], axis=0)
        assert_allclose(averaged[1].weights, expected)

    def test_embed_dataset(self, small_schema):
        net = build(small_schema)
        embs = extract_embeddings(net)
        x = random_codes(small_schema, 12)
        out = embed_dataset(x, embs)
        assert out.shape == (12, 6)
        assert_array_equal(out[5, 3:5], embs[1].weights[x[5, 1]])

    def test_embed_dataset_unseen(self, small_schema):
        embs = extract_embeddings(build(small_schema))
        with pytest.raises(UnseenCategoryError):
            embed_dataset(np.array([[0, 5, 0]]), embs)
