import numpy as np
import pytest

from ppcl.learning.datasets import LabeledDataset
from ppcl.learning.tensor_nn import (PLAINTEXT, Activation, CompositeModel, DenseLayer, Model, ModelConfig,
                                     SecureBackend, TrainConfig, backward, evaluate, forward, init_weights,
                                     load_checkpoint, mixed_batch_sizes, mse_loss, one_hot, reveal_model,
                                     save_checkpoint, sgd_step, share_model, stack_features, train_epochs,
                                     train_epochs_mixed)
from ppcl.mpc.dealer import plan_train_step
from ppcl.mpc.session import MPCSession

TINY = ModelConfig(layer_sizes=(6, 5, 4, 3), fe_layers=1)


@pytest.fixture
def batch():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1, size=(8, 6))
    Y = one_hot(rng.integers(0, 3, size=8), 3)
    return X, Y


def test_init_weights_shapes_and_bounds():
    model = init_weights(ModelConfig(), seed=1)
    assert model.layer_sizes == (784, 64, 64, 64, 10)
    assert model.layers[0].W.shape == (64, 784)
    assert np.all(np.abs(model.layers[0].W) <= np.sqrt(6.0 / (784 + 64)))
    assert not np.any(model.layers[-1].b)
    assert model.activations[-1] == Activation.SEMI_SIGMOID
    assert np.array_equal(init_weights(ModelConfig(), seed=1).layers[2].W, model.layers[2].W)


def test_model_config_views():
    config = ModelConfig()
    assert config.q == 64
    assert config.classifier_config().layer_sizes == (64, 10)
    assert config.classifier_config(128).layer_sizes == (128, 10)
    assert ModelConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ValueError):
        ModelConfig(layer_sizes=(4, 2), fe_layers=1)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)


def test_feature_extractor_and_classifier_split():
    model = init_weights(TINY, seed=0)
    x = np.random.default_rng(0).uniform(size=(3, 6))
    embedding = model.feature_extractor().predict_proba(x)
    assert embedding.shape == (3, 5)
    np.testing.assert_allclose(model.classifier().predict_proba(embedding), model.predict_proba(x))


def test_layer_validation():
    with pytest.raises(ValueError):
        DenseLayer(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        Model([DenseLayer(np.zeros((3, 2)), np.zeros(3)), DenseLayer(np.zeros((1, 4)), np.zeros(1))])
    with pytest.raises(ValueError):
        forward(init_weights(TINY), np.zeros((2, 5)))


def test_gradients_match_finite_differences(batch):
    X, Y = batch
    model = init_weights(TINY, seed=4)
    for layer in model.layers:
        layer.b = np.full(layer.b.shape, 0.05)
    _, cache = forward(model, X)
    grads = backward(model, cache, Y)
    h = 1e-6
    for idx, layer in enumerate(model.layers):
        for (i, j) in [(0, 0), (layer.W.shape[0] - 1, layer.W.shape[1] - 1)]:
            original = layer.W[i, j]
            layer.W[i, j] = original + h
            up = mse_loss(forward(model, X)[0], Y)
            layer.W[i, j] = original - h
            down = mse_loss(forward(model, X)[0], Y)
            layer.W[i, j] = original
            assert grads[idx][0][i, j] == pytest.approx((up - down) / (2 * h), abs=1e-6)


def test_stale_cache_is_rejected(batch):
    X, Y = batch
    model = init_weights(TINY, seed=2)
    _, cache = forward(model, X)
    sgd_step(model, backward(model, cache, Y), TrainConfig())
    assert model.version == 1
    with pytest.raises(RuntimeError):
        backward(model, cache, Y)


def test_sgd_step_uses_weight_decay(batch):
    model = init_weights(TINY, seed=2)
    before = model.layers[0].W.copy()
    grads = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in model.layers]
    sgd_step(model, grads, TrainConfig(lr=0.1, l2=0.5))
    np.testing.assert_allclose(model.layers[0].W, 0.95 * before)
    with pytest.raises(ValueError):
        sgd_step(model, grads[:1], TrainConfig())


def test_training_reduces_loss():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, size=96)
    X = np.eye(6)[labels * 2] + 0.05 * rng.uniform(size=(96, 6))
    model = init_weights(TINY, seed=1)
    model.layers[-1].b = np.full(3, 0.3)
    history = train_epochs(model, X, one_hot(labels, 3), TrainConfig(lr=0.1, l2=0.0, epochs=20, batch_size=8))
    assert len(history) == 20
    assert history[-1] < history[0]


def test_mixed_batch_sizes():
    assert mixed_batch_sizes(70, 10, 32) == [(32, 4), (32, 4), (6, 2)]
    assert mixed_batch_sizes(64, 0, 32) == [(32, 0), (32, 0)]
    assert mixed_batch_sizes(0, 5, 32) == []
    sizes = mixed_batch_sizes(100, 37, 32)
    assert sum(own for own, _ in sizes) == 100
    assert sum(other for _, other in sizes) == 37


def test_mixed_training_runs(batch):
    X, Y = batch
    model = init_weights(TINY, seed=5)
    history = train_epochs_mixed(model, X, Y, X[:3], Y[:3], TrainConfig(epochs=2, batch_size=4))
    assert len(history) == 2
    assert model.version == 4


def test_secure_step_matches_plaintext(batch):
    X, Y = batch
    plain = init_weights(TINY, seed=6)
    config = TrainConfig(lr=0.05, l2=0.01)
    session = MPCSession(seed=2)
    session.prepare(plan_train_step(TINY.layer_sizes, TINY.activations, X.shape[0]))
    backend = SecureBackend(session)
    shared = share_model(plain, session, owner=0)
    x_s, y_s = session.share_input(X, owner=1), session.share_input(Y, owner=1)
    out_s, cache_s = forward(shared, x_s, backend)
    sgd_step(shared, backward(shared, cache_s, y_s, backend), config, backend)

    out_p, cache_p = forward(plain, X)
    sgd_step(plain, backward(plain, cache_p, Y), config)
    np.testing.assert_allclose(session.reveal(out_s, 0), out_p, atol=1e-3)
    revealed = reveal_model(shared, session, to=0)
    for secure_layer, plain_layer in zip(revealed.layers, plain.layers):
        np.testing.assert_allclose(secure_layer.W, plain_layer.W, atol=1e-3)
        np.testing.assert_allclose(secure_layer.b, plain_layer.b, atol=1e-3)
    assert session.budget_matches()


def test_secure_step_matches_plaintext_at_full_width():
    config = ModelConfig()
    rng = np.random.default_rng(11)
    X = rng.uniform(0.0, 1.0, size=(32, 784))
    Y = np.eye(10)[rng.integers(0, 10, size=32)]
    plain = init_weights(config, seed=12)
    session = MPCSession(seed=4)
    session.prepare(plan_train_step(config.layer_sizes, config.activations, 32))
    backend = SecureBackend(session)
    shared = share_model(plain, session, owner=0)
    x_s, y_s = session.share_input(X, owner=1), session.share_input(Y, owner=1)
    out_s, cache_s = forward(shared, x_s, backend)
    sgd_step(shared, backward(shared, cache_s, y_s, backend), TrainConfig(), backend)

    out_p, cache_p = forward(plain, X)
    sgd_step(plain, backward(plain, cache_p, Y), TrainConfig())
    assert np.max(np.abs(session.reveal(out_s, 0) - out_p)) <= 1e-3
    revealed = reveal_model(shared, session, to=0)
    for secure_layer, plain_layer in zip(revealed.layers, plain.layers):
        assert np.max(np.abs(secure_layer.W - plain_layer.W)) <= 1e-2
        assert np.max(np.abs(secure_layer.b - plain_layer.b)) <= 1e-2
    assert session.budget_matches()


def test_checkpoint_round_trip(tmp_path):
    model = init_weights(TINY, seed=8)
    path = str(tmp_path / 'party1.ckpt')
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.layer_sizes == model.layer_sizes
    assert loaded.fe_layers == 1 and loaded.seed == 8
    for a, b in zip(loaded.layers, model.layers):
        assert np.array_equal(a.W, b.W) and a.activation == b.activation
    with open(path, 'ab') as ckpt:
        ckpt.write(b'\x00' * 8)
    with pytest.raises(ValueError):
        load_checkpoint(path)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(str(tmp_path / 'missing.ckpt'))


def test_evaluate_reports_percentages():
    model = init_weights(ModelConfig(layer_sizes=(2, 2), fe_layers=0), seed=0)
    model.layers[0].W = np.eye(2)
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    dataset = LabeledDataset(X, np.array([0, 1, 1, 1]), 2, name='toy')
    report = evaluate(model, dataset)
    assert report.overall_accuracy == pytest.approx(75.0)
    assert report.recall[0] == pytest.approx(100.0)
    assert report.precision[0] == pytest.approx(50.0)
    assert report.accuracy[1] == pytest.approx(75.0)
    records = report.to_records('nc', 'party1')
    assert records[1]['label'] == 1 and records[1]['method'] == 'nc'


def test_composite_model_stacks_embeddings():
    first, second = init_weights(TINY, seed=1), init_weights(TINY, seed=2)
    head = init_weights(TINY.classifier_config(2 * TINY.q), seed=3)
    composite = CompositeModel([first.feature_extractor(), second.feature_extractor()], head)
    X = np.random.default_rng(1).uniform(size=(4, 6))
    embedded = composite.embed(X)
    assert embedded.shape == (4, 10)
    np.testing.assert_allclose(embedded, stack_features([first.feature_extractor().predict_proba(X),
                                                         second.feature_extractor().predict_proba(X)], PLAINTEXT))
    assert composite.predict(X).shape == (4,)
