import numpy as np
import pytest

from ppcl.learning.datasets import gen_synthetic
from ppcl.learning.tensor_nn import CompositeModel, ModelConfig, backward, forward, init_weights, one_hot
from ppcl.privacy.attacks import (COMPONENTS, AttackConfig, AttackerAccess, AttackFeatures, AttackModel,
                                  AttackReport, auc_from_histograms, build_features, evaluate_attack,
                                  run_privacy_experiment, train_attack)
from ppcl.utils.constants import Method


@pytest.fixture(scope='module')
def samples():
    rng = np.random.default_rng(1)
    return rng.uniform(0, 1, size=(2, 784)), np.array([3, 8])


def _fcn_composite(n_extractors):
    extractors = [init_weights(ModelConfig(), seed=s).feature_extractor() for s in range(n_extractors)]
    head = init_weights(ModelConfig().classifier_config(64 * n_extractors), seed=9)
    return CompositeModel(extractors, head)


def test_feature_widths_per_method(samples):
    X, y = samples
    ctfe = build_features(init_weights(ModelConfig(), seed=0), X, y, AttackerAccess.for_method('ctfe'))
    sfe = build_features(_fcn_composite(1), X, y, AttackerAccess.for_method('sfe'))
    ltfe = build_features(_fcn_composite(2), X, y, AttackerAccess.for_method('ltfe'))
    assert ctfe.flat().shape == (2, 59221)
    assert sfe.flat().shape == (2, 853)
    assert ltfe.flat().shape == (2, 661)
    assert ltfe.layout() == [('output', 10), ('loss', 1), ('label', 10), ('grad_classifier', 640)]
    assert ctfe.flat().dtype == np.float32
    assert len(ctfe) == 2


def test_nc_has_no_attacker_access():
    with pytest.raises(KeyError):
        AttackerAccess.for_method(Method.NC)


def test_missing_components_are_reported():
    shallow = init_weights(ModelConfig(layer_sizes=(6, 5, 4, 3), fe_layers=2), seed=0)
    with pytest.raises(ValueError):
        build_features(shallow, np.zeros((1, 6)), np.array([0]), AttackerAccess.for_method('ctfe'))


def test_per_sample_gradients_average_to_batch_gradient():
    config = ModelConfig(layer_sizes=(6, 5, 4, 3, 3), fe_layers=3)
    model = init_weights(config, seed=2)
    for layer in model.layers:
        layer.b = np.full(layer.b.shape, 0.1)
    rng = np.random.default_rng(0)
    X, y = rng.uniform(size=(5, 6)), rng.integers(0, 3, size=5)
    features = build_features(model, X, y, AttackerAccess.for_method('ctfe'))
    _, cache = forward(model, X)
    grads = backward(model, cache, one_hot(y, 3))
    np.testing.assert_allclose(features.components['grad_classifier'].mean(axis=0).reshape(3, 3), grads[3][0],
                               rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(features.components['grad_fe1'].mean(axis=0).reshape(5, 6), grads[0][0],
                               rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(features.components['loss'][:, 0],
                               np.mean((model.predict_proba(X) - one_hot(y, 3)) ** 2, axis=1), rtol=1e-5)


def test_ltfe_gradient_uses_attacker_columns(samples):
    X, y = samples
    target = _fcn_composite(2)
    first = build_features(target, X, y, AttackerAccess.for_method('ltfe', attacker=0))
    second = build_features(target, X, y, AttackerAccess.for_method('ltfe', attacker=1))
    np.testing.assert_array_equal(first.components['output'], second.components['output'])
    assert first.components['grad_classifier'].shape == second.components['grad_classifier'].shape


def test_auc_from_histograms():
    assert auc_from_histograms([0, 0, 5], [5, 0, 0]) == 1.0
    assert auc_from_histograms([5, 0, 0], [0, 0, 5]) == 0.0
    assert auc_from_histograms([2, 2], [2, 2]) == pytest.approx(0.5)
    assert auc_from_histograms([0, 4], [2, 2]) == pytest.approx(0.75)


def test_attack_report_from_scores():
    report = AttackReport.from_scores([0.9, 0.8, 0.7], [0.1, 0.2, 0.75], bins=10, label='sfe_seed0')
    assert report.auc == pytest.approx(8 / 9)
    assert report.member_hist.sum() == 3 and report.nonmember_hist.sum() == 3
    assert np.all(report.thresholds <= 1.0)
    roc = report.to_roc_frame()
    assert list(roc.columns) == ['label', 'threshold', 'tpr', 'fpr']
    assert roc['tpr'].iloc[-1] == 1.0
    hist = report.to_hist_frame()
    assert len(hist) == 10 and hist['bin_high'].iloc[-1] == 1.0
    assert auc_from_histograms(report.member_hist, report.nonmember_hist) == pytest.approx(report.auc, abs=0.1)
    with pytest.raises(ValueError):
        AttackReport.from_scores([], [0.5])


def _synthetic_features(rng, n, shift, access):
    components = {'output': rng.normal(shift, 1.0, size=(n, 3)).astype(np.float32),
                  'loss': rng.normal(-shift, 1.0, size=(n, 1)).astype(np.float32),
                  'label': np.eye(3, dtype=np.float32)[rng.integers(0, 3, size=n)],
                  'grad_classifier': rng.normal(0.0, 1.0, size=(n, 6)).astype(np.float32)}
    return AttackFeatures(components, access)


def test_attack_model_separates_shifted_features():
    rng = np.random.default_rng(4)
    access = AttackerAccess.for_method('ltfe')
    config = AttackConfig(encoder_width=8, head_sizes=(16, 8), lr=0.01, epochs=30, batch_size=32)
    members, nonmembers = _synthetic_features(rng, 200, 1.5, access), _synthetic_features(rng, 150, -1.5, access)
    attack = train_attack(members, nonmembers, seed=1, config=config)
    assert attack.history[-1] < attack.history[0]
    report = evaluate_attack(attack, _synthetic_features(rng, 100, 1.5, access),
                             _synthetic_features(rng, 100, -1.5, access))
    assert report.auc > 0.9
    probs = attack.predict_proba(members.flat())
    assert probs.shape == (200,) and np.all((probs >= 0) & (probs <= 1))


def test_train_attack_validates_inputs():
    rng = np.random.default_rng(0)
    access = AttackerAccess.for_method('ltfe')
    members = _synthetic_features(rng, 5, 0.0, access)
    empty = AttackFeatures({name: array[:0] for name, array in members.components.items()}, access)
    with pytest.raises(ValueError):
        train_attack(members, empty)
    other_layout = AttackFeatures({**members.components, 'output': np.zeros((5, 2), dtype=np.float32)}, access)
    with pytest.raises(ValueError):
        train_attack(members, other_layout)


def test_attack_model_layout_sets_encoder_count():
    model = AttackModel([('a', 3), ('b', 2)], AttackConfig(encoder_width=4, head_sizes=(5,)), seed=0)
    assert [p.shape for p in model.params] == [(3, 4), (4,), (2, 4), (4,), (8, 5), (5,), (5, 1), (1,)]


@pytest.mark.parametrize("method", ['sfe', 'ltfe'])
def test_privacy_experiment_runs(method):
    pool = gen_synthetic(240, n_features=12, n_classes=3, seed=2, n_informative=4)
    order = np.random.default_rng(1).permutation(240)
    splits = {'global': pool.subset(order[:120], 'global'), 'party2': pool.subset(order[120:], 'party2')}
    config = AttackConfig(encoder_width=8, head_sizes=(16, 8), epochs=2, batch_size=16)
    result = run_privacy_experiment(method, splits, seeds=(0, 1), target_epochs=1,
                                    model_config=ModelConfig((12, 8, 8, 8, 3)), attack_config=config,
                                    max_per_class=40)
    frame = result.auc_frame()
    assert frame['seed'].tolist() == [0, 1]
    assert set(frame['method']) == {method}
    assert 0.0 <= result.mean_auc <= 1.0
    report = result.reports[0]
    assert len(report.member_scores) == 20 and len(report.nonmember_scores) == 20
    assert report.label == f"{method}_seed0"


def test_attacker_access_grows_from_ltfe_to_ctfe(samples):
    ltfe, sfe, ctfe = (set(COMPONENTS[Method(m)]) for m in ('ltfe', 'sfe', 'ctfe'))
    assert ltfe < sfe < ctfe
    X, y = samples
    target = init_weights(ModelConfig(), seed=0)
    widths = [build_features(_fcn_composite(2), X, y, AttackerAccess.for_method('ltfe')).flat().shape[1],
              build_features(_fcn_composite(1), X, y, AttackerAccess.for_method('sfe')).flat().shape[1],
              build_features(target, X, y, AttackerAccess.for_method('ctfe')).flat().shape[1]]
    assert widths == sorted(set(widths))


def test_untrained_target_leaks_nothing():
    pool = gen_synthetic(1200, n_features=12, n_classes=3, seed=5, n_informative=4)
    order = np.random.default_rng(3).permutation(1200)
    splits = {'global': pool.subset(order[:600], 'global'), 'party2': pool.subset(order[600:], 'party2')}
    config = AttackConfig(encoder_width=8, head_sizes=(16, 8), epochs=5, batch_size=32)
    result = run_privacy_experiment('ctfe', splits, seeds=range(8), target_epochs=0,
                                    model_config=ModelConfig((12, 8, 8, 8, 3)), attack_config=config,
                                    max_per_class=250)
    assert len(result.reports[0].member_scores) == 125
    assert 0.45 <= result.mean_auc <= 0.55
