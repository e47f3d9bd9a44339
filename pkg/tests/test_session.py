import numpy as np
import pytest

from ppcl.mpc.dealer import Dealer, RandomnessBudget, RandomnessKind, plan_forward
from ppcl.mpc.ring_fixed import FixedPointCodec
from ppcl.mpc.session import MPCSession
from ppcl.mpc.transport import Network, ProtocolError


def _mul_budget(shape):
    budget = RandomnessBudget()
    budget.add(RandomnessKind.MUL, shape)
    budget.add(RandomnessKind.TRUNC, shape)
    return budget


def test_share_input_and_reveal():
    session = MPCSession(seed=1)
    session.prepare(RandomnessBudget())
    x = np.array([[0.5, -1.25], [3.0, 0.0]])
    t = session.share_input(x, owner=1)
    assert t.shape == (2, 2)
    np.testing.assert_allclose(session.reveal(t, to=0), x)


def test_offline_mul_consumes_the_plan():
    session = MPCSession(seed=3)
    session.prepare(_mul_budget((4,)))
    with session.network.in_stage('party1/secure_train'):
        x = session.share_input(np.array([0.5, -1.0, 2.0, 0.0]), owner=0)
        y = session.share_input(np.array([2.0, 3.0, -0.25, 7.0]), owner=1)
        z = session.truncate(session.mul(x, y))
        np.testing.assert_allclose(session.reveal(z, to=0), [1.0, -3.0, -0.5, 0.0], atol=2e-5)
    assert session.budget_matches()
    assert session.stats.total_bytes('offline') > 0


def test_exhausted_offline_budget_raises():
    session = MPCSession(seed=4)
    session.prepare(_mul_budget((2,)))
    x = session.share_input(np.ones(2), owner=0)
    session.mul(x, x)
    with pytest.raises(ProtocolError):
        session.mul(x, x)


def test_sharing_before_offline_phase_is_refused():
    session = MPCSession(seed=5)
    with pytest.raises(AssertionError):
        session.share_input(np.ones(2), owner=0)


def test_on_demand_mode_needs_no_plan():
    session = MPCSession(seed=6, randomness_mode='on_demand')
    x = session.share_input(np.array([[1.0, -2.0], [0.5, 4.0]]), owner=0)
    w = session.share_input(np.array([[2.0], [0.25]]), owner=1)
    out = session.matmul_fixed(x, w)
    np.testing.assert_allclose(session.reveal(out, to=1), [[1.5], [2.0]], atol=5e-5)
    assert session.consumed.total(RandomnessKind.MATMUL) == 1
    assert not session.budget_matches()


def test_activate_matches_plaintext():
    values = np.array([[-2.0, -0.5, 0.0, 0.25, 0.75, 1.5]])
    shape = values.shape
    session = MPCSession(seed=7)
    session.prepare(plan_forward((6, 6), ('relu',), 1) + _semi_sigmoid_budget(shape))
    assert session.planned.total(RandomnessKind.CMP) == 3
    t = session.share_input(values, owner=0)
    relu, relu_mask = session.activate(t, 'relu')
    np.testing.assert_allclose(session.reveal(relu, 0), np.maximum(values, 0))
    np.testing.assert_allclose(session.reveal(relu_mask, 0), (values > 0).astype(float))
    semi, semi_mask = session.activate(t, 'semi_sigmoid')
    np.testing.assert_allclose(session.reveal(semi, 0), np.clip(values, 0, 1))
    np.testing.assert_allclose(session.reveal(semi_mask, 0), ((values > 0) & (values < 1)).astype(float))
    with pytest.raises(ValueError):
        session.activate(t, 'tanh')


def _semi_sigmoid_budget(shape):
    budget = RandomnessBudget()
    budget.add(RandomnessKind.CMP, shape, 2)
    budget.add(RandomnessKind.MUL, shape, 2)
    return budget


def test_load_offline_from_exported_files(tmp_path):
    budget = _mul_budget((3,))
    Dealer(Network(2), FixedPointCodec(), seed=11).export_offline(budget, str(tmp_path))
    session = MPCSession(seed=8)
    session.load_offline(str(tmp_path))
    x = session.share_input(np.array([1.5, -2.0, 0.5]), owner=0)
    out = session.truncate(session.mul(x, x))
    np.testing.assert_allclose(session.reveal(out, 0), [2.25, 4.0, 0.25], atol=2e-5)
    with pytest.raises(FileNotFoundError):
        MPCSession().load_offline(str(tmp_path / 'empty'))


def test_unknown_randomness_mode():
    with pytest.raises(ValueError):
        MPCSession(randomness_mode='lazy')


def test_identical_sessions_are_deterministic():
    def run():
        session = MPCSession(seed=9, record_transcripts=True)
        session.prepare(_mul_budget((5,)))
        x = session.share_input(np.linspace(-1, 1, 5), owner=0)
        session.reveal(session.truncate(session.mul(x, x)), to=1)
        return session
    a, b = run(), run()
    assert a.network.transcript_digest() == b.network.transcript_digest()
    assert a.stats == b.stats
