import numpy as np
import pytest

from ppcl.learning.tensor_nn import ModelConfig
from ppcl.mpc.dealer import (Dealer, RandomnessBudget, RandomnessKey, RandomnessKind, RandomnessPool, assemble_item,
                             epoch_batch_sizes, gen_beaver, gen_cmp_tuple, gen_trunc_pair, plan_budget, plan_forward,
                             plan_train_step, read_triple_file, write_triple_file)
from ppcl.mpc.ring_fixed import RING_DTYPE, FixedPointCodec, ring_matmul
from ppcl.mpc.shares import reconstruct_bits, reconstruct_ring
from ppcl.mpc.transport import Network, PhaseTag, ProtocolError


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def test_beaver_triple_is_consistent(rng):
    triple = gen_beaver((4, 3), rng)
    a, b, c = (reconstruct_ring(t) for t in (triple.a, triple.b, triple.c))
    assert np.array_equal(c, a * b)
    assert not triple.matmul


def test_matrix_triple_is_consistent(rng):
    triple = gen_beaver((2, 3, 4), rng, matmul=True)
    a, b, c = (reconstruct_ring(t) for t in (triple.a, triple.b, triple.c))
    assert a.shape == (2, 3) and b.shape == (3, 4)
    assert np.array_equal(c, ring_matmul(a, b))


def test_truncation_pair_is_consistent(rng):
    codec = FixedPointCodec()
    pair = gen_trunc_pair((50,), rng, codec=codec)
    r_big, r_small, r_msb = (reconstruct_ring(t) for t in (pair.r_big, pair.r_small, pair.r_msb))
    assert np.array_equal(r_small, r_big // np.uint64(codec.scale))
    assert np.array_equal(r_msb, r_big >> np.uint64(63))


def test_comparison_tuple_is_consistent(rng):
    cmp = gen_cmp_tuple((6,), rng)
    r = reconstruct_ring(cmp.r)
    assert np.array_equal(reconstruct_bits(cmp.r_bits), r)
    assert np.array_equal(reconstruct_ring(cmp.mask_lsb), reconstruct_bits(cmp.mask_bits) & np.uint64(1))
    assert np.array_equal(reconstruct_bits(cmp.and_c), reconstruct_bits(cmp.and_a) & reconstruct_bits(cmp.and_b))
    assert cmp.and_a.shape == (12, 6)


def test_budget_arithmetic():
    first, second = RandomnessBudget(), RandomnessBudget()
    first.add(RandomnessKind.MUL, (2, 3), 2)
    second.add(RandomnessKind.MUL, (2, 3))
    second.add(RandomnessKind.TRUNC, (4,))
    total = first + second
    assert total.total() == 4
    assert total.total(RandomnessKind.MUL) == 3
    assert total.elements(RandomnessKind.MUL) == 18
    assert total.remaining(first) == second
    assert total.keys()[0].kind == RandomnessKind.MUL
    assert total.to_records()[1] == {'kind': 'TRUNC', 'spec': '4', 'count': 1}


def test_plan_forward_counts():
    budget = plan_forward((4, 3, 2), ('relu', 'semi_sigmoid'), 5)
    assert budget.counts[RandomnessKey(RandomnessKind.MATMUL, (5, 4, 3))] == 1
    assert budget.counts[RandomnessKey(RandomnessKind.CMP, (5, 3))] == 1
    assert budget.counts[RandomnessKey(RandomnessKind.CMP, (5, 2))] == 2
    assert budget.counts[RandomnessKey(RandomnessKind.MUL, (5, 2))] == 2


def test_plan_train_step_two_layers():
    budget = plan_train_step((4, 3, 2), ('relu', 'semi_sigmoid'), 5)
    assert budget.total(RandomnessKind.MATMUL) == 2 + 2 + 1
    assert budget.counts[RandomnessKey(RandomnessKind.MATMUL, (2, 5, 3))] == 1
    assert budget.counts[RandomnessKey(RandomnessKind.MATMUL, (5, 2, 3))] == 1
    assert budget.counts[RandomnessKey(RandomnessKind.TRUNC, (2, 3))] == 1 + 2
    assert budget.counts[RandomnessKey(RandomnessKind.TRUNC, (3,))] == 2


def test_epoch_batch_sizes():
    assert epoch_batch_sizes(70, 32) == [32, 32, 6]
    assert epoch_batch_sizes(64, 32) == [32, 32]
    assert epoch_batch_sizes(0, 32) == []


def test_plan_budget_scopes():
    arch = ModelConfig()
    assert plan_budget(arch, 7, 1, 'nc').total() == 0
    sfe = plan_budget(arch, 7, 1, 'sfe')
    assert sfe.total(RandomnessKind.MATMUL) == 14
    ctfe = plan_budget(arch, 7, 1, 'ctfe')
    assert ctfe.counts[RandomnessKey(RandomnessKind.MATMUL, (32, 784, 64))] == 7
    ltfe = plan_budget(arch, 7, 1, 'ltfe', inference_batch_sizes=[32, 8])
    assert ltfe.counts[RandomnessKey(RandomnessKind.MATMUL, (32, 128, 10))] == 7
    assert ltfe.counts[RandomnessKey(RandomnessKind.MATMUL, (8, 784, 64))] == 1
    assert sfe.elements(RandomnessKind.MATMUL) < ctfe.elements(RandomnessKind.MATMUL)


def test_plan_budget_epochs_and_partial_batches():
    arch = ModelConfig()
    two_epochs = plan_budget(arch, 0, 2, 'sfe', batch_sizes=[32, 6])
    assert two_epochs.counts[RandomnessKey(RandomnessKind.MATMUL, (6, 64, 10))] == 2
    assert two_epochs.counts[RandomnessKey(RandomnessKind.MATMUL, (32, 64, 10))] == 2


def test_offline_dealer_streams_to_pools(rng):
    net = Network(2, session_id=1)
    dealer = Dealer(net, seed=3)
    budget = RandomnessBudget()
    budget.add(RandomnessKind.MUL, (3,), 2)
    budget.add(RandomnessKind.CMP, (2,))
    dealer.run_offline(budget)
    assert dealer.offline_complete
    assert dealer.generated == budget
    pools = [RandomnessPool(party, net) for party in range(2)]
    for pool in pools:
        pool.drain()
    key = RandomnessKey(RandomnessKind.MUL, (3,))
    assert pools[1].available(key) == 2
    triple = assemble_item(key, [pool.take(key) for pool in pools], dealer.codec)
    a, b, c = (reconstruct_ring(t) for t in (triple.a, triple.b, triple.c))
    assert np.array_equal(c, a * b)
    assert net.stats.bytes_received(party=0, phase=PhaseTag.RANDOMNESS) > 0


def test_pool_exhaustion_raises():
    net = Network(2)
    pool = RandomnessPool(0, net)
    with pytest.raises(ProtocolError):
        pool.take(RandomnessKey(RandomnessKind.TRUNC, (1,)))


def test_dealer_is_deterministic():
    budget = RandomnessBudget()
    budget.add(RandomnessKind.TRUNC, (4,), 3)
    digests = []
    for _ in range(2):
        net = Network(2, session_id=9)
        Dealer(net, seed=21).run_offline(budget)
        digests.append(net.transcript_digest())
    assert digests[0] == digests[1]


def test_triple_file_round_trip(tmp_path, rng):
    key = RandomnessKey(RandomnessKind.CMP, (2, 2))
    items = [gen_cmp_tuple(key.spec, rng) for _ in range(2)]
    path = tmp_path / 'cmp_party2.triples'
    write_triple_file(str(path), [(key, items)], party=1)
    parsed = read_triple_file(str(path))
    assert [k for k, _ in parsed] == [key, key]
    assert np.array_equal(parsed[1][1][0], items[1].r.shares[1])
    assert parsed[0][1][4].shape == (12, 2, 2)
    with pytest.raises(FileNotFoundError):
        read_triple_file(str(tmp_path / 'missing.triples'))


def test_export_offline_and_load_files(tmp_path):
    net = Network(2)
    dealer = Dealer(net, seed=4)
    budget = RandomnessBudget()
    budget.add(RandomnessKind.MATMUL, (2, 3, 4))
    budget.add(RandomnessKind.TRUNC, (2, 4))
    paths = dealer.export_offline(budget, str(tmp_path))
    assert len(paths) == 4
    pools = [RandomnessPool(party, net) for party in range(2)]
    for party, pool in enumerate(pools):
        for path in paths:
            if path.endswith(f"_party{party + 1}.triples"):
                pool.load_file(path)
    key = RandomnessKey(RandomnessKind.MATMUL, (2, 3, 4))
    triple = assemble_item(key, [pool.take(key) for pool in pools], dealer.codec)
    assert triple.matmul
    a, b, c = (reconstruct_ring(t) for t in (triple.a, triple.b, triple.c))
    assert np.array_equal(c, ring_matmul(a, b))
    assert c.dtype == RING_DTYPE
