import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gdraa.buffers import RegisteredRegion
from gdraa.collectives import (GdraaWorker, LockstepGroup, WorkerPhase, aggregate_block, allreduce,
                               gdraa_allreduce, param_server_allreduce, ring_allreduce)
from gdraa.errors import Aborted, InvalidArgument, PeerTimeout, ShapeMismatch
from gdraa.transport import LoopbackFabric, Phase
from oracles import bc_bytes, exact_mean, max_rel_error, mean64, own_len, rs_bytes

COLLECTIVES = ["gdraa", "ring", "ps"]


def seeded(n, length, seed=0, dtype=np.float32):
    rng = np.random.default_rng([seed, n, length])
    return [rng.standard_normal(length).astype(dtype) for _ in range(n)]


# -- correctness -----------------------------------------------------------------

@pytest.mark.parametrize("collective", COLLECTIVES)
def test_two_workers_hand_mean(collective):
    out, _ = allreduce([np.array([1, 2], np.float32), np.array([3, 4], np.float32)], collective)
    for o in out:
        assert o.tolist() == [2, 3]


@pytest.mark.parametrize("collective", COLLECTIVES)
def test_single_worker_is_identity(collective):
    g = np.array([1.5, -2, 7], np.float32)
    out, stats = allreduce([g], collective)
    assert np.array_equal(out[0], g)
    if collective != "ps":
        assert stats[0].bytes_sent == 0 and stats[0].data_msgs_sent == 0


@pytest.mark.parametrize("collective", COLLECTIVES)
def test_four_workers_seven_elements_match_exact_mean(collective):
    grads = seeded(4, 7, seed=1)
    out, _ = allreduce(grads, collective)
    ref = exact_mean(grads)
    for o in out:
        assert max_rel_error(o, ref) <= 1e-6


@given(st.integers(1, 32), st.integers(1, 300), st.sampled_from(COLLECTIVES), st.integers(0, 10**6))
def test_every_collective_matches_mean(n, length, collective, seed):
    grads = seeded(n, length, seed)
    out, _ = allreduce(grads, collective)
    ref = mean64(grads)
    for o in out:
        assert o.dtype == np.float32
        assert max_rel_error(o, ref) <= 1e-6
    assert all(np.array_equal(out[0], o) for o in out)


@given(st.integers(2, 16), st.integers(1, 200), st.integers(0, 10**6))
def test_gdraa_sum_order_is_ascending_rank_then_one_divide(n, length, seed):
    grads = seeded(n, length, seed)
    out, _ = allreduce(grads, "gdraa")
    acc = grads[0].astype(np.float64)
    for g in grads[1:]:
        acc = acc + g
    assert np.array_equal(out[0], (acc / n).astype(np.float32))


def test_double_precision_inputs():
    grads = seeded(5, 33, dtype=np.float64)
    out, _ = allreduce(grads, "gdraa", element_width=8)
    assert np.max(np.abs(out[0] - exact_mean(grads))) < 1e-15


def test_aggregate_block_examples():
    block, adds, muls = aggregate_block([np.array([1, 3.0]), np.array([5, 7.0])], 2)
    assert block.tolist() == [3, 5] and (adds, muls) == (2, 2)
    block, adds, muls = aggregate_block([np.zeros(4)] * 3, 3)
    assert block.tolist() == [0] * 4 and (adds, muls) == (8, 4)


# -- counted costs ----------------------------------------------------------------

@given(st.integers(1, 32), st.integers(1, 400), st.sampled_from([2, 4, 8]))
def test_phase_bytes_match_partition(n, length, width):
    dtype = {2: np.float16, 4: np.float32, 8: np.float64}[width]
    _, stats = allreduce(seeded(n, length, dtype=dtype), "gdraa", element_width=width)
    for rank, s in enumerate(stats):
        assert s.rs_bytes_sent == rs_bytes(length, n, rank, width) == s.bc_bytes_received
        assert s.bc_bytes_sent == bc_bytes(length, n, rank, width) == s.rs_bytes_received
        assert s.bytes_sent == s.rs_bytes_sent + s.bc_bytes_sent


@pytest.mark.parametrize("n,length,width,expected", [(8, 1000, 4, 3500), (4, 1024, 4, 3072), (2, 10, 8, 40)])
def test_phase_bytes_examples(n, length, width, expected):
    dtype = np.float64 if width == 8 else np.float32
    _, stats = allreduce(seeded(n, length, dtype=dtype), "gdraa", element_width=width)
    for s in stats:
        assert s.rs_bytes_sent == s.bc_bytes_sent == expected == width * length * (n - 1) // n


@given(st.integers(1, 32), st.integers(1, 400))
def test_aggregation_ops_cover_own_block(n, length):
    _, stats = allreduce(seeded(n, length), "gdraa")
    for rank, s in enumerate(stats):
        k = own_len(length, n, rank)
        assert s.agg_adds == (n - 1) * k and s.agg_muls == k
        assert s.agg_adds + s.agg_muls == n * k
    assert sum(s.agg_muls for s in stats) == length


def test_aggregation_ops_example():
    _, stats = allreduce(seeded(4, 1024), "gdraa")
    assert all((s.agg_adds, s.agg_muls) == (768, 256) for s in stats)


@given(st.integers(2, 32), st.integers(1, 300))
def test_two_synchronizations_and_message_counts(n, length):
    _, stats = allreduce(seeded(n, length), "gdraa")
    empty = sum(1 for r in range(n) if own_len(length, n, r) == 0)
    for rank, s in enumerate(stats):
        assert s.sync_waits == 2
        assert s.data_msgs_sent == 2 * (n - 1)
        assert s.arrivals == 2 * n
        mine = own_len(length, n, rank)
        # Empty blocks are never put on the wire.
        empty_others = empty - (mine == 0)
        rs_wire = (n - 1) - empty_others
        bc_wire = (n - 1) if mine else 0
        assert s.wire_msgs_sent == rs_wire + bc_wire


def test_sixteen_workers_send_thirty_messages():
    _, stats = allreduce(seeded(16, 160), "gdraa")
    assert {s.data_msgs_sent for s in stats} == {30}


def test_zero_length_slot_still_completes():
    out, stats, fab = gdraa_allreduce(seeded(4, 3))
    assert stats[3].rs_bytes_received == 0 and stats[3].sync_waits == 2
    assert not [e for e in fab.event_log() if e.receiver == 3 and e.phase == Phase.REDUCE_SCATTER]
    assert np.allclose(out[3], mean64(seeded(4, 3)))


def test_ring_counts_two_passes():
    _, stats = ring_allreduce(seeded(4, 100), 4)
    assert {s.comm_steps for s in stats} == {6}
    assert {s.sync_waits for s in stats} == {6}
    assert {s.bytes_sent for s in stats} == {2 * 3 * 25 * 4}


def test_param_server_link_carries_everything():
    outs, workers, server = param_server_allreduce(seeded(8, 1000), 4)
    assert server.bytes_received == 32000 == server.bytes_sent
    assert {w.bytes_sent for w in workers} == {4000}
    assert np.allclose(outs[0], mean64(seeded(8, 1000)))


# -- state machine ----------------------------------------------------------------

def test_own_block_copy_costs_no_wire_bytes():
    fab = LoopbackFabric(2)
    w = GdraaWorker(fab.workers[0], 2, 4)
    GdraaWorker(fab.workers[1], 2, 4)
    w.start(np.array([1, 2, 3, 4], np.float32))
    assert w.region.receive_slot(0).tolist() == [1, 2]
    assert fab.workers[1].region.receive_slot(0).tolist() == [3, 4]
    assert w.stats.rs_bytes_sent == 8
    assert w.phase == WorkerPhase.REDUCE_SCATTER_WAIT
    assert w.missing(Phase.REDUCE_SCATTER) == [1]


def test_peer_timeout_names_missing_ranks():
    fab = LoopbackFabric(3)
    w = GdraaWorker(fab.workers[0], 3, 6, timeout=0.05)
    GdraaWorker(fab.workers[1], 3, 6)
    GdraaWorker(fab.workers[2], 3, 6)
    with pytest.raises(PeerTimeout) as info:
        w.allreduce(np.ones(6, np.float32))
    assert info.value.missing == [1, 2]


def test_abort_check_interrupts_wait():
    fab = LoopbackFabric(2)
    w = GdraaWorker(fab.workers[0], 2, 4, timeout=5, abort_check=lambda: True)
    GdraaWorker(fab.workers[1], 2, 4)
    with pytest.raises(Aborted):
        w.allreduce(np.ones(4, np.float32))


def test_input_validation():
    fab = LoopbackFabric(2)
    w = GdraaWorker(fab.workers[0], 2, 4)
    with pytest.raises(ShapeMismatch):
        w.start(np.ones(5, np.float32))
    with pytest.raises(InvalidArgument):
        w.start(np.array([1, np.inf, 0, 0], np.float32))
    with pytest.raises(ShapeMismatch):
        gdraa_allreduce([np.ones(3, np.float32), np.ones(4, np.float32)])
    with pytest.raises(ValueError):
        allreduce(seeded(2, 2), "tree")


def test_threaded_workers_repeat_iterations():
    n, length, rounds = 4, 50, 5
    fab = LoopbackFabric(n, alpha=1e-6, beta=1e9)
    workers = [GdraaWorker(fab.workers[r], n, length, timeout=10) for r in range(n)]
    results = {r: [] for r in range(n)}

    def run(r):
        for it in range(rounds):
            out, stats = workers[r].allreduce(seeded(n, length, seed=it)[r])
            results[r].append((out, stats.sync_waits))

    ts = [threading.Thread(target=run, args=(r,)) for r in range(n)]
    for t in ts:
        t.start()
    for t in ts:
        t.join(20)
    for it in range(rounds):
        ref = mean64(seeded(n, length, seed=it))
        for r in range(n):
            out, syncs = results[r][it]
            assert syncs == 2 and max_rel_error(out, ref) <= 1e-6
            assert np.array_equal(out, results[0][it][0])


def test_lockstep_group_keeps_rounds_apart():
    n = 3
    group = LockstepGroup(n, "ring")
    out = {r: [] for r in range(n)}

    def run(r):
        for it in range(4):
            out[r].append(group.allreduce(r, np.full(6, r + 10 * it, np.float32))[0])

    ts = [threading.Thread(target=run, args=(r,)) for r in range(n)]
    for t in ts:
        t.start()
    for t in ts:
        t.join(10)
    for r in range(n):
        assert [o[0] for o in out[r]] == [1 + 10 * it for it in range(4)]
    with pytest.raises(InvalidArgument):
        LockstepGroup(2, "gdraa")


def test_region_views_are_used_for_the_result():
    fab = LoopbackFabric(1)
    w = GdraaWorker(fab.workers[0], 1, 3)
    out, stats = w.allreduce(np.array([1, 2, 3], np.float32))
    assert isinstance(w.region, RegisteredRegion)
    assert np.array_equal(w.region.send_buffer.elements, out)
    assert stats.data_msgs_sent == 0 and stats.bytes_sent == 0
