import csv
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gdraa.errors import InvalidArgument
from gdraa.simulator import (SCALING_HEADER, ClusterSpec, EventEngine, EventKind, LinearCompute,
                             calibrated_compute, closed_form_comm_time, message_time, scaling_run,
                             simulate_iteration, write_scaling_csv)
from oracles import gdraa_comm, ps_comm, ring_comm

GB = 10**9
BIG = ClusterSpec(2, 250_000_000, 4, alpha=0.0, beta=1e9)   # 10^9 bytes of gradient


def comm(spec, collective):
    return simulate_iteration(spec, collective).comm_time


def test_message_time_examples():
    spec = ClusterSpec(2, 10)
    assert message_time(0, spec) == pytest.approx(0.7e-6, rel=1e-12)
    assert message_time(10**9, ClusterSpec(2, 10, alpha=0, beta=1e9)) == 1.0
    assert message_time(10**6, ClusterSpec(2, 10, alpha=1e-6, beta=1e9)) == pytest.approx(1.001e-3, rel=1e-12)
    assert message_time(123, spec, suppressed=True) == 0.0
    with pytest.raises(InvalidArgument):
        message_time(-1, spec)


@pytest.mark.parametrize("n,expected", [(2, 1.0), (4, 1.5), (16, 1.875), (32, 1.9375)])
def test_gdraa_bandwidth_term(n, expected):
    assert comm(BIG.with_workers(n), "gdraa") == pytest.approx(expected, abs=1e-12)


def test_gdraa_bounded_and_ps_linear():
    for n in range(1, 33):
        spec = BIG.with_workers(n)
        assert comm(spec, "gdraa") <= 2.0
        assert comm(spec, "ps") == pytest.approx(2.0 * n, rel=1e-12)
    assert comm(BIG.with_workers(16), "ps") == pytest.approx(32.0, rel=1e-12)


def test_latency_terms():
    for n in (2, 4, 16, 32):
        slow = ClusterSpec(n, 32 * 1000, 4, alpha=0.7e-6, beta=1e9)
        fast = ClusterSpec(n, 32 * 1000, 4, alpha=0.0, beta=1e9)
        assert comm(slow, "ring") - comm(fast, "ring") == pytest.approx(2 * (n - 1) * 0.7e-6, abs=1e-12)
        assert comm(slow, "gdraa") - comm(fast, "gdraa") == pytest.approx(2 * 0.7e-6, abs=1e-12)
    n16 = ClusterSpec(16, 16 * 1000, 4, alpha=0.7e-6, beta=1e9)
    n16_free = ClusterSpec(16, 16 * 1000, 4, alpha=0.0, beta=1e9)
    assert comm(n16, "ring") - comm(n16_free, "ring") == pytest.approx(2.1e-5, abs=1e-12)


@given(st.integers(1, 32), st.integers(1, 5000), st.sampled_from([2, 4, 8]),
       st.floats(0, 1e-5), st.floats(1e6, 1e11))
def test_engine_matches_closed_form_when_blocks_are_equal(n, per_block, width, alpha, beta):
    spec = ClusterSpec(n, n * per_block, width, alpha, beta)
    for collective, oracle in (("gdraa", gdraa_comm), ("ring", ring_comm), ("ps", ps_comm)):
        want = oracle(n, spec.length, width, alpha, beta)
        assert abs(comm(spec, collective) - want) <= 1e-9
        assert abs(closed_form_comm_time(spec, collective) - want) <= 1e-9


@given(st.integers(2, 32), st.integers(1, 3000))
def test_closed_form_bounds_ragged_partitions(n, length):
    spec = ClusterSpec(n, length, 4, 1e-6, 1e9)
    for collective in ("gdraa", "ring"):
        assert comm(spec, collective) <= closed_form_comm_time(spec, collective) + 1e-12


def test_gdraa_ratio_properties():
    base = comm(BIG.with_workers(2), "gdraa")
    ps1 = comm(BIG.with_workers(1), "ps")
    for n in (2, 4, 8, 16, 32):
        assert comm(BIG.with_workers(n), "gdraa") / base <= 2
        assert comm(BIG.with_workers(n), "ps") / ps1 == pytest.approx(n)


def test_alpha_zero_gdraa_and_ring_share_bandwidth_term():
    for n in (2, 8, 32):
        spec = ClusterSpec(n, n * 1000, 4, alpha=0.0, beta=1e9)
        want = 2 * spec.payload_bytes * (1 - 1 / n) / 1e9
        assert comm(spec, "gdraa") == pytest.approx(want, rel=1e-12)
        assert comm(spec, "ring") == pytest.approx(want, rel=1e-12)


def test_switch_capacity_caps_per_sender_rate():
    spec = ClusterSpec(4, 4000, 4, alpha=0.0, beta=1e9, switch_capacity=2e9)
    assert spec.link_bandwidth(4) == 5e8
    assert comm(spec, "gdraa") == pytest.approx(2 * 3 * 4000 / 5e8)
    assert ClusterSpec(4, 4000, rails=2, beta=1e9).link_bandwidth() == 2e9


def test_aggregation_time_is_optional():
    free = ClusterSpec(4, 4000, 4, 0.0, 1e9)
    costed = ClusterSpec(4, 4000, 4, 0.0, 1e9, agg_rate=1e6)
    assert comm(costed, "gdraa") - comm(free, "gdraa") == pytest.approx(4 * 1000 / 1e6)


def test_compute_is_added_before_communication():
    spec = ClusterSpec(4, 4000, 4, 0.0, 1e9, compute_model=LinearCompute(0.5, 0.25), batch=2)
    tl = simulate_iteration(spec, "gdraa")
    assert tl.compute_time == 1.25
    assert tl.makespan == pytest.approx(1.25 + 2 * 3 * 4000 / 1e9)


def test_event_log_is_totally_ordered_and_repeatable():
    spec = ClusterSpec(8, 1003, 4, 0.7e-6, 7e9)
    for collective in ("gdraa", "ring", "ps"):
        a = simulate_iteration(spec, collective).events
        b = simulate_iteration(spec, collective).events
        keys = [(e.timestamp, e.worker, e.kind) for e in a]
        assert keys == sorted(keys)
        assert [(e.timestamp, e.worker, e.kind, e.message) for e in a] == \
               [(e.timestamp, e.worker, e.kind, e.message) for e in b]
        assert {e.kind for e in a} >= {EventKind.SEND_START, EventKind.DELIVERY, EventKind.WAIT_RELEASE}


def test_engine_refuses_past_events():
    eng = EventEngine()
    seen = []
    eng.schedule(1.0, EventKind.DELIVERY, 0, action=lambda e: seen.append(e.timestamp))
    eng.schedule(0.5, EventKind.SEND_START, 1)
    assert eng.run() == 1.0
    assert [t for t, *_ in eng.trace()] == [0.5, 1.0] and seen == [1.0]
    with pytest.raises(ValueError):
        eng.schedule(0.1, EventKind.DELIVERY, 0)


def test_cluster_spec_validation():
    for bad in (dict(n_workers=0), dict(n_workers=33), dict(length=0), dict(beta=0), dict(alpha=-1)):
        args = dict(n_workers=2, length=10) | bad
        with pytest.raises(InvalidArgument):
            ClusterSpec(**args)
    with pytest.raises(InvalidArgument):
        simulate_iteration(ClusterSpec(2, 10), "tree")


# -- scaling -------------------------------------------------------------------------

def test_communication_free_scaling_is_perfect():
    spec = ClusterSpec(1, 1000, 4, alpha=0.0, beta=math.inf, compute_model=LinearCompute(1e-3), batch=8)
    rows = scaling_run(spec, [1, 2, 4, 8, 16, 32], 320)
    assert [r.speedup for r in rows] == [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]


def test_calibrated_scaling_against_ps():
    total = 100_000
    compute = calibrated_compute(4841 * 60, total, batch=32)
    spec = ClusterSpec(1, 11_000_000, 4, compute_model=compute, batch=32)
    counts = [1, 2, 4, 8, 16, 32]
    gd = scaling_run(spec, counts, total, "gdraa")
    ps = scaling_run(spec, counts, total, "ps")
    assert gd[0].sim_time_s == pytest.approx(4841 * 60)
    assert gd[0].speedup == 1.0
    times = [r.sim_time_s for r in gd]
    assert all(a >= b for a, b in zip(times, times[1:]))
    assert all(r.speedup < r.n_workers for r in gd[1:])
    assert gd[-1].speedup > ps[-1].speedup


def test_strong_scaling_splits_the_batch():
    spec = ClusterSpec(1, 1000, 4, alpha=0.0, beta=math.inf, compute_model=LinearCompute(1.0), batch=8)
    rows = scaling_run(spec, [1, 4], 10, weak=False)
    assert [r.sim_time_s for r in rows] == [80.0, 20.0]


def test_scaling_csv_header(tmp_path):
    rows = scaling_run(ClusterSpec(1, 64, compute_model=LinearCompute(1.0)), [1, 2], 4)
    path = tmp_path / "s.csv"
    write_scaling_csv(rows, path)
    lines = list(csv.reader(path.open()))
    assert tuple(lines[0]) == SCALING_HEADER == ("n_workers", "sim_time_s", "speedup", "collective")
    assert len(lines) == 3 and lines[1][0] == "1"
