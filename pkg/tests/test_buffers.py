import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gdraa.buffers import (BlockRange, GradientBuffer, RegisteredRegion, block_size, block_view, dtype_for_width,
                           partition)
from gdraa.errors import InvalidArgument, OutOfBounds
from oracles import brute_partition

lengths = st.integers(1, 3000)
workers = st.integers(1, 32)


@pytest.mark.parametrize("length,n,expected", [
    (10, 2, [(0, 0, 5), (1, 5, 5)]),
    (7, 3, [(0, 0, 3), (1, 3, 3), (2, 6, 1)]),
    (3, 4, [(0, 0, 1), (1, 1, 1), (2, 2, 1), (3, 3, 0)]),
])
def test_partition_examples(length, n, expected):
    assert [tuple(b) for b in partition(length, n)] == expected


@pytest.mark.parametrize("length,n", [(0, 1), (-3, 2), (5, 0), (5, 33)])
def test_partition_rejects_bad_arguments(length, n):
    with pytest.raises(InvalidArgument):
        partition(length, n)


@given(lengths, workers)
def test_partition_matches_element_scan(length, n):
    assert [tuple(b) for b in partition(length, n)] == brute_partition(length, n)


@given(lengths, workers)
def test_partition_covers_range_without_overlap(length, n):
    blocks = partition(length, n)
    assert len(blocks) == n
    assert sum(b.length for b in blocks) == length
    assert [b.index for b in blocks] == list(range(n))
    offsets = [b.offset for b in blocks]
    assert offsets == sorted(offsets)
    size = block_size(length, n)
    cursor = 0
    for b in blocks:
        assert b.offset == cursor
        assert 0 <= b.length <= size
        cursor = b.stop
    assert cursor == length
    # Only trailing blocks may be short: lengths never increase.
    lens = [b.length for b in blocks]
    assert all(a >= c for a, c in zip(lens, lens[1:]))
    assert partition(length, n) == blocks


@given(lengths, workers, st.integers(0, 2**32 - 1))
def test_block_views_recompose_buffer(length, n, seed):
    data = np.random.default_rng(seed).standard_normal(length).astype(np.float32)
    buf = GradientBuffer(data)
    pieces = [buf.block(b) for b in partition(length, n)]
    assert np.array_equal(np.concatenate(pieces), data)


def test_block_view_examples_and_writes_through():
    buf = GradientBuffer(np.arange(10, dtype=np.float32))
    view = block_view(buf, BlockRange(1, 5, 5))
    assert view.tolist() == [5, 6, 7, 8, 9]
    view[:] = -1
    assert buf.elements[5:].tolist() == [-1] * 5
    seven = GradientBuffer(np.arange(7, dtype=np.float32))
    assert block_view(seven, BlockRange(2, 6, 1)).tolist() == [6]
    assert block_view(seven, BlockRange(0, 0, 0)).size == 0


@pytest.mark.parametrize("rng", [BlockRange(0, 8, 3), BlockRange(0, -1, 2), BlockRange(0, 0, 11)])
def test_block_view_out_of_bounds(rng):
    with pytest.raises(OutOfBounds):
        block_view(GradientBuffer(np.zeros(10, dtype=np.float32)), rng)


def test_gradient_buffer_validation():
    with pytest.raises(InvalidArgument):
        GradientBuffer([])
    with pytest.raises(InvalidArgument):
        GradientBuffer(np.zeros((2, 2)))
    with pytest.raises(InvalidArgument):
        dtype_for_width(3)
    bad = GradientBuffer([1.0, np.nan])
    with pytest.raises(InvalidArgument):
        bad.check_finite()
    buf = GradientBuffer([1, 2, 3], element_width=8)
    assert buf.elements.dtype == np.float64 and buf.nbytes == 24 and len(buf) == 3


def test_registered_region_is_one_allocation_with_disjoint_views():
    region = RegisteredRegion(7, 3)
    assert region.slot_size == 3
    assert region.memory.size == 7 + 3 * 3
    sb = region.send_buffer.elements
    assert np.shares_memory(sb, region.memory)
    for k in range(3):
        slot = region.receive_slot(k)
        assert slot.size == 3
        assert np.shares_memory(slot, region.memory)
        assert not np.shares_memory(slot, sb)
        for j in range(k):
            assert not np.shares_memory(slot, region.receive_slot(j))
    region.load(np.arange(7, dtype=np.float32))
    assert region.send_block(2).tolist() == [6]
    assert region.receive_slot(1, 1).size == 1
    with pytest.raises(InvalidArgument):
        region.load(np.zeros(6, dtype=np.float32))
