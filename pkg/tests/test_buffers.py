import numpy as np

from trackfront.buffers import BufferPool


def test_reserve_then_acquire_is_free():
    pool = BufferPool()
    pool.reserve("a", (100,), np.float64)
    base = pool.allocations
    view = pool.acquire("a", (50,), np.float64)
    assert view.shape == (50,)
    assert pool.allocations == base


def test_growth_counts_allocation():
    pool = BufferPool()
    pool.acquire("a", (10,), np.int32)
    n0 = pool.allocations
    pool.acquire("a", (20,), np.int32)
    assert pool.allocations == n0 + 1
    pool.acquire("a", (15,), np.int32)  # within capacity now
    assert pool.allocations == n0 + 1


def test_dtype_change_reallocates():
    pool = BufferPool()
    pool.acquire("a", (10,), np.int32)
    n0 = pool.allocations
    pool.acquire("a", (10,), np.float64)
    assert pool.allocations == n0 + 1


def test_views_alias_storage():
    pool = BufferPool()
    a = pool.acquire("buf", (8,), np.int64)
    a[:] = 7
    b = pool.acquire("buf", (4,), np.int64)
    assert (b == 7).all()


def test_high_water_marks():
    pool = BufferPool()
    pool.acquire("x", (5, 3), np.float64)
    pool.acquire("x", (9, 2), np.float64)
    assert pool.high_water["x"] == (9, 3)
