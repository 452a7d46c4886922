"""Pre-allocated reusable buffer pool.

All per-frame working memory is acquired from a pool sized at startup, so
steady-state frames perform zero new allocations; the pool exposes an
allocation counter and high-water marks to make that checkable.
"""

from __future__ import annotations

import numpy as np


class BufferPool:
    def __init__(self) -> None:
        self._arrays: dict[str, np.ndarray] = {}
        self.allocations = 0
        self.high_water: dict[str, tuple[int, ...]] = {}

    def reserve(self, name: str, shape: tuple[int, ...], dtype) -> None:
        """Pre-size a buffer so later acquires of <= shape are allocation-free."""
        self._acquire_storage(name, tuple(shape), np.dtype(dtype))

    def _acquire_storage(self, name: str, shape: tuple[int, ...], dtype: np.dtype) -> np.ndarray:
        arr = self._arrays.get(name)
        if (
            arr is None
            or arr.dtype != dtype
            or arr.ndim != len(shape)
            or any(c < s for c, s in zip(arr.shape, shape))
        ):
            capacity = shape if arr is None or arr.dtype != dtype or arr.ndim != len(shape) \
                else tuple(max(c, s) for c, s in zip(arr.shape, shape))
            arr = np.empty(capacity, dtype=dtype)
            self._arrays[name] = arr
            self.allocations += 1
        return arr

    def acquire(self, name: str, shape: tuple[int, ...], dtype) -> np.ndarray:
        """A view of the named buffer with the requested shape.

        The view aliases pooled storage: it is valid until the same name is
        acquired again with incompatible capacity, and its contents are
        whatever the previous user left behind.
        """
        shape = tuple(int(s) for s in shape)
        dtype = np.dtype(dtype)
        arr = self._acquire_storage(name, shape, dtype)
        prev = self.high_water.get(name)
        if prev is None or any(s > p for s, p in zip(shape, prev)):
            self.high_water[name] = shape if prev is None else \
                tuple(max(s, p) for s, p in zip(shape, prev))
        return arr[tuple(slice(0, s) for s in shape)]

    def nbytes(self) -> int:
        return sum(a.nbytes for a in self._arrays.values())
