"""Execution backends and staging-cost accounting.

The frontend's hot stages are expressed as maps of a pure function over
independent items. The sequential backend runs them in-line; the data-parallel
backend partitions items into contiguous chunks over a worker pool. Per-item
outputs occupy disjoint slots, so both backends produce bit-identical results.

The staging ledger tracks logical bytes crossing the host/backend boundary.
"Backend-resident" is a bookkeeping state meaning a buffer is owned by the
engine for reuse; on a host-only machine the accounting still reproduces the
transfer analysis without accelerator hardware.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

SEQUENTIAL = "seq"
PARALLEL = "par"

HOST_TO_BACKEND = "h2b"
BACKEND_TO_HOST = "b2h"

# residency states
_HOST = "host"
_BACKEND = "backend"
_BOTH = "both"


@dataclass(frozen=True)
class BufferHandle:
    """Identity and logical size of a stageable buffer."""

    name: str
    nbytes: int


@dataclass(frozen=True)
class ParallelMapSpec:
    """A data-parallel map: ``fn(i)`` fills output slot i for i < item_count.

    ``inputs`` declares the read-only buffers the map consumes (used for
    staging accounting); ``output_slot_bytes`` is the logical size of one
    output slot.
    """

    item_count: int
    fn: Callable[[int], Any]
    inputs: tuple[BufferHandle, ...] = ()
    output_slot_bytes: int = 0


def chunk_bounds(n_items: int, n_chunks: int) -> list[tuple[int, int]]:
    """Contiguous, balanced partition of range(n_items) into n_chunks pieces."""
    n_chunks = max(1, min(n_chunks, n_items)) if n_items > 0 else 0
    bounds = []
    base, rem = divmod(n_items, n_chunks) if n_chunks else (0, 0)
    start = 0
    for k in range(n_chunks):
        stop = start + base + (1 if k < rem else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


class ExecutionEngine:
    """Dispatches chunked work either in-line (seq) or over a thread pool (par).

    Chunk kernels are expected to release the GIL (numba nogil or numpy) for
    the parallel backend to scale. Externally synchronous: calls return only
    after every item completed.
    """

    def __init__(self, backend: str = SEQUENTIAL, workers: int | None = None):
        if backend not in (SEQUENTIAL, PARALLEL):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        self.workers = int(workers) if workers else (os.cpu_count() or 1)
        self._pool: ThreadPoolExecutor | None = None

    def _ensure_pool(self) -> ThreadPoolExecutor:
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.workers)
        return self._pool

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self) -> "ExecutionEngine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def run_chunks(self, n_items: int, chunk_fn: Callable[[int, int], Any]) -> None:
        """Run ``chunk_fn(start, stop)`` over a contiguous partition of items."""
        if n_items <= 0:
            return
        if self.backend == SEQUENTIAL:
            chunk_fn(0, n_items)
            return
        bounds = chunk_bounds(n_items, self.workers)
        if len(bounds) == 1:
            chunk_fn(0, n_items)
            return
        pool = self._ensure_pool()
        futures = [pool.submit(chunk_fn, a, b) for a, b in bounds]
        for f in futures:
            f.result()

    def parallel_map(self, spec: ParallelMapSpec,
                     ledger: "StagingLedger | None" = None) -> list:
        """Apply ``spec.fn`` to every item; output[i] = fn(i) under both backends.

        If any item raises, the whole map fails with the error of the
        lowest-index failing item.
        """
        if ledger is not None:
            for handle in spec.inputs:
                ledger.stage(handle, HOST_TO_BACKEND)
        n = spec.item_count
        out: list = [None] * n
        if n == 0:
            return out
        if self.backend == SEQUENTIAL:
            for i in range(n):
                out[i] = spec.fn(i)
            return out

        errors: list[tuple[int, BaseException]] = []

        def run_range(start: int, stop: int) -> None:
            for i in range(start, stop):
                try:
                    out[i] = spec.fn(i)
                except BaseException as exc:  # noqa: BLE001 - propagated below
                    errors.append((i, exc))
                    return

        bounds = chunk_bounds(n, self.workers)
        pool = self._ensure_pool()
        futures = [pool.submit(run_range, a, b) for a, b in bounds]
        for f in futures:
            f.result()
        if errors:
            errors.sort(key=lambda e: e[0])
            raise errors[0][1]
        return out


class StagingLedger:
    """Per-stage cumulative host<->backend byte counters with residency states.

    A buffer already resident on the destination side contributes zero bytes
    when staged again; writes on one side invalidate the other. With
    ``residency_enabled=False`` every staging call is counted in full, which
    models a backend without cross-stage buffer reuse.
    """

    def __init__(self, residency_enabled: bool = True):
        self.residency_enabled = residency_enabled
        self._state: dict[str, str] = {}
        self._stage = "unassigned"
        self.totals: dict[str, list[int]] = {}
        self.frame_totals: dict[str, list[int]] = {}

    def begin_stage(self, name: str) -> None:
        self._stage = name

    def _bucket(self, table: dict[str, list[int]]) -> list[int]:
        return table.setdefault(self._stage, [0, 0])

    def stage(self, handle: BufferHandle, direction: str = HOST_TO_BACKEND) -> int:
        """Account a transfer of ``handle``; returns the bytes actually added."""
        if direction not in (HOST_TO_BACKEND, BACKEND_TO_HOST):
            raise ValueError(f"unknown direction {direction!r}")
        state = self._state.get(handle.name, _HOST if direction == HOST_TO_BACKEND else _BACKEND)
        dest_covered = (
            state in (_BACKEND, _BOTH)
            if direction == HOST_TO_BACKEND
            else state in (_HOST, _BOTH)
        )
        added = 0 if (self.residency_enabled and dest_covered) else handle.nbytes
        slot = 0 if direction == HOST_TO_BACKEND else 1
        self._bucket(self.totals)[slot] += added
        self._bucket(self.frame_totals)[slot] += added
        self._state[handle.name] = _BOTH
        return added

    def mark_backend(self, handle: BufferHandle) -> None:
        """Record that the backend produced/overwrote this buffer."""
        self._state[handle.name] = _BACKEND

    def mark_host(self, handle: BufferHandle) -> None:
        """Record that the host produced/overwrote this buffer."""
        self._state[handle.name] = _HOST

    def residency_state(self, name: str) -> str | None:
        return self._state.get(name)

    def begin_frame(self) -> None:
        self.frame_totals = {}

    def frame_bytes(self, stage: str) -> tuple[int, int]:
        h2b, b2h = self.frame_totals.get(stage, (0, 0))
        return h2b, b2h
