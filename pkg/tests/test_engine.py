import os
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackfront import kernels
from trackfront.engine import (BACKEND_TO_HOST, HOST_TO_BACKEND, BufferHandle,
                               ExecutionEngine, ParallelMapSpec, StagingLedger,
                               chunk_bounds)


class TestChunkBounds:
    def test_partition_is_contiguous_and_complete(self):
        for n in (0, 1, 2, 7, 100, 1001):
            for w in (1, 2, 4, 16):
                bounds = chunk_bounds(n, w)
                flat = [i for a, b in bounds for i in range(a, b)]
                assert flat == list(range(n))

    def test_balanced(self):
        bounds = chunk_bounds(10, 4)
        sizes = [b - a for a, b in bounds]
        assert max(sizes) - min(sizes) <= 1


class TestParallelMap:
    def test_empty(self):
        eng = ExecutionEngine("par", 4)
        out = eng.parallel_map(ParallelMapSpec(0, lambda i: i * i))
        assert out == []
        eng.close()

    def test_identity_both_backends(self):
        spec = ParallelMapSpec(1000, lambda i: i + 1)
        seq = ExecutionEngine("seq").parallel_map(spec)
        with ExecutionEngine("par", 4) as eng:
            par = eng.parallel_map(spec)
        assert seq == par == list(range(1, 1001))

    def test_error_is_lowest_index(self):
        def fn(i):
            if i in (700, 30, 999):
                raise ValueError(f"item {i}")
            return i

        with ExecutionEngine("par", 8) as eng:
            with pytest.raises(ValueError, match="item 30"):
                eng.parallel_map(ParallelMapSpec(1000, fn))
        with pytest.raises(ValueError, match="item 30"):
            ExecutionEngine("seq").parallel_map(ParallelMapSpec(1000, fn))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(-1000, 1000), min_size=0, max_size=200),
           st.integers(1, 7))
    def test_differential_equivalence(self, data, workers):
        arr = np.array(data, dtype=np.int64)

        def fn(i):
            return int(arr[i]) * 3 - 7

        spec = ParallelMapSpec(len(arr), fn)
        seq = ExecutionEngine("seq").parallel_map(spec)
        with ExecutionEngine("par", workers) as eng:
            par = eng.parallel_map(spec)
        assert seq == par

    def test_run_chunks_differential_on_kernel(self, rng):
        n = 10_000
        data = rng.random(n)
        out_seq = np.zeros(n)
        out_par = np.zeros(n)
        ExecutionEngine("seq").run_chunks(
            n, lambda a, b: kernels.busy_work_kernel(data, out_seq, 50, a, b))
        with ExecutionEngine("par", 4) as eng:
            eng.run_chunks(
                n, lambda a, b: kernels.busy_work_kernel(data, out_par, 50, a, b))
        assert out_seq.tobytes() == out_par.tobytes()

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError):
            ExecutionEngine("gpu")


@pytest.mark.skipif((os.cpu_count() or 1) < 4,
                    reason="speedup smoke property requires >= 4 hardware threads")
def test_throughput_smoke():
    n = 10_000
    data = np.random.default_rng(0).random(n)
    out = np.zeros(n)
    reps = 2000  # >= 1 us per item
    kernels.busy_work_kernel(data, out, reps, 0, 1)
    t0 = time.perf_counter()
    kernels.busy_work_kernel(data, out, reps, 0, n)
    seq = time.perf_counter() - t0
    with ExecutionEngine("par") as eng:
        t0 = time.perf_counter()
        eng.run_chunks(n, lambda a, b: kernels.busy_work_kernel(data, out, reps, a, b))
        par = time.perf_counter() - t0
    assert seq / par >= 2.0


class TestStagingLedger:
    def test_fresh_buffer_counts_fully(self):
        led = StagingLedger()
        led.begin_stage("stereo")
        buf = BufferHandle("pyr", 1_048_576)
        assert led.stage(buf, HOST_TO_BACKEND) == 1_048_576
        assert led.totals["stereo"][0] == 1_048_576

    def test_resident_buffer_is_free(self):
        led = StagingLedger()
        led.begin_stage("stereo")
        buf = BufferHandle("pyr", 1_048_576)
        led.stage(buf, HOST_TO_BACKEND)
        assert led.stage(buf, HOST_TO_BACKEND) == 0
        assert led.totals["stereo"][0] == 1_048_576

    def test_backend_produced_buffer_is_free_to_stage(self):
        led = StagingLedger()
        led.begin_stage("stereo")
        buf = BufferHandle("pyr", 100)
        led.mark_backend(buf)
        assert led.stage(buf, HOST_TO_BACKEND) == 0

    def test_invalidation_recounts(self):
        led = StagingLedger()
        led.begin_stage("s")
        buf = BufferHandle("kps", 64)
        led.stage(buf, HOST_TO_BACKEND)
        led.mark_host(buf)  # host rewrote it
        assert led.stage(buf, HOST_TO_BACKEND) == 64

    def test_residency_disabled_counts_everything(self):
        led = StagingLedger(residency_enabled=False)
        led.begin_stage("s")
        buf = BufferHandle("pyr", 10)
        assert led.stage(buf, HOST_TO_BACKEND) == 10
        assert led.stage(buf, HOST_TO_BACKEND) == 10
        assert led.totals["s"][0] == 20

    def test_b2h_direction(self):
        led = StagingLedger()
        led.begin_stage("s")
        buf = BufferHandle("out", 256)
        led.mark_backend(buf)
        assert led.stage(buf, BACKEND_TO_HOST) == 256
        assert led.stage(buf, BACKEND_TO_HOST) == 0
        assert led.totals["s"][1] == 256

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 4), st.sampled_from(["h2b", "b2h", "inv_h", "inv_b"])),
                    max_size=60))
    def test_replay_oracle(self, script):
        """Counters must equal an independent replay of the residency rules."""
        sizes = [17, 256, 1024, 999, 5]
        led = StagingLedger()
        led.begin_stage("s")
        state = {}
        expect_h2b = expect_b2h = 0
        for buf_id, op in script:
            name = f"b{buf_id}"
            handle = BufferHandle(name, sizes[buf_id])
            if op == "h2b":
                if state.get(name, "host") not in ("backend", "both"):
                    expect_h2b += sizes[buf_id]
                state[name] = "both"
                led.stage(handle, HOST_TO_BACKEND)
            elif op == "b2h":
                if state.get(name, "backend") not in ("host", "both"):
                    expect_b2h += sizes[buf_id]
                state[name] = "both"
                led.stage(handle, BACKEND_TO_HOST)
            elif op == "inv_h":
                state[name] = "host"
                led.mark_host(handle)
            else:
                state[name] = "backend"
                led.mark_backend(handle)
        got = led.totals.get("s", [0, 0])
        assert got[0] == expect_h2b
        assert got[1] == expect_b2h

    def test_frame_totals_reset(self):
        led = StagingLedger()
        led.begin_stage("s")
        led.stage(BufferHandle("a", 10), HOST_TO_BACKEND)
        assert led.frame_bytes("s") == (10, 0)
        led.begin_frame()
        assert led.frame_bytes("s") == (0, 0)
        assert led.totals["s"][0] == 10
