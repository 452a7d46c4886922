import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from trackfront.descriptors import (complement, hamming_distance,
                                    hamming_matrix, pack_bits,
                                    random_descriptors, unpack_bits)
from trackfront import kernels


def bit_loop_distance(a, b):
    """Naive per-bit counting oracle."""
    count = 0
    for w in range(4):
        x = int(a[w]) ^ int(b[w])
        for bit in range(64):
            count += (x >> bit) & 1
    return count


def test_identity_distance_zero(rng):
    d = random_descriptors(rng, 10)
    for row in d:
        assert hamming_distance(row, row) == 0


def test_complement_distance_256(rng):
    d = random_descriptors(rng, 10)
    for row in d:
        assert hamming_distance(row, complement(row)) == 256


def test_random_pairs_match_bit_loop_oracle(rng):
    a = random_descriptors(rng, 2000)
    b = random_descriptors(rng, 2000)
    for i in range(0, 2000, 7):
        assert hamming_distance(a[i], b[i]) == bit_loop_distance(a[i], b[i])


def test_bulk_pairs_match_unpack_oracle(rng):
    n = 100_000
    a = random_descriptors(rng, n)
    b = random_descriptors(rng, n)
    got = np.array([hamming_distance(a[i], b[i]) for i in range(0, n, 101)])
    idx = np.arange(0, n, 101)
    oracle = (unpack_bits(a[idx]) != unpack_bits(b[idx])).sum(axis=1)
    np.testing.assert_array_equal(got, oracle)


def test_kernel_distance_matches_host(rng):
    n = 100_000
    a = random_descriptors(rng, n)
    b = random_descriptors(rng, n)
    out = np.empty(n, dtype=np.int64)
    kernels.hamming_pairs_kernel(a, b, out, 0, n)
    oracle = (unpack_bits(a) != unpack_bits(b)).sum(axis=1)
    np.testing.assert_array_equal(out, oracle)


def test_pack_unpack_round_trip(rng):
    bits = (rng.random((50, 256)) < 0.5).astype(np.uint8)
    np.testing.assert_array_equal(unpack_bits(pack_bits(bits)), bits)


def test_hamming_matrix(rng):
    a = random_descriptors(rng, 20)
    b = random_descriptors(rng, 30)
    mat = hamming_matrix(a, b)
    assert mat.shape == (20, 30)
    for i in (0, 7, 19):
        for j in (0, 11, 29):
            assert mat[i, j] == hamming_distance(a[i], b[j])


def test_symmetry_and_bounds(rng):
    a = random_descriptors(rng, 100)
    b = random_descriptors(rng, 100)
    for i in range(100):
        d1 = hamming_distance(a[i], b[i])
        d2 = hamming_distance(b[i], a[i])
        assert d1 == d2
        assert 0 <= d1 <= 256


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**256 - 1), st.integers(0, 2**256 - 1),
       st.integers(0, 2**256 - 1))
def test_triangle_inequality(x, y, z):
    def to_desc(val):
        return np.array([(val >> (64 * w)) & ((1 << 64) - 1) for w in range(4)],
                        dtype=np.uint64)
    a, b, c = to_desc(x), to_desc(y), to_desc(z)
    assert hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c)
