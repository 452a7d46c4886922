"""256-bit binary descriptors packed as four uint64 words per row."""

from __future__ import annotations

import numpy as np

DESCRIPTOR_BITS = 256
DESCRIPTOR_WORDS = 4
DESCRIPTOR_NBYTES = 32

# popcount of every byte value, used by the vectorized distance matrix
_POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def empty_descriptors(n: int) -> np.ndarray:
    return np.zeros((n, DESCRIPTOR_WORDS), dtype=np.uint64)


def random_descriptors(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 2**64, size=(n, DESCRIPTOR_WORDS), dtype=np.uint64)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack (..., 256) 0/1 values into (..., 4) uint64 words, bit b -> word b>>6, bit b&63."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1, DESCRIPTOR_BITS)
    out = np.zeros((bits.shape[0], DESCRIPTOR_WORDS), dtype=np.uint64)
    for b in range(DESCRIPTOR_BITS):
        word, shift = b >> 6, np.uint64(b & 63)
        out[:, word] |= bits[:, b].astype(np.uint64) << shift
    return out


def unpack_bits(desc: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns (..., 256) uint8 values in {0, 1}."""
    desc = np.asarray(desc, dtype=np.uint64).reshape(-1, DESCRIPTOR_WORDS)
    out = np.empty((desc.shape[0], DESCRIPTOR_BITS), dtype=np.uint8)
    for b in range(DESCRIPTOR_BITS):
        word, shift = b >> 6, np.uint64(b & 63)
        out[:, b] = ((desc[:, word] >> shift) & np.uint64(1)).astype(np.uint8)
    return out


def complement(desc: np.ndarray) -> np.ndarray:
    return np.bitwise_not(np.asarray(desc, dtype=np.uint64))


def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    """Number of differing bits between two single descriptors, in [0, 256]."""
    x = np.bitwise_xor(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64))
    return sum(int(w).bit_count() for w in x.reshape(DESCRIPTOR_WORDS))


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs distances: (n, 4) x (m, 4) -> (n, m) int32."""
    a8 = np.ascontiguousarray(a, dtype=np.uint64).view(np.uint8).reshape(len(a), DESCRIPTOR_NBYTES)
    b8 = np.ascontiguousarray(b, dtype=np.uint64).view(np.uint8).reshape(len(b), DESCRIPTOR_NBYTES)
    xor = np.bitwise_xor(a8[:, None, :], b8[None, :, :])
    return _POPCOUNT8[xor].sum(axis=2, dtype=np.int32)
