"""Counter-based random numbers (Philox4x32-10) with Box-Muller normals.

Every draw is a pure function of ``(seed, stream, role, index)``, so
generation can be split across clients or processes and still produce
bit-identical arrays on any platform.
"""

import numpy as np

_MUL0 = np.uint64(0xD2511F53)
_MUL1 = np.uint64(0xCD9E8D57)
_WEYL0 = np.uint32(0x9E3779B9)
_WEYL1 = np.uint32(0xBB67AE85)
_LO32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# matrix roles used as the fourth counter word
ROLE_MATRIX = 0
ROLE_TARGET = 1
ROLE_NOISE = 2
ROLE_FEATURES = 3
ROLE_LABELS = 4


def philox4x32(counter, key, rounds=10):
    """Apply the Philox4x32 bijection to a batch of 128-bit counters.

    Parameters
    ----------
    counter : sequence of four uint32 arrays (broadcastable)
    key : sequence of two uint32 scalars or arrays
    rounds : int
        Number of rounds; 10 is the standard strength.

    Returns
    -------
    tuple of four uint32 arrays
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint32) for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint32) for k in key)
    with np.errstate(over="ignore"):
        for _ in range(rounds):
            p0 = c0.astype(np.uint64) * _MUL0
            p1 = c2.astype(np.uint64) * _MUL1
            hi0 = (p0 >> _SHIFT32).astype(np.uint32)
            lo0 = (p0 & _LO32).astype(np.uint32)
            hi1 = (p1 >> _SHIFT32).astype(np.uint32)
            lo1 = (p1 & _LO32).astype(np.uint32)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _WEYL0
            k1 = k1 + _WEYL1
    return c0, c1, c2, c3


def _split_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.uint32(seed & 0xFFFFFFFF), np.uint32(seed >> 32)


def raw_blocks(seed, stream, role, n_blocks):
    """Return ``n_blocks`` Philox outputs as a ``(n_blocks, 4)`` uint32 array.

    Block ``j`` encrypts the counter ``(j_lo, j_hi, stream, role)`` under the
    64-bit ``seed``.
    """
    j = np.arange(n_blocks, dtype=np.uint64)
    ctr = (
        (j & _LO32).astype(np.uint32),
        (j >> _SHIFT32).astype(np.uint32),
        np.full(n_blocks, stream, dtype=np.uint32),
        np.full(n_blocks, role, dtype=np.uint32),
    )
    return np.stack(philox4x32(ctr, _split_seed(seed)), axis=1)


def _open_unit(hi, lo):
    # 53-bit mantissa, offset by half a unit so the result lies in (0, 1)
    bits = (hi.astype(np.uint64) >> np.uint64(5)) * np.uint64(1 << 26) + (
        lo.astype(np.uint64) >> np.uint64(6)
    )
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def uniforms(seed, stream, role, size):
    """Uniform doubles in (0, 1); two per Philox block."""
    n_blocks = (size + 1) // 2
    w = raw_blocks(seed, stream, role, n_blocks)
    u = np.empty(2 * n_blocks)
    u[0::2] = _open_unit(w[:, 0], w[:, 1])
    u[1::2] = _open_unit(w[:, 2], w[:, 3])
    return u[:size]


def standard_normal(seed, stream, role, shape):
    """Standard normal draws via Box-Muller on the counter stream.

    Element ``e`` of the flattened output comes from block ``e // 2``;
    even elements take the cosine branch and odd ones the sine branch.
    """
    size = int(np.prod(shape, dtype=np.int64))
    n_blocks = (size + 1) // 2
    w = raw_blocks(seed, stream, role, n_blocks)
    u1 = _open_unit(w[:, 0], w[:, 1])
    u2 = _open_unit(w[:, 2], w[:, 3])
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * n_blocks)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:size].reshape(shape)
