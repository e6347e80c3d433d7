"""Counter-based random numbers: Philox4x32-10, vectorized over numpy arrays.

A stream is addressed by (seed, path, purpose, block); every draw is a pure
function of its address, so results do not depend on batching or worker count.
"""
from __future__ import annotations

import numpy as np

M0 = np.uint64(0xD2511F53)
M1 = np.uint64(0xCD9E8D57)
W0 = np.uint64(0x9E3779B9)
W1 = np.uint64(0xBB67AE85)
MASK = np.uint64(0xFFFFFFFF)
ROUNDS = 10

# purpose tags (fourth counter word)
BROWNIAN = 0
DEADLINE = 1
AUX = 2


def philox4x32(counter, key, rounds: int = ROUNDS) -> np.ndarray:
    """Philox4x32 block function.

    counter: (..., 4) uint32-compatible; key: (..., 2).  Returns (..., 4) uint32.
    """
    c = np.asarray(counter, dtype=np.uint64) & MASK
    k = np.asarray(key, dtype=np.uint64) & MASK
    c0, c1, c2, c3 = (c[..., i].copy() for i in range(4))
    k0 = np.broadcast_to(k[..., 0], c0.shape)
    k1 = np.broadcast_to(k[..., 1], c0.shape)
    for r in range(rounds):
        p0 = M0 * c0
        p1 = M1 * c2
        hi0, lo0 = p0 >> np.uint64(32), p0 & MASK
        hi1, lo1 = p1 >> np.uint64(32), p1 & MASK
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        if r < rounds - 1:
            k0 = (k0 + W0) & MASK
            k1 = (k1 + W1) & MASK
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def seed_key(seed: int) -> np.ndarray:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint64)


def blocks(seed: int, paths, n_blocks: int, purpose: int = BROWNIAN, start: int = 0) -> np.ndarray:
    """Raw words for ``paths`` x ``n_blocks`` blocks; shape (n_paths, 4 n_blocks) uint32."""
    paths = np.asarray(paths, dtype=np.uint64).reshape(-1)
    b = np.arange(start, start + n_blocks, dtype=np.uint64)
    ctr = np.empty((len(paths), n_blocks, 4), dtype=np.uint64)
    ctr[..., 0] = b[None, :]
    ctr[..., 1] = (paths & MASK)[:, None]
    ctr[..., 2] = (paths >> np.uint64(32))[:, None]
    ctr[..., 3] = np.uint64(purpose)
    return philox4x32(ctr, seed_key(seed)).reshape(len(paths), 4 * n_blocks)


def to_unit(words: np.ndarray) -> np.ndarray:
    """uint32 words to uniforms on the open interval (0, 1)."""
    return (words.astype(np.float64) + 0.5) * 2.0 ** -32


def uniforms(seed: int, paths, n: int, purpose: int = AUX, start_block: int = 0) -> np.ndarray:
    nb = -(-n // 4)
    return to_unit(blocks(seed, paths, nb, purpose, start_block))[:, :n]


def normals(seed: int, paths, n: int, purpose: int = BROWNIAN, start_block: int = 0) -> np.ndarray:
    """Standard normals by Box-Muller, two per uniform pair; shape (n_paths, n)."""
    nb = -(-n // 4)
    u = to_unit(blocks(seed, paths, nb, purpose, start_block))
    u1, u2 = u[:, 0::2], u[:, 1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    z = np.empty_like(u)
    z[:, 0::2] = rad * np.cos(ang)
    z[:, 1::2] = rad * np.sin(ang)
    return z[:, :n]


class PathStream:
    """Normals for a fixed set of paths, drawn step-chunk by step-chunk.

    Draw k of path p is always the same number however the steps are chunked,
    provided chunks start on multiples of 4 draws.
    """

    def __init__(self, seed: int, paths, purpose: int = BROWNIAN):
        self.seed = int(seed)
        self.paths = np.asarray(paths, dtype=np.uint64).reshape(-1)
        self.purpose = purpose
        self.pos = 0

    def next(self, n: int) -> np.ndarray:
        if self.pos % 4:
            raise ValueError("chunks must start on a block boundary")
        z = normals(self.seed, self.paths, n, self.purpose, self.pos // 4)
        self.pos += -(-n // 4) * 4
        return z


def words_at(seed: int, paths, block_index, purpose: int) -> np.ndarray:
    """One block per path at per-path block indices; shape (n, 4) uint32."""
    paths = np.asarray(paths, dtype=np.uint64).reshape(-1)
    ctr = np.empty((len(paths), 4), dtype=np.uint64)
    ctr[:, 0] = np.asarray(block_index, dtype=np.uint64)
    ctr[:, 1] = paths & MASK
    ctr[:, 2] = paths >> np.uint64(32)
    ctr[:, 3] = np.uint64(purpose)
    return philox4x32(ctr, seed_key(seed))
