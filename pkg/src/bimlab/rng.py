"""Counter-based random number streams (Philox 4x32-10).

Every Monte Carlo sample in this package draws from its own stream, addressed
by (master_seed, stream_id, counter).  Streams are pure functions of their
address, so results do not depend on worker count or scheduling, and replays
are bit-identical.  The same generator is implemented inside the numba kernels
(scalar form) and here (vectorized numpy form); both consume counters in the
same order.

Convention used throughout: one Philox call produces four 32-bit words.  Path
simulations spend one call per time step (four uniforms -> two Box-Muller
pairs -> three Gaussian increments, fourth normal discarded).
"""

from dataclasses import dataclass
import hashlib

import numpy as np

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = np.uint32(0x9E3779B9)
PHILOX_W1 = np.uint32(0xBB67AE85)

_U32 = np.uint64(0xFFFFFFFF)


def philox4x32(ctr: np.ndarray, key: np.ndarray, rounds: int = 10) -> np.ndarray:
    """Vectorized Philox 4x32.

    ctr: (N, 4) uint32 counters, key: (N, 2) or (2,) uint32. Returns (N, 4)
    uint32 output blocks.
    """
    c = ctr.astype(np.uint32, copy=True)
    if key.ndim == 1:
        k0 = np.full(c.shape[0], key[0], dtype=np.uint32)
        k1 = np.full(c.shape[0], key[1], dtype=np.uint32)
    else:
        k0 = key[:, 0].astype(np.uint32, copy=True)
        k1 = key[:, 1].astype(np.uint32, copy=True)
    c0, c1, c2, c3 = (c[:, 0].copy(), c[:, 1].copy(), c[:, 2].copy(), c[:, 3].copy())
    for _ in range(rounds):
        p0 = PHILOX_M0 * c0.astype(np.uint64)
        p1 = PHILOX_M1 * c2.astype(np.uint64)
        hi0 = (p0 >> np.uint64(32)).astype(np.uint32)
        lo0 = (p0 & _U32).astype(np.uint32)
        hi1 = (p1 >> np.uint64(32)).astype(np.uint32)
        lo1 = (p1 & _U32).astype(np.uint32)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + PHILOX_W0
        k1 = k1 + PHILOX_W1
    return np.stack([c0, c1, c2, c3], axis=1)


def _split64(x: int) -> tuple[np.uint32, np.uint32]:
    x = int(x) & 0xFFFFFFFFFFFFFFFF
    return np.uint32(x & 0xFFFFFFFF), np.uint32(x >> 32)


def raw_block(master_seed: int, stream_id: int, start_ctr: int, n_calls: int) -> np.ndarray:
    """(n_calls, 4) uint32 Philox outputs for counters start_ctr..+n_calls."""
    s_lo, s_hi = _split64(stream_id)
    ctr64 = (np.arange(n_calls, dtype=np.uint64) + np.uint64(start_ctr & 0xFFFFFFFFFFFFFFFF))
    ctr = np.empty((n_calls, 4), dtype=np.uint32)
    ctr[:, 0] = (ctr64 & _U32).astype(np.uint32)
    ctr[:, 1] = (ctr64 >> np.uint64(32)).astype(np.uint32)
    ctr[:, 2] = s_lo
    ctr[:, 3] = s_hi
    k_lo, k_hi = _split64(master_seed)
    key = np.array([k_lo, k_hi], dtype=np.uint32)
    return philox4x32(ctr, key)


def uniforms(master_seed: int, stream_id: int, n: int, start_ctr: int = 0) -> np.ndarray:
    """n uniforms in (0, 1), four per counter."""
    calls = (n + 3) // 4
    blk = raw_block(master_seed, stream_id, start_ctr, calls)
    u = (blk.astype(np.float64) + 0.5) * 2.0 ** -32
    return u.reshape(-1)[:n]


def normals(master_seed: int, stream_id: int, n: int, start_ctr: int = 0) -> np.ndarray:
    """n standard normals via Box-Muller, four per counter (two pairs)."""
    calls = (n + 3) // 4
    u = (raw_block(master_seed, stream_id, start_ctr, calls).astype(np.float64) + 0.5) * 2.0 ** -32
    r0 = np.sqrt(-2.0 * np.log(u[:, 0]))
    r1 = np.sqrt(-2.0 * np.log(u[:, 2]))
    a0 = 2.0 * np.pi * u[:, 1]
    a1 = 2.0 * np.pi * u[:, 3]
    out = np.empty((calls, 4))
    out[:, 0] = r0 * np.cos(a0)
    out[:, 1] = r0 * np.sin(a0)
    out[:, 2] = r1 * np.cos(a1)
    out[:, 3] = r1 * np.sin(a1)
    return out.reshape(-1)[:n]


def stream_id_for(name: str) -> int:
    """Stable 64-bit experiment id from a label."""
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream: (master_seed, stream_id) plus a counter.

    Distinct stream ids give independent streams; identical addresses replay
    bit-for-bit.  Per-sample streams are derived by xor-ing the sample index
    into the stream id.
    """

    master_seed: int
    stream_id: int = 0

    def substream(self, sample_index: int) -> "RngStream":
        return RngStream(self.master_seed, (self.stream_id ^ int(sample_index)) & 0xFFFFFFFFFFFFFFFF)

    def labeled(self, name: str) -> "RngStream":
        return RngStream(self.master_seed, (self.stream_id ^ stream_id_for(name)) & 0xFFFFFFFFFFFFFFFF)

    def uniforms(self, n: int, start_ctr: int = 0) -> np.ndarray:
        return uniforms(self.master_seed, self.stream_id, n, start_ctr)

    def normals(self, n: int, start_ctr: int = 0) -> np.ndarray:
        return normals(self.master_seed, self.stream_id, n, start_ctr)
