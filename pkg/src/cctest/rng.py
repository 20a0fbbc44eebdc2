"""Counter-based random streams.

Every replicate of every experiment owns its own stream, addressed by the
triple ``(master_seed, experiment_id, replicate_index)``.  Draws come from
the Philox4x32-10 block cipher applied to a counter that encodes the
replicate and the draw position, so any subset of replicates can be
generated in any order (or on any worker) and still yield the same numbers.

Counter layout (four 32-bit words)::

    c0  draw-block index within the replicate
    c1  purpose tag (normals, chi-square, placement, ...)
    c2  replicate index, low word
    c3  replicate index, high word

The 64-bit key is a hash of ``(master_seed, experiment_id)``.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
from scipy import special

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# purpose tags (counter word c1)
NORMAL = 0
CHISQ = 1
PLACEMENT = 2
WEIGHTS = 3

_INV_2_53 = 1.0 / 9007199254740992.0


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 block function, vectorized over counters.

    Parameters
    ----------
    counter : sequence of four uint32-valued arrays (broadcastable)
    key : pair of ints ``(k0, k1)``, each < 2**32

    Returns
    -------
    tuple of four uint64 arrays holding 32-bit outputs.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            lo1,
            hi0 ^ c3 ^ np.uint64(k1),
            lo0,
        )
    return c0, c1, c2, c3


def derive_key(master_seed: int, experiment_id: int) -> tuple[int, int]:
    """Hash ``(master_seed, experiment_id)`` into a Philox key."""
    raw = struct.pack(
        "<QQ", int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(experiment_id) & 0xFFFFFFFFFFFFFFFF
    )
    digest = hashlib.blake2b(raw, digest_size=8, person=b"cctest-key").digest()
    k0, k1 = struct.unpack("<II", digest)
    return k0, k1


def sub_experiment(experiment_id: int, *labels) -> int:
    """Derive a child experiment id from a parent id and hashable labels."""
    text = repr((int(experiment_id),) + tuple(labels)).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def uniforms(key, replicates, n: int, purpose: int = NORMAL) -> np.ndarray:
    """53-bit uniforms on the open interval (0, 1).

    Row ``i`` holds the first ``n`` draws of replicate ``replicates[i]``
    under ``purpose``; the values do not depend on which other replicates
    are requested alongside.
    """
    reps = np.asarray(replicates, dtype=np.uint64).reshape(-1, 1)
    n_blocks = (n + 1) // 2
    j = np.arange(n_blocks, dtype=np.uint64).reshape(1, -1)
    x0, x1, x2, x3 = philox4x32(
        (j, np.uint64(purpose), reps & _MASK32, reps >> _SHIFT32), key
    )
    a = np.empty((reps.shape[0], 2 * n_blocks), dtype=np.float64)
    # (hi 27 bits, lo 26 bits) -> 53-bit integer, then shift off zero
    a[:, 0::2] = (x0 >> np.uint64(5)).astype(np.float64) * 67108864.0 + (
        x1 >> np.uint64(6)
    ).astype(np.float64)
    a[:, 1::2] = (x2 >> np.uint64(5)).astype(np.float64) * 67108864.0 + (
        x3 >> np.uint64(6)
    ).astype(np.float64)
    a = a[:, :n]
    a += 0.5
    a *= _INV_2_53
    return a


def normals(key, replicates, n: int, purpose: int = NORMAL) -> np.ndarray:
    """Standard normal draws by inversion of :func:`uniforms`."""
    return special.ndtri(uniforms(key, replicates, n, purpose))


def chisquare(key, replicates, nu: float, purpose: int = CHISQ) -> np.ndarray:
    """One chi-square(nu) draw per replicate, by inversion."""
    u = uniforms(key, replicates, 1, purpose)[:, 0]
    return 2.0 * special.gammaincinv(0.5 * nu, u)


@dataclass(frozen=True)
class RngStream:
    """Descriptor of one replicate's random stream.

    The stream is a pure function of the three fields; two descriptors
    with equal fields produce identical draws.
    """

    master_seed: int
    experiment_id: int = 0
    replicate_index: int = 0

    @property
    def key(self) -> tuple[int, int]:
        return derive_key(self.master_seed, self.experiment_id)

    def uniforms(self, n: int, purpose: int = NORMAL) -> np.ndarray:
        return uniforms(self.key, [self.replicate_index], n, purpose)[0]

    def normals(self, n: int, purpose: int = NORMAL) -> np.ndarray:
        return normals(self.key, [self.replicate_index], n, purpose)[0]

    def chisquare(self, nu: float) -> float:
        return float(chisquare(self.key, [self.replicate_index], nu)[0])

    def replicate(self, index: int) -> "RngStream":
        """Same experiment, different replicate."""
        return RngStream(self.master_seed, self.experiment_id, index)
