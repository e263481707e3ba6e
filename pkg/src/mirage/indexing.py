"""Keyed set-index derivation for the skewed tag store.

The default PRF is 12-round PRINCE (64-bit block, 128-bit key ``k0 || k1``).
Two implementations live here: a nibble-level reference that follows the
cipher description literally, and a byte-table version compiled with numba
that the cache kernels call on every access. They are cross-checked in the
test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

MASK64 = (1 << 64) - 1

SBOX = (0xB, 0xF, 0x3, 0x2, 0xA, 0xC, 0x9, 0x1, 0x6, 0x7, 0x8, 0x0, 0xE, 0x5, 0xD, 0x4)
SBOX_INV = tuple(SBOX.index(i) for i in range(16))

# output nibble i <- input nibble SHIFT_ROWS[i]
SHIFT_ROWS = (0x4, 0x9, 0xE, 0x3, 0x8, 0xD, 0x2, 0x7, 0xC, 0x1, 0x6, 0xB, 0x0, 0x5, 0xA, 0xF)
SHIFT_ROWS_INV = tuple(SHIFT_ROWS.index(i) for i in range(16))

ROUND_CONSTANTS = (
    0x0000000000000000,
    0x13198A2E03707344,
    0xA4093822299F31D0,
    0x082EFA98EC4E6C89,
    0x452821E638D01377,
    0xBE5466CF34E90C6C,
    0x7EF84F78FD955CB1,
    0x85840851F1AC43AA,
    0xC882D32F25323C54,
    0x64A51195E0E3610D,
    0xD3B5A399CA0C2399,
    0xC0AC29B7C97C50DD,
)

# row masks of the 4x4 nibble matrices that make up M'
_MPRIME_ROWS = (0x7BDE, 0xBDE7, 0xDE7B, 0xE7BD)

# block packing of (sdid, line address) into the PRF input: sdid in the top
# byte, address in the low bits (40 for the default geometry), zeros between
SDID_SHIFT = 56
ADDR_MASK = (1 << SDID_SHIFT) - 1


# ----------------------------------------------------------------------
# reference implementation (plain ints)
# ----------------------------------------------------------------------


def _sbox_layer(x: int, table) -> int:
    out = 0
    for i in range(16):
        out |= table[(x >> (4 * i)) & 0xF] << (4 * i)
    return out


def _fold_nibbles(x: int) -> int:
    return (x ^ (x >> 4) ^ (x >> 8) ^ (x >> 12)) & 0xF


def _mprime(x: int) -> int:
    out = 0
    for blk in range(4):
        hw = (x >> (16 * blk)) & 0xFFFF
        start = 0 if blk in (0, 3) else 1
        for nib in range(4):
            row = _MPRIME_ROWS[(start + 3 - nib) % 4]
            out |= _fold_nibbles(hw & row) << (16 * blk + 4 * nib)
    return out


def _shift_rows(x: int, perm) -> int:
    out = 0
    for i in range(16):
        out |= ((x >> (4 * perm[i])) & 0xF) << (4 * i)
    return out


def prince_reference(block: int, k0: int, k1: int) -> int:
    """Encrypt one 64-bit block with PRINCE, slowly and literally."""
    k0p = (((k0 >> 1) | (k0 << 63)) & MASK64) ^ (k0 >> 63)
    s = block ^ k0 ^ k1 ^ ROUND_CONSTANTS[0]
    for i in range(1, 6):
        s = _sbox_layer(s, SBOX)
        s = _shift_rows(_mprime(s), SHIFT_ROWS)
        s ^= ROUND_CONSTANTS[i] ^ k1
    s = _sbox_layer(s, SBOX)
    s = _mprime(s)
    s = _sbox_layer(s, SBOX_INV)
    for i in range(6, 11):
        s ^= ROUND_CONSTANTS[i] ^ k1
        s = _mprime(_shift_rows(s, SHIFT_ROWS_INV))
        s = _sbox_layer(s, SBOX_INV)
    s ^= ROUND_CONSTANTS[11] ^ k1
    return s ^ k0p


# ----------------------------------------------------------------------
# byte-table implementation for the kernels
# ----------------------------------------------------------------------


def _build_tables():
    sbox8 = np.array([SBOX[b & 0xF] | (SBOX[b >> 4] << 4) for b in range(256)], dtype=np.uint64)
    sinv8 = np.array([SBOX_INV[b & 0xF] | (SBOX_INV[b >> 4] << 4) for b in range(256)], dtype=np.uint64)
    fwd = np.zeros((8, 256), dtype=np.uint64)  # SR . M' . S on byte k
    mid = np.zeros((8, 256), dtype=np.uint64)  # M' . S on byte k
    inv = np.zeros((8, 256), dtype=np.uint64)  # M' . SR^-1 on byte k
    for k in range(8):
        for b in range(256):
            sb = int(sbox8[b]) << (8 * k)
            fwd[k, b] = _shift_rows(_mprime(sb), SHIFT_ROWS)
            mid[k, b] = _mprime(sb)
            inv[k, b] = _mprime(_shift_rows(b << (8 * k), SHIFT_ROWS_INV))
    rc = np.array(ROUND_CONSTANTS, dtype=np.uint64)
    return sinv8, fwd, mid, inv, rc


SINV8, T_FWD, T_MID, T_INV, RC = _build_tables()


@nb.njit(cache=True, inline="always")
def _lin8(table, x):
    out = np.uint64(0)
    for k in range(8):
        out ^= table[k, (x >> np.uint64(8 * k)) & np.uint64(0xFF)]
    return out


@nb.njit(cache=True, inline="always")
def _sinv_layer(sinv8, x):
    out = np.uint64(0)
    for k in range(8):
        out |= sinv8[(x >> np.uint64(8 * k)) & np.uint64(0xFF)] << np.uint64(8 * k)
    return out


@nb.njit(cache=True)
def prince_block(block, k0, k0p, k1, sinv8, t_fwd, t_mid, t_inv, rc):
    """PRINCE encryption using precomputed byte tables; ``k0p`` is the derived whitening key."""
    s = block ^ k0 ^ k1 ^ rc[0]
    for i in range(1, 6):
        s = _lin8(t_fwd, s) ^ rc[i] ^ k1
    s = _sinv_layer(sinv8, _lin8(t_mid, s))
    for i in range(6, 11):
        s = _sinv_layer(sinv8, _lin8(t_inv, s ^ rc[i] ^ k1))
    return s ^ rc[11] ^ k1 ^ k0p


@nb.njit(cache=True)
def encode_block(sdid, addr):
    return (np.uint64(sdid) << np.uint64(56)) | (np.uint64(addr) & np.uint64(0xFFFFFFFFFFFFFF))


@nb.njit(cache=True)
def skew_index(keys, skew, sdid, addr, set_mask, identity):
    """Set index of ``(sdid, addr)`` in ``skew``; ``keys`` rows are ``(k0, k0', k1)``."""
    if identity:
        return np.int64(np.uint64(addr) & np.uint64(set_mask))
    c = prince_block(encode_block(sdid, addr), keys[skew, 0], keys[skew, 1], keys[skew, 2],
                     SINV8, T_FWD, T_MID, T_INV, RC)
    return np.int64(c & np.uint64(set_mask))


@nb.njit(cache=True)
def _index_many(keys, skew, sdids, addrs, set_mask, identity, out):
    for i in range(addrs.shape[0]):
        out[i] = skew_index(keys, skew, sdids[i], addrs[i], set_mask, identity)


@nb.njit(cache=True)
def _prince_many(blocks, k0, k0p, k1, out):
    for i in range(blocks.shape[0]):
        out[i] = prince_block(blocks[i], k0, k0p, k1, SINV8, T_FWD, T_MID, T_INV, RC)


# ----------------------------------------------------------------------
# public surface
# ----------------------------------------------------------------------


def whitening_key(k0: int) -> int:
    return (((k0 >> 1) | (k0 << 63)) & MASK64) ^ (k0 >> 63)


def prf_block(key: int, block: int) -> int:
    """Keyed 64-bit PRF: PRINCE under the 128-bit ``key`` (``k0`` in the high half)."""
    k0, k1 = (key >> 64) & MASK64, key & MASK64
    out = np.empty(1, dtype=np.uint64)
    _prince_many(np.array([block], dtype=np.uint64), np.uint64(k0),
                 np.uint64(whitening_key(k0)), np.uint64(k1), out)
    return int(out[0])


def prf_blocks(key: int, blocks: np.ndarray) -> np.ndarray:
    k0, k1 = (key >> 64) & MASK64, key & MASK64
    blocks = np.ascontiguousarray(blocks, dtype=np.uint64)
    out = np.empty_like(blocks)
    _prince_many(blocks, np.uint64(k0), np.uint64(whitening_key(k0)), np.uint64(k1), out)
    return out


def encode(sdid: int, addr: int) -> int:
    """Pack a security-domain id (top 8 bits) and a line address (low bits)."""
    if not 0 <= sdid < 256:
        raise ValueError(f"sdid {sdid} outside [0, 256)")
    if not 0 <= addr <= ADDR_MASK:
        raise ValueError(f"line address {addr:#x} wider than {SDID_SHIFT} bits")
    return (sdid << SDID_SHIFT) | addr


@dataclass(frozen=True)
class SkewKeySet:
    """One 128-bit key per skew, expanded from a 64-bit seed."""

    keys: tuple[int, ...]

    @classmethod
    def from_seed(cls, seed: int, skews: int = 2) -> "SkewKeySet":
        ss = np.random.SeedSequence(entropy=seed & MASK64, spawn_key=(0x6B6579,))
        words = ss.generate_state(2 * skews, dtype=np.uint64)
        keys = tuple((int(words[2 * i]) << 64) | int(words[2 * i + 1]) for i in range(skews))
        if len(set(keys)) != skews:  # pragma: no cover - probability 2^-128
            raise RuntimeError("duplicate skew keys")
        return cls(keys)

    def __len__(self) -> int:
        return len(self.keys)

    def as_array(self) -> np.ndarray:
        """Kernel layout: one row ``(k0, k0', k1)`` per skew."""
        rows = []
        for key in self.keys:
            k0, k1 = key >> 64, key & MASK64
            rows.append((k0, whitening_key(k0), k1))
        return np.array(rows, dtype=np.uint64).reshape(len(self.keys), 3)


class SkewIndexer:
    """Maps ``(skew, sdid, line address)`` to a set index in ``[0, sets_per_skew)``.

    With ``identity=True`` the key is ignored and the low address bits are used
    directly; that mode only exists to model an attacker who knows the mapping.
    """

    def __init__(self, keys: SkewKeySet, sets_per_skew: int, identity: bool = False):
        if sets_per_skew < 1 or sets_per_skew & (sets_per_skew - 1):
            raise ValueError(f"sets_per_skew must be a power of two, got {sets_per_skew}")
        self.keys = keys
        self.sets_per_skew = sets_per_skew
        self.identity = identity
        self.key_array = keys.as_array()

    @property
    def set_mask(self) -> int:
        return self.sets_per_skew - 1

    def derive_index(self, skew: int, sdid: int, addr: int) -> int:
        if not 0 <= skew < len(self.keys):
            raise ValueError(f"skew {skew} out of range")
        encode(sdid, addr)  # range checks
        return int(skew_index(self.key_array, skew, np.uint8(sdid), np.uint64(addr),
                              self.set_mask, self.identity))

    def derive_indices(self, skew: int, sdids, addrs) -> np.ndarray:
        addrs = np.ascontiguousarray(addrs, dtype=np.uint64)
        sdids = np.broadcast_to(np.asarray(sdids, dtype=np.uint8), addrs.shape).copy()
        out = np.empty(addrs.shape[0], dtype=np.int64)
        _index_many(self.key_array, skew, sdids, addrs, self.set_mask, self.identity, out)
        return out


def derive_index(keys: SkewKeySet, skew: int, sdid: int, addr: int, sets_per_skew: int) -> int:
    return SkewIndexer(keys, sets_per_skew).derive_index(skew, sdid, addr)
