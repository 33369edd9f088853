"""Reference tweakable block cipher and a per-block-tweak message mode.

The block transform is a balanced Feistel network over two 64-bit halves. Each
round key is derived from the master key and then XORed with a rotation of the
tweak, so every round depends on the tweak. Any Feistel network is a
permutation, so decryption always inverts encryption for a fixed (key, tweak).

This is a stand-in for a standardized TBC; swap it via ``CipherProfile``-sized
callables if needed.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache


class BadLength(ValueError):
    pass


class CorruptCiphertext(ValueError):
    pass


@dataclass(frozen=True)
class CipherProfile:
    key_len: int = 16
    tweak_len: int = 16
    block_len: int = 16
    rounds: int = 10


DEFAULT_PROFILE = CipherProfile()


@lru_cache(maxsize=4096)
def _round_keys(key: bytes, rounds: int) -> tuple[bytes, ...]:
    return tuple(
        hashlib.blake2b(bytes([i]), key=key, digest_size=16, person=b"ngwn-tbc-rk").digest()
        for i in range(rounds)
    )


def _tweaked(rk: bytes, tweak: bytes, i: int) -> bytes:
    r = i % len(tweak)
    rot = tweak[r:] + tweak[:r]
    rot = (rot * (len(rk) // len(rot) + 1))[: len(rk)]
    return bytes(a ^ b for a, b in zip(rk, rot))


def _check(key: bytes, tweak: bytes, block: bytes, profile: CipherProfile) -> None:
    if len(key) != profile.key_len:
        raise BadLength(f"key must be {profile.key_len} bytes, got {len(key)}")
    if len(tweak) != profile.tweak_len:
        raise BadLength(f"tweak must be {profile.tweak_len} bytes, got {len(tweak)}")
    if len(block) != profile.block_len:
        raise BadLength(f"block must be {profile.block_len} bytes, got {len(block)}")


def _f(k: bytes, half: bytes, size: int) -> int:
    return int.from_bytes(hashlib.blake2b(half, key=k, digest_size=size).digest(), "little")


def tweak_encrypt(key: bytes, tweak: bytes, block: bytes, profile: CipherProfile = DEFAULT_PROFILE) -> bytes:
    _check(key, tweak, block, profile)
    h = profile.block_len // 2
    left = int.from_bytes(block[:h], "little")
    right = block[h:]
    for i, rk in enumerate(_round_keys(key, profile.rounds)):
        new_right = (left ^ _f(_tweaked(rk, tweak, i), right, h)).to_bytes(h, "little")
        left, right = int.from_bytes(right, "little"), new_right
    return left.to_bytes(h, "little") + right


def tweak_decrypt(key: bytes, tweak: bytes, block: bytes, profile: CipherProfile = DEFAULT_PROFILE) -> bytes:
    _check(key, tweak, block, profile)
    h = profile.block_len // 2
    left = block[:h]
    right = int.from_bytes(block[h:], "little")
    rks = _round_keys(key, profile.rounds)
    for i in range(profile.rounds - 1, -1, -1):
        prev_right = left
        prev_left = right ^ _f(_tweaked(rks[i], tweak, i), prev_right, h)
        left, right = prev_left.to_bytes(h, "little"), int.from_bytes(prev_right, "little")
    return left + right.to_bytes(h, "little")


def _block_tweak(base: int, j: int, profile: CipherProfile) -> bytes:
    raw = struct.pack("<QQ", base & (2**64 - 1), j)
    return (raw * (profile.tweak_len // len(raw) + 1))[: profile.tweak_len]


def seal_bytes(key: bytes, base_tweak: int, data: bytes, profile: CipherProfile = DEFAULT_PROFILE) -> bytes:
    """Encrypt arbitrary-length data; block j uses tweak (base_tweak, j)."""
    bl = profile.block_len
    framed = struct.pack("<I", len(data)) + data
    framed += b"\x00" * (-len(framed) % bl)
    return b"".join(
        tweak_encrypt(key, _block_tweak(base_tweak, j, profile), framed[o:o + bl], profile)
        for j, o in enumerate(range(0, len(framed), bl))
    )


def open_bytes(key: bytes, base_tweak: int, blob: bytes, profile: CipherProfile = DEFAULT_PROFILE) -> bytes:
    bl = profile.block_len
    if not blob or len(blob) % bl:
        raise CorruptCiphertext("ciphertext is not a whole number of blocks")
    plain = b"".join(
        tweak_decrypt(key, _block_tweak(base_tweak, j, profile), blob[o:o + bl], profile)
        for j, o in enumerate(range(0, len(blob), bl))
    )
    (n,) = struct.unpack_from("<I", plain)
    if n > len(plain) - 4 or any(plain[4 + n:]):
        raise CorruptCiphertext("length prefix or padding damaged")
    return plain[4:4 + n]
