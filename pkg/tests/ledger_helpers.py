"""Fixtures shared by the ledger unit tests and the acceptance suite."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ngwn_sentinel.ledger_auth import Block, Credentials, Transaction

BYTE_FIELDS = ("tag", "encrypted_tag", "tweak", "payload_digest")


def device(i: int, mac_last: int | None = None, user: str | None = None) -> Credentials:
    mac = bytes([0x02, 0, 0, 0, i % 256, (i if mac_last is None else mac_last) % 256])
    return Credentials(puf=f"puf-{i}".encode(), device_id=f"dev-{i}", mac=mac, user_id=user)


def flip_byte(chain: list[Block], rng: np.random.Generator) -> list[Block]:
    """Copy of ``chain`` with one byte of one stored transaction flipped."""
    candidates = [(bi, ti) for bi, b in enumerate(chain) for ti in range(len(b.transactions))]
    bi, ti = candidates[int(rng.integers(len(candidates)))]
    txn = chain[bi].transactions[ti]
    fields = [f for f in BYTE_FIELDS if getattr(txn, f)] + ["key_id"]
    name = fields[int(rng.integers(len(fields)))]
    raw = bytearray(getattr(txn, name).encode() if name == "key_id" else getattr(txn, name))
    pos = int(rng.integers(len(raw)))
    raw[pos] ^= 1 << int(rng.integers(8))
    value = raw.decode("latin-1") if name == "key_id" else bytes(raw)
    txns = list(chain[bi].transactions)
    txns[ti] = replace(txn, **{name: value})
    out = list(chain)
    out[bi] = replace(chain[bi], transactions=tuple(txns))
    return out


HEADER_FIELDS = ("index", "prev_hash", "merkle_root", "validator_quorum", "timestamp")
TXN_FIELDS = BYTE_FIELDS + ("key_id", "lifetime", "timestamp", "kind")


def _flip(value, rng: np.random.Generator):
    """Flip one bit of one byte of a bytes, str or int field."""
    if isinstance(value, int):
        raw = bytearray(value.to_bytes(8, "little", signed=True))
    elif isinstance(value, str):
        raw = bytearray(value.encode("latin-1"))
    else:
        raw = bytearray(value)
    if not raw:
        return None
    pos = int(rng.integers(len(raw)))
    raw[pos] ^= 1 << int(rng.integers(8))
    if isinstance(value, int):
        return int.from_bytes(raw, "little", signed=True)
    if isinstance(value, str):
        return raw.decode("latin-1")
    return bytes(raw)


def tamper_anywhere(chain: list[Block], rng: np.random.Generator) -> tuple[list[Block], str]:
    """Flip a single byte in a random header or transaction field of a random block."""
    while True:
        bi = int(rng.integers(len(chain)))
        block = chain[bi]
        if block.transactions and rng.random() < 0.6:
            ti = int(rng.integers(len(block.transactions)))
            txn = block.transactions[ti]
            name = TXN_FIELDS[int(rng.integers(len(TXN_FIELDS)))]
            new = _flip(getattr(txn, name), rng)
            if new is None:
                continue
            txns = list(block.transactions)
            txns[ti] = replace(txn, **{name: new})
            tampered = replace(block, transactions=tuple(txns))
            where = f"block {bi} txn {ti} {name}"
        else:
            name = HEADER_FIELDS[int(rng.integers(len(HEADER_FIELDS)))]
            tampered = replace(block, **{name: _flip(getattr(block, name), rng)})
            where = f"block {bi} header {name}"
        out = list(chain)
        out[bi] = tampered
        return out, where
