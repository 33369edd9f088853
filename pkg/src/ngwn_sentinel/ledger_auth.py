"""Permissioned hash-chained ledger for device registration and tag authentication.

A device registers its credentials once and receives a symmetric key derived
from the credential digest and the ledger seed. To authenticate, it draws a
fresh random tag, encrypts it under its key with a fresh tweak and submits a
transaction. The gateway checks registration, key lifetime, replay and the
tag, then a fixed validator set votes; accepted transactions wait in a pool
until ``mine_block`` seals them under a Merkle root.

Only credential digests are stored. Times are integer microseconds.
"""
from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tweak_cipher import DEFAULT_PROFILE, CipherProfile, tweak_decrypt, tweak_encrypt

US = 1_000_000
GENESIS_PREV = bytes(32)


class LedgerError(Exception):
    pass


class AlreadyRegistered(LedgerError):
    pass


class NotRegistered(LedgerError):
    pass


class EmptyPool(LedgerError):
    pass


class BadLedgerFile(LedgerError):
    pass


class DropReason(enum.Enum):
    EXPIRED = "Expired"
    UNREGISTERED = "Unregistered"
    BAD_TAG = "BadTag"
    CONSENSUS_FAILED = "ConsensusFailed"
    REPLAY = "Replay"


@dataclass(frozen=True)
class Accepted:
    txn: "Transaction"

    @property
    def ok(self) -> bool:
        return True


@dataclass(frozen=True)
class Dropped:
    reason: DropReason

    @property
    def ok(self) -> bool:
        return False


def _lp(*parts: bytes) -> bytes:
    return b"".join(struct.pack("<I", len(p)) + p for p in parts)


@dataclass(frozen=True)
class Credentials:
    puf: bytes
    device_id: str
    mac: bytes
    user_id: str | None = None

    def __post_init__(self):
        if len(self.mac) != 6:
            raise ValueError("MAC address must be 6 bytes")
        if not self.puf:
            raise ValueError("PUF response must be non-empty")

    def digest(self) -> bytes:
        uid = b"" if self.user_id is None else b"\x01" + self.user_id.encode()
        return hashlib.sha256(_lp(self.puf, self.device_id.encode(), self.mac, uid)).digest()


@dataclass(frozen=True)
class SecretKey:
    key_id: str
    key: bytes = field(repr=False)
    issue_time: int
    lifetime: int

    def expired(self, now: int) -> bool:
        return now > self.issue_time + self.lifetime


@dataclass(frozen=True)
class AuthTag:
    tag: bytes
    encrypted: bytes
    tweak: bytes


@dataclass(frozen=True)
class Transaction:
    key_id: str
    tag: bytes
    encrypted_tag: bytes
    tweak: bytes
    lifetime: int
    timestamp: int
    payload_digest: bytes
    kind: str = "auth"

    def canonical(self) -> bytes:
        return _lp(self.kind.encode(), self.key_id.encode(), self.tag, self.encrypted_tag,
                   self.tweak, struct.pack("<qq", self.lifetime, self.timestamp),
                   self.payload_digest)

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical()).digest()

    def to_json(self) -> dict:
        return {"kind": self.kind, "key_id": self.key_id, "tag": self.tag.hex(),
                "encrypted_tag": self.encrypted_tag.hex(), "tweak": self.tweak.hex(),
                "lifetime": self.lifetime, "timestamp": self.timestamp,
                "payload_digest": self.payload_digest.hex()}

    @classmethod
    def from_json(cls, d: dict) -> "Transaction":
        return cls(d["key_id"], bytes.fromhex(d["tag"]), bytes.fromhex(d["encrypted_tag"]),
                   bytes.fromhex(d["tweak"]), int(d["lifetime"]), int(d["timestamp"]),
                   bytes.fromhex(d["payload_digest"]), d["kind"])


def merkle_root(txns) -> bytes:
    level = [t.digest() for t in txns]
    if not level:
        return hashlib.sha256(b"").digest()
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [hashlib.sha256(level[i] + level[i + 1]).digest() for i in range(0, len(level), 2)]
    return level[0]


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    merkle_root: bytes
    transactions: tuple[Transaction, ...]
    validator_quorum: int
    timestamp: int = 0

    def header(self) -> bytes:
        return _lp(struct.pack("<QqI", self.index, self.timestamp, self.validator_quorum),
                   self.prev_hash, self.merkle_root)

    def hash(self) -> bytes:
        return hashlib.sha256(self.header()).digest()

    def to_json(self) -> dict:
        return {"index": self.index, "prev_hash": self.prev_hash.hex(),
                "merkle_root": self.merkle_root.hex(), "quorum": self.validator_quorum,
                "timestamp": self.timestamp,
                "txn_digests": [t.digest().hex() for t in self.transactions],
                "transactions": [t.to_json() for t in self.transactions]}

    @classmethod
    def from_json(cls, d: dict) -> "Block":
        txns = tuple(Transaction.from_json(t) for t in d["transactions"])
        if [t.digest().hex() for t in txns] != d["txn_digests"]:
            raise BadLedgerFile(f"block {d['index']}: transaction digests do not match bodies")
        return cls(int(d["index"]), bytes.fromhex(d["prev_hash"]), bytes.fromhex(d["merkle_root"]),
                   txns, int(d["quorum"]), int(d["timestamp"]))


def genesis_block(quorum: int) -> Block:
    return Block(0, GENESIS_PREV, merkle_root(()), (), quorum, 0)


@dataclass
class Ledger:
    """Mutable ledger state: chain, registry, pending pool and replay set.

    ``faulty`` holds indices of validators that always vote no.
    """

    seed: bytes = b"ngwn-ledger"
    n_validators: int = 5
    quorum: int = 3
    key_lifetime: int = 60 * US
    profile: CipherProfile = DEFAULT_PROFILE
    faulty: frozenset[int] = frozenset()
    chain: list[Block] = field(default_factory=list)
    registry: dict[str, SecretKey] = field(default_factory=dict)
    pending: list[Transaction] = field(default_factory=list)
    seen_tags: set[tuple[str, bytes]] = field(default_factory=set)
    head_hash: bytes = b""

    def __post_init__(self):
        if not 1 <= self.quorum <= self.n_validators:
            raise ValueError("quorum must lie in [1, n_validators]")
        if self.key_lifetime <= 0:
            raise ValueError("key lifetime must be positive")
        if not self.chain:
            self.chain.append(genesis_block(self.quorum))
            self.head_hash = self.chain[0].hash()

    @property
    def height(self) -> int:
        return len(self.chain)

    def transactions(self):
        for b in self.chain:
            yield from b.transactions


def derive_key(ledger: Ledger, creds: Credentials) -> bytes:
    return hashlib.sha256(b"ngwn-key" + creds.digest() + ledger.seed).digest()[: ledger.profile.key_len]


def _registration_txn(key: SecretKey, creds: Credentials) -> Transaction:
    return Transaction(key.key_id, b"", b"", b"", key.lifetime, key.issue_time,
                       hashlib.sha256(creds.digest()).digest(), kind="register")


def register(ledger: Ledger, creds: Credentials, now: int = 0) -> SecretKey:
    key_id = creds.digest().hex()
    if key_id in ledger.registry:
        raise AlreadyRegistered(f"credentials {key_id[:12]} already registered")
    key = SecretKey(key_id, derive_key(ledger, creds), now, ledger.key_lifetime)
    ledger.registry[key_id] = key
    ledger.pending.append(_registration_txn(key, creds))
    return key


def renew_key(ledger: Ledger, creds: Credentials, now: int) -> SecretKey:
    """Reissue a registered key with a fresh lifetime window."""
    key_id = creds.digest().hex()
    if key_id not in ledger.registry:
        raise NotRegistered(key_id[:12])
    key = SecretKey(key_id, derive_key(ledger, creds), now, ledger.key_lifetime)
    ledger.registry[key_id] = key
    ledger.pending.append(_registration_txn(key, creds))
    return key


def generate_tag(key: SecretKey, rng: np.random.Generator, issued: set[bytes] | None = None,
                 profile: CipherProfile = DEFAULT_PROFILE) -> AuthTag:
    """Fresh uniform tag encrypted under ``key``. Pass ``issued`` to forbid reuse."""
    while True:
        tag = rng.bytes(profile.block_len)
        if issued is None or tag not in issued:
            break
    if issued is not None:
        issued.add(tag)
    tweak = rng.bytes(profile.tweak_len)
    return AuthTag(tag, tweak_encrypt(key.key, tweak, tag, profile), tweak)


def make_transaction(key: SecretKey, tag: AuthTag, payload: bytes, now: int) -> Transaction:
    return Transaction(key.key_id, tag.tag, tag.encrypted, tag.tweak, key.lifetime, now,
                       hashlib.sha256(payload).digest())


def _tag_valid(ledger: Ledger, key: SecretKey, txn: Transaction) -> bool:
    p = ledger.profile
    if len(txn.tag) != p.block_len or len(txn.encrypted_tag) != p.block_len or len(txn.tweak) != p.tweak_len:
        return False
    return tweak_decrypt(key.key, txn.tweak, txn.encrypted_tag, p) == txn.tag


def run_consensus(ledger: Ledger, txn: Transaction) -> int:
    """Number of yes votes; honest validators check registration and tag."""
    yes = 0
    for v in range(ledger.n_validators):
        if v in ledger.faulty:
            continue
        key = ledger.registry.get(txn.key_id)
        if key is not None and _tag_valid(ledger, key, txn):
            yes += 1
    return yes


def submit_transaction(ledger: Ledger, txn: Transaction, now: int) -> Accepted | Dropped:
    key = ledger.registry.get(txn.key_id)
    if key is None:
        return Dropped(DropReason.UNREGISTERED)
    if key.expired(now):
        return Dropped(DropReason.EXPIRED)
    if (txn.key_id, txn.tag) in ledger.seen_tags:
        return Dropped(DropReason.REPLAY)
    if not _tag_valid(ledger, key, txn):
        return Dropped(DropReason.BAD_TAG)
    if run_consensus(ledger, txn) < ledger.quorum:
        return Dropped(DropReason.CONSENSUS_FAILED)
    ledger.seen_tags.add((txn.key_id, txn.tag))
    ledger.pending.append(txn)
    return Accepted(txn)


def mine_block(ledger: Ledger, now: int = 0) -> Block:
    if not ledger.pending:
        raise EmptyPool("no pending transactions")
    txns = tuple(ledger.pending)
    block = Block(ledger.height, ledger.chain[-1].hash(), merkle_root(txns), txns, ledger.quorum, now)
    ledger.chain.append(block)
    ledger.pending.clear()
    ledger.head_hash = block.hash()
    return block


def verify_chain(chain: list[Block], head_hash: bytes | None = None) -> bool:
    """Check linkage, Merkle roots and indices; optionally pin the head hash.

    A block whose fields no longer serialize (out-of-range integers) fails.
    """
    try:
        return _verify_chain(chain, head_hash)
    except (struct.error, AttributeError, TypeError, UnicodeEncodeError):
        return False


def _verify_chain(chain: list[Block], head_hash: bytes | None) -> bool:
    if not chain or chain[0] != genesis_block(chain[0].validator_quorum):
        return False
    for i in range(1, len(chain)):
        b = chain[i]
        if b.index != i or b.prev_hash != chain[i - 1].hash() or b.merkle_root != merkle_root(b.transactions):
            return False
    return head_hash is None or chain[-1].hash() == head_hash


def export_chain(ledger: Ledger, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"head": ledger.head_hash.hex(), "height": ledger.height}) + "\n")
        for b in ledger.chain:
            fh.write(json.dumps(b.to_json(), sort_keys=True) + "\n")


def import_chain(path: str | Path) -> tuple[list[Block], bytes]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise BadLedgerFile(f"{path}: empty file")
    try:
        head = json.loads(lines[0])
        blocks = [Block.from_json(json.loads(ln)) for ln in lines[1:]]
    except (KeyError, ValueError) as exc:
        raise BadLedgerFile(f"{path}: {exc}") from exc
    if len(blocks) != head["height"]:
        raise BadLedgerFile(f"{path}: height mismatch")
    return blocks, bytes.fromhex(head["head"])
