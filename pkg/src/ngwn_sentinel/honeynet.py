"""Virtual honeypots, attack-pattern capture and a sealed, tamper-evident log.

Each pattern is serialized canonically, signed with the lattice scheme and then
encrypted with the tweakable cipher using its log index as the tweak. The
signature is stored next to the ciphertext; harvesting decrypts, verifies and
reports failures instead of raising.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import bliss_sig
from .sids_irf import SignaturePattern
from .tweak_cipher import CorruptCiphertext, open_bytes, seal_bytes

LOG_MAGIC = b"HLOG"


class HoneynetError(Exception):
    pass


class UnknownProfile(HoneynetError):
    pass


class EmptySession(HoneynetError):
    pass


class BadLogFile(HoneynetError):
    pass


class SigningFailed(HoneynetError):
    pass


@dataclass(frozen=True)
class SessionEvent:
    offset_us: int
    action: str
    payload: bytes
    features: tuple[float, ...]


@dataclass
class VirtualHoneypot:
    id: str
    cloned_profile: str
    source_server: str
    active: bool = True
    session: list[SessionEvent] = field(default_factory=list)

    def record(self, event: SessionEvent) -> None:
        if not self.active:
            raise HoneynetError(f"{self.id} is retired")
        self.session.append(event)


@dataclass(frozen=True)
class AttackPattern:
    family: str
    source: str
    actions: tuple[tuple[int, str, bytes], ...]
    feature_summary: tuple[float, ...]

    def canonical(self) -> bytes:
        """Length-prefixed little-endian encoding; stable across runs."""
        def lp(b: bytes) -> bytes:
            return struct.pack("<I", len(b)) + b

        out = [lp(self.family.encode()), lp(self.source.encode()), struct.pack("<I", len(self.actions))]
        for off, code, digest in self.actions:
            out.append(struct.pack("<q", off) + lp(code.encode()) + lp(digest))
        out.append(struct.pack("<I", len(self.feature_summary)))
        out.append(np.asarray(self.feature_summary, dtype="<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_canonical(cls, data: bytes) -> "AttackPattern":
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise ValueError("truncated pattern")
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        def lp() -> bytes:
            (n,) = struct.unpack("<I", take(4))
            return take(n)

        family = lp().decode()
        source = lp().decode()
        (n_act,) = struct.unpack("<I", take(4))
        actions = []
        for _ in range(n_act):
            (off,) = struct.unpack("<q", take(8))
            actions.append((off, lp().decode(), lp()))
        (n_feat,) = struct.unpack("<I", take(4))
        feats = tuple(float(v) for v in np.frombuffer(take(8 * n_feat), dtype="<f8"))
        if pos != len(data):
            raise ValueError("trailing bytes after pattern")
        return cls(family, source, tuple(actions), feats)


@dataclass(frozen=True)
class SealedLogEntry:
    index: int
    ciphertext: bytes
    signature: bytes


@dataclass
class SealedLog:
    entries: list[SealedLogEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def next_index(self) -> int:
        return self.entries[-1].index + 1 if self.entries else 1

    def to_file(self, path: str | Path) -> None:
        parts = [LOG_MAGIC]
        for e in self.entries:
            parts += [struct.pack("<QI", e.index, len(e.ciphertext)), e.ciphertext,
                      struct.pack("<I", len(e.signature)), e.signature]
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def from_file(cls, path: str | Path) -> "SealedLog":
        data = Path(path).read_bytes()
        if data[:4] != LOG_MAGIC:
            raise BadLogFile(f"{path}: not an HLOG file")
        off, entries = 4, []
        try:
            while off < len(data):
                idx, nc = struct.unpack_from("<QI", data, off)
                off += 12
                ct = data[off:off + nc]
                off += nc
                (ns,) = struct.unpack_from("<I", data, off)
                off += 4
                sig = data[off:off + ns]
                off += ns
                if len(ct) != nc or len(sig) != ns:
                    raise BadLogFile(f"{path}: entry {idx} is truncated")
                entries.append(SealedLogEntry(idx, ct, sig))
        except struct.error as exc:
            raise BadLogFile(f"{path}: truncated entry header") from exc
        return cls(entries)


@dataclass
class Honeynet:
    """Honeypot registry plus the signing and sealing material."""

    keys: bliss_sig.KeyPair
    params: bliss_sig.SignParams
    cipher_key: bytes
    rng: np.random.Generator
    log: SealedLog = field(default_factory=SealedLog)
    honeypots: dict[str, VirtualHoneypot] = field(default_factory=dict)
    sign_attempts: int = 0

    @classmethod
    def create(cls, seed: int, params: bliss_sig.SignParams | None = None) -> "Honeynet":
        params = params or bliss_sig.SignParams()
        keys = bliss_sig.keygen(params, seed)
        cipher_key = hashlib.sha256(b"hlog" + struct.pack("<q", seed)).digest()[:16]
        return cls(keys, params, cipher_key, np.random.default_rng([seed, 7]))

    def active(self) -> list[VirtualHoneypot]:
        return [h for h in self.honeypots.values() if h.active]


def deploy_honeypot(net: Honeynet, profile: str, live_profiles: Iterable[str], source: str) -> VirtualHoneypot:
    if profile not in set(live_profiles):
        raise UnknownProfile(f"profile {profile!r} is not live in the fleet")
    hp = VirtualHoneypot(f"hp-{len(net.honeypots)}", profile, source)
    net.honeypots[hp.id] = hp
    return hp


def retire_honeypot(hp: VirtualHoneypot) -> None:
    hp.active = False


def capture(hp: VirtualHoneypot, events: Sequence[SessionEvent], family: str) -> AttackPattern:
    """Summarize a session; actions are ordered by offset, features averaged."""
    if not events:
        raise EmptySession(f"{hp.id}: no events to capture")
    ordered = sorted(events, key=lambda e: e.offset_us)
    offsets = [e.offset_us for e in ordered]
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise ValueError("session offsets must be strictly increasing")
    actions = tuple((e.offset_us, e.action, hashlib.sha256(e.payload).digest()) for e in ordered)
    summary = np.mean(np.array([e.features for e in ordered], dtype=np.float64), axis=0)
    return AttackPattern(family, hp.id, actions, tuple(float(v) for v in summary))


def seal_pattern(net: Honeynet, pattern: AttackPattern) -> SealedLogEntry:
    body = pattern.canonical()
    try:
        sig, attempts = bliss_sig.sign_counted(net.keys, net.params, body, net.rng)
    except bliss_sig.RetryLimit as exc:
        raise SigningFailed(str(exc)) from exc
    net.sign_attempts += attempts
    index = net.log.next_index()
    entry = SealedLogEntry(index, seal_bytes(net.cipher_key, index, body), sig.to_bytes())
    net.log.entries.append(entry)
    return entry


@dataclass(frozen=True)
class HarvestResult:
    patterns: tuple[tuple[int, AttackPattern], ...]
    failures: tuple[tuple[int, str], ...]

    def signature_patterns(self) -> list[SignaturePattern]:
        return [SignaturePattern(p.family, p.feature_summary, "honeypot", True, i)
                for i, p in self.patterns]


def open_entry(entry: SealedLogEntry, pub: bliss_sig.PublicKey, params: bliss_sig.SignParams,
               cipher_key: bytes) -> AttackPattern:
    try:
        body = open_bytes(cipher_key, entry.index, entry.ciphertext)
    except CorruptCiphertext as exc:
        raise HoneynetError(f"decrypt failed: {exc}") from exc
    if not bliss_sig.verify_bytes(pub, params, body, entry.signature):
        raise HoneynetError("signature rejected")
    try:
        return AttackPattern.from_canonical(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise HoneynetError(f"malformed pattern: {exc}") from exc


def harvest(log: SealedLog, pub: bliss_sig.PublicKey, params: bliss_sig.SignParams,
            cipher_key: bytes, start: int = 0) -> HarvestResult:
    ok, bad = [], []
    for entry in log.entries[start:]:
        try:
            ok.append((entry.index, open_entry(entry, pub, params, cipher_key)))
        except HoneynetError as exc:
            bad.append((entry.index, str(exc)))
    return HarvestResult(tuple(ok), tuple(bad))
