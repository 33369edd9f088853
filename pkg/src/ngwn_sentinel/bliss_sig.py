"""Simulation-grade bimodal lattice signatures.

Keys: public ``G`` (n x m, uniform mod 2p) and ``T = G s mod 2p`` for a ternary
secret ``s``. Signing samples a rounded Gaussian ``d``, hashes ``G d mod 2p``
with the message into a challenge scalar ``f``, and answers
``S = d + (-1)^re * K_c`` with ``K_c = f s`` (centred mod 2p). Rejection
sampling with the bimodal criterion hides ``s``. Verification recomputes
``G S - (-1)^re f T = G d (mod 2p)`` and checks the hash.

Not constant time and not a production scheme.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

DIGEST_BYTES = 32


class BlissError(Exception):
    pass


class RetryLimit(BlissError):
    pass


@dataclass(frozen=True)
class SignParams:
    """Dimensions and security knobs.

    ``modulus`` is 2p. ``challenge_bound`` caps |f| after centring; by default
    it is the largest value keeping ``M * exp(-|K_c|^2 / 2 sigma^2) >= 1`` for
    every ternary secret, so the acceptance probability never exceeds 1.
    """

    n: int = 64
    m: int = 64
    modulus: int = 2048
    sigma: float = 64.0
    M: float = 3.0
    bound: float | None = None
    challenge_bound: int | None = None
    max_attempts: int = 64

    def __post_init__(self):
        if self.modulus % 2 or self.modulus < 4:
            raise ValueError("modulus 2p must be an even integer >= 4")
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        if not self.sigma > 0 or not self.M > 1:
            raise ValueError("need sigma > 0 and M > 1")
        if self.bound is None:
            object.__setattr__(self, "bound", 8.0 * self.sigma)
        if not self.bound > 0:
            raise ValueError("norm bound must be positive")
        if self.challenge_bound is None:
            kappa = int(math.floor(self.sigma * math.sqrt(2.0 * math.log(self.M) / self.m)))
            object.__setattr__(self, "challenge_bound", max(1, min(kappa, self.modulus // 2 - 1)))
        if not 1 <= self.challenge_bound < self.modulus // 2:
            raise ValueError("challenge bound must lie in [1, p)")


@dataclass(frozen=True, eq=False)
class PublicKey:
    G: np.ndarray
    T: np.ndarray

    def to_bytes(self) -> bytes:
        n, m = self.G.shape
        return (b"BPK1" + struct.pack("<II", n, m) + self.G.astype("<i4").tobytes()
                + self.T.astype("<i4").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "PublicKey":
        if data[:4] != b"BPK1":
            raise ValueError("not a public key blob")
        n, m = struct.unpack_from("<II", data, 4)
        G = np.frombuffer(data, "<i4", n * m, 12).astype(np.int64).reshape(n, m)
        T = np.frombuffer(data, "<i4", n, 12 + 4 * n * m).astype(np.int64)
        return cls(G, T)

    def __eq__(self, other):
        return isinstance(other, PublicKey) and np.array_equal(self.G, other.G) and np.array_equal(self.T, other.T)


@dataclass(frozen=True, eq=False)
class KeyPair:
    public: PublicKey
    s: np.ndarray = field(repr=False)

    @property
    def G(self) -> np.ndarray:
        return self.public.G

    @property
    def T(self) -> np.ndarray:
        return self.public.T


@dataclass(frozen=True, eq=False)
class Signature:
    S: np.ndarray
    F: bytes
    re: int

    def to_bytes(self) -> bytes:
        return (bytes([self.re]) + self.F + struct.pack("<I", self.S.size)
                + self.S.astype("<i4").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Signature":
        if len(data) < 1 + DIGEST_BYTES + 4:
            raise ValueError("signature blob too short")
        re = data[0]
        F = bytes(data[1:1 + DIGEST_BYTES])
        (m,) = struct.unpack_from("<I", data, 1 + DIGEST_BYTES)
        body = data[1 + DIGEST_BYTES + 4:]
        if len(body) != 4 * m:
            raise ValueError("signature length field does not match body")
        S = np.frombuffer(body, "<i4").astype(np.int64)
        return cls(S, F, re)

    def __eq__(self, other):
        return (isinstance(other, Signature) and self.re == other.re and self.F == other.F
                and np.array_equal(self.S, other.S))


def keygen(params: SignParams, seed: int) -> KeyPair:
    rng = np.random.default_rng(seed)
    G = rng.integers(0, params.modulus, size=(params.n, params.m), dtype=np.int64)
    s = np.zeros(params.m, dtype=np.int64)
    while not s.any():
        s = rng.integers(-1, 2, size=params.m, dtype=np.int64)
    T = (G @ s) % params.modulus
    return KeyPair(PublicKey(G, T), s)


class GaussianSampler:
    """Rounded N(0, sigma^2) draws from a seeded generator."""

    def __init__(self, sigma: float, rng: np.random.Generator | int):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    def sample(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        return np.rint(self.rng.normal(0.0, self.sigma, size=n)).astype(np.int64)


def sample_gaussian(sampler: GaussianSampler, n: int) -> np.ndarray:
    return sampler.sample(n)


def _digest(u: np.ndarray, message: bytes) -> bytes:
    h = hashlib.sha256()
    h.update(np.asarray(u, dtype="<i4").tobytes())
    h.update(message)
    return h.digest()


def challenge(pub: PublicKey | np.ndarray, d: np.ndarray, message: bytes, params: SignParams) -> bytes:
    G = pub.G if isinstance(pub, PublicKey) else pub
    d = np.asarray(d, dtype=np.int64)
    if d.shape != (G.shape[1],):
        raise ValueError(f"d has shape {d.shape}, expected ({G.shape[1]},)")
    return _digest((G @ d) % params.modulus, message)


def challenge_scalar(F: bytes, params: SignParams) -> int:
    """Map a digest to f in [1, 2p-1] with |centred f| <= challenge_bound."""
    k = int.from_bytes(F, "little") % (2 * params.challenge_bound)
    mag = k // 2 + 1
    return mag if k % 2 == 0 else params.modulus - mag


def centred(v: np.ndarray, modulus: int) -> np.ndarray:
    """Representatives in (-p, p]."""
    r = np.mod(v, modulus)
    return np.where(r > modulus // 2, r - modulus, r)


def acceptance_probability(S: np.ndarray, Kc: np.ndarray, params: SignParams) -> float:
    """1 / (M exp(-|Kc|^2 / 2 sigma^2) cosh(<S, Kc> / sigma^2)), evaluated in logs."""
    s2 = params.sigma ** 2
    x = float(Kc @ Kc) / (2.0 * s2)
    y = abs(float(S @ Kc)) / s2
    log_cosh = y + math.log1p(math.exp(-2.0 * y)) - math.log(2.0)
    return min(1.0, math.exp(-(math.log(params.M) - x + log_cosh)))


def sign_counted(keys: KeyPair, params: SignParams, message: bytes,
                 rng: np.random.Generator) -> tuple[Signature, int]:
    """Sign and report how many attempts were made (accepted attempt included)."""
    sampler = GaussianSampler(params.sigma, rng)
    for attempt in range(1, params.max_attempts + 1):
        d = sampler.sample(params.m)
        F = challenge(keys.public, d, message, params)
        f = challenge_scalar(F, params)
        Kc = centred(f * keys.s, params.modulus)
        re = int(rng.integers(0, 2))
        S = d + (-1) ** re * Kc
        if rng.random() >= acceptance_probability(S, Kc, params):
            continue
        if np.max(np.abs(S)) > params.bound:
            continue
        return Signature(S, F, re), attempt
    raise RetryLimit(f"no signature accepted in {params.max_attempts} attempts")


def sign(keys: KeyPair, params: SignParams, message: bytes, rng: np.random.Generator) -> Signature:
    return sign_counted(keys, params, message, rng)[0]


def verify(pub: PublicKey, params: SignParams, message: bytes, sig: Signature) -> bool:
    if sig.re not in (0, 1) or len(sig.F) != DIGEST_BYTES:
        return False
    S = np.asarray(sig.S, dtype=np.int64)
    if S.shape != (pub.G.shape[1],):
        return False
    if np.max(np.abs(S)) > params.bound:
        return False
    f = challenge_scalar(sig.F, params)
    u = (pub.G @ S - (-1) ** sig.re * f * pub.T) % params.modulus
    return _digest(u, message) == sig.F


def verify_bytes(pub: PublicKey, params: SignParams, message: bytes, blob: bytes) -> bool:
    try:
        sig = Signature.from_bytes(blob)
    except ValueError:
        return False
    return verify(pub, params, message, sig)
