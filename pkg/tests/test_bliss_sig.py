import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ngwn_sentinel.bliss_sig import (
    GaussianSampler, KeyPair, PublicKey, RetryLimit, SignParams, Signature, acceptance_probability,
    centred, challenge, challenge_scalar, keygen, sample_gaussian, sign, sign_counted, verify,
    verify_bytes,
)

P = SignParams()


@pytest.fixture(scope="module")
def keys():
    return keygen(P, 42)


def test_default_params():
    assert (P.n, P.m, P.modulus, P.sigma, P.M, P.bound) == (64, 64, 2048, 64.0, 3.0, 512.0)
    # largest |f| keeping M * exp(-f^2 m / 2 sigma^2) >= 1 for a full-weight ternary secret
    assert P.challenge_bound == math.floor(64 * math.sqrt(2 * math.log(3) / 64)) == 11


@pytest.mark.parametrize("kw", [dict(modulus=2047), dict(n=0), dict(sigma=0.0), dict(M=1.0)])
def test_param_validation(kw):
    with pytest.raises(ValueError):
        SignParams(**kw)


def test_keygen_deterministic_and_consistent():
    a, b = keygen(P, 7), keygen(P, 7)
    assert a.public == b.public and np.array_equal(a.s, b.s)
    np.testing.assert_array_equal((a.G @ a.s) % P.modulus, a.T)
    assert set(np.unique(a.s)) <= {-1, 0, 1}


def test_keygen_seeds_give_distinct_public_keys():
    seen = {keygen(P, s).T.tobytes() for s in range(100)}
    assert len(seen) == 100


def test_public_key_serialization_omits_secret(keys):
    blob = keys.public.to_bytes()
    assert PublicKey.from_bytes(blob) == keys.public
    assert len(blob) == 12 + 4 * (P.n * P.m + P.n)


def test_gaussian_moments():
    d = GaussianSampler(1.0, 0).sample(100_000)
    assert abs(d.mean()) <= 0.02
    # rounding adds 1/12 to the variance of a unit normal
    d64 = sample_gaussian(GaussianSampler(64.0, 1), 100_000)
    assert abs(d64.var() / 64.0 ** 2 - 1) <= 0.05


def test_gaussian_same_seed_same_vector():
    assert np.array_equal(GaussianSampler(5, 3).sample(50), GaussianSampler(5, 3).sample(50))


def test_challenge_deterministic_and_message_sensitive(keys, rng):
    d = GaussianSampler(64, rng).sample(P.m)
    assert challenge(keys.public, d, b"abc", P) == challenge(keys.public, d, b"abc", P)
    digests = set()
    for i in range(1000):
        msg = bytearray(rng.bytes(24))
        base = challenge(keys.public, d, bytes(msg), P)
        msg[i % 24] ^= 1 + (i % 255)
        assert challenge(keys.public, d, bytes(msg), P) != base
        digests.add(base)
    assert len(digests) == 1000


@given(st.binary(min_size=32, max_size=32))
def test_challenge_scalar_range(F):
    f = challenge_scalar(F, P)
    assert 1 <= f <= P.modulus - 1
    assert 1 <= abs(int(centred(np.array([f]), P.modulus)[0])) <= P.challenge_bound


def test_centred_representatives():
    v = centred(np.array([0, 1, 1024, 1025, 2047, -1, 4096]), 2048)
    assert v.tolist() == [0, 1, 1024, -1023, -1, -1, 0]


def _acceptance_direct(S, Kc, sigma, M):
    s2 = sigma ** 2
    return min(1.0, 1.0 / (M * math.exp(-float(Kc @ Kc) / (2 * s2)) * math.cosh(float(S @ Kc) / s2)))


def test_acceptance_probability_matches_direct_formula(keys, rng):
    for _ in range(200):
        f = int(rng.integers(1, P.challenge_bound + 1))
        Kc = centred(f * keys.s, P.modulus)
        S = GaussianSampler(64, rng).sample(P.m) + Kc
        assert acceptance_probability(S, Kc, P) == pytest.approx(_acceptance_direct(S, Kc, 64.0, 3.0), rel=1e-9)


def test_acceptance_probability_survives_huge_inner_product():
    Kc = np.full(64, 11)
    S = np.full(64, 5000)  # cosh of ~860 would overflow a float
    assert acceptance_probability(S, Kc, P) == 0.0


def test_roundtrip_and_tamper(keys, rng):
    for i in range(100):
        msg = rng.bytes(int(rng.integers(0, 80)))
        sig = sign(keys, P, msg, rng)
        assert verify(keys.public, P, msg, sig)
        assert np.max(np.abs(sig.S)) <= P.bound
        if msg:
            bad = bytearray(msg)
            bad[0] ^= 0x80
            assert not verify(keys.public, P, bytes(bad), sig)


def test_signing_is_seed_deterministic(keys):
    a = sign(keys, P, b"hello", np.random.default_rng(5))
    b = sign(keys, P, b"hello", np.random.default_rng(5))
    assert a == b and a.to_bytes() == b.to_bytes()


def test_scaled_signature_rejected(keys, rng):
    sig = sign(keys, P, b"m", rng)
    big = Signature(sig.S * 10, sig.F, sig.re)
    assert not verify(keys.public, P, b"m", big)


def test_wrong_key_rejected(keys, rng):
    sig = sign(keys, P, b"m", rng)
    assert not verify(keygen(P, 43).public, P, b"m", sig)


def test_malformed_blobs_rejected(keys, rng):
    blob = sign(keys, P, b"m", rng).to_bytes()
    assert verify_bytes(keys.public, P, b"m", blob)
    assert not verify_bytes(keys.public, P, b"m", blob[:-1])
    assert not verify_bytes(keys.public, P, b"m", b"")
    assert not verify_bytes(keys.public, P, b"m", bytes([2]) + blob[1:])


def test_acceptance_rate_band(keys):
    rng = np.random.default_rng(0)
    attempts = 0
    for i in range(1000):
        attempts += sign_counted(keys, P, i.to_bytes(4, "little"), rng)[1]
    rate = 1000 / attempts
    assert 1 / (2 * P.M) <= rate <= 1.0


def test_retry_limit():
    p = SignParams(max_attempts=1, bound=1.0)
    k = keygen(p, 0)
    with pytest.raises(RetryLimit):
        sign(k, p, b"x", np.random.default_rng(0))


@settings(max_examples=30)
@given(st.binary(max_size=64), st.integers(0, 2**32 - 1))
def test_sign_verify_property(msg, seed):
    keys = keygen(P, 1)
    sig = sign(keys, P, msg, np.random.default_rng(seed))
    assert verify_bytes(keys.public, P, msg, sig.to_bytes())
    assert Signature.from_bytes(sig.to_bytes()) == sig
