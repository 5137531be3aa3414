import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from concealed import group
from concealed.group import (
    MODP_2048,
    TEST_GROUP,
    WILDCARD,
    Challenge,
    DecryptError,
    InvalidKey,
    WildcardNeedsNoProof,
)

from conftest import ScriptedRng, slow_inverse, slow_pow


def test_groups_are_valid():
    TEST_GROUP.validate()
    MODP_2048.validate()
    assert MODP_2048.modulus.bit_length() == 2048
    assert MODP_2048.order == (MODP_2048.modulus - 1) // 2


def test_group_params_reject_bad_generator():
    with pytest.raises(ValueError):
        group.GroupParams(23, 11, 5).validate()  # 5 has order 22
    with pytest.raises(ValueError):
        group.GroupParams(23, 7, 4).validate()


def test_keygen_worked_example():
    assert group.public_key(TEST_GROUP, 3) == slow_pow(4, 3, 23) == 18
    secret, public = group.keygen(TEST_GROUP, ScriptedRng([3]))
    assert (secret, public) == (3, 18)


def test_keygen_never_emits_wildcard():
    with pytest.raises(ValueError):
        group.public_key(TEST_GROUP, 0)
    rng = random.Random(5)
    secrets = {group.keygen(TEST_GROUP, rng)[0] for _ in range(500)}
    assert secrets == set(range(1, 11))


def test_keygen_secrets_distinct_in_big_group():
    a, _ = group.keygen(MODP_2048)
    b, _ = group.keygen(MODP_2048)
    assert a != b


def test_wildcard_marker():
    assert group.is_wildcard(group.wildcard())
    assert not group.is_wildcard(group.public_key(TEST_GROUP, 3))
    assert group.encode_key(WILDCARD) == "*"
    assert group.decode_key("*") is WILDCARD


def test_decoding_one_as_key_is_rejected():
    with pytest.raises(InvalidKey):
        group.decode_key("1")


def test_decode_key_checks_subgroup():
    assert group.decode_key("12", TEST_GROUP) == 18
    with pytest.raises(InvalidKey):
        group.decode_key("7", TEST_GROUP)  # 7 is not a quadratic residue mod 23


@pytest.mark.parametrize("text", ["", "0a", "A", "-3", "1g"])
def test_decode_element_rejects_non_canonical(text):
    with pytest.raises(ValueError):
        group.decode_element(text)


def test_challenge_worked_example():
    expected_c0 = slow_pow(4, 5, 23)
    expected_c1 = slow_pow(18, 5, 23) * 7 % 23
    assert (expected_c0, expected_c1) == (12, 21)
    ch = group.encrypt_nonce(TEST_GROUP, 18, r=5, m=7)
    assert ch == Challenge(12, 21)


def test_make_challenge_uses_rng_for_m_then_r():
    # m = g^k with k drawn first, then r.
    ch, m = group.make_challenge(TEST_GROUP, 18, ScriptedRng([2, 5]))
    assert m == 16
    assert ch == group.encrypt_nonce(TEST_GROUP, 18, 5, 16)


def test_solve_worked_example():
    shared = slow_pow(12, 3, 23)
    assert shared == 3 and slow_inverse(shared, 23) == 8
    assert group.solve_challenge(TEST_GROUP, 3, Challenge(12, 21)) == 7


def test_wrong_secret_fails_worked_example():
    other = slow_pow(12, 4, 23)
    assert 21 * slow_inverse(other, 23) % 23 != 7
    assert group.solve_challenge(TEST_GROUP, 4, Challenge(12, 21)) != 7


def test_solve_rejects_wildcard_secret():
    with pytest.raises(ValueError):
        group.solve_challenge(TEST_GROUP, 0, Challenge(12, 21))


def test_make_challenge_rejects_wildcard():
    with pytest.raises(WildcardNeedsNoProof):
        group.make_challenge(TEST_GROUP, WILDCARD)


def test_repeated_challenges_differ():
    _, key = group.keygen(MODP_2048)
    a, _ = group.make_challenge(MODP_2048, key)
    b, _ = group.make_challenge(MODP_2048, key)
    assert a != b


@given(st.integers(min_value=1, max_value=10), st.integers(min_value=0, max_value=2**32))
def test_completeness_test_group(secret, seed):
    rng = random.Random(seed)
    key = group.public_key(TEST_GROUP, secret)
    ch, m = group.make_challenge(TEST_GROUP, key, rng)
    assert group.solve_challenge(TEST_GROUP, secret, ch) == m
    for element in (key, ch.c0, ch.c1, m):
        assert slow_pow(element, 11, 23) == 1


@settings(max_examples=5, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_completeness_production_group(seed):
    rng = random.Random(seed)
    secret, key = group.keygen(MODP_2048, rng)
    ch, m = group.make_challenge(MODP_2048, key, rng)
    assert group.solve_challenge(MODP_2048, secret, ch) == m
    assert all(MODP_2048.in_subgroup(e) for e in (key, ch.c0, ch.c1, m))


def test_soundness_uniform_guess():
    rng = random.Random(99)
    subgroup = sorted({slow_pow(4, k, 23) for k in range(11)})
    key = group.public_key(TEST_GROUP, 6)
    trials = 10_000
    passed = 0
    for _ in range(trials):
        _, m = group.make_challenge(TEST_GROUP, key, rng)
        passed += rng.choice(subgroup) == m
    p = 1 / 11
    sigma = math.sqrt(p * (1 - p) / trials)
    assert passed / trials <= p + 3 * sigma


def test_seal_round_trip_and_overhead(rng):
    key = group.new_content_key(rng)
    ct = group.seal(key, b"abc", rng)
    assert group.open_sealed(key, ct) == b"abc"
    assert len(ct) == 3 + group.SEAL_OVERHEAD


def test_seal_wrong_key(rng):
    ct = group.seal(group.new_content_key(rng), b"abc", rng)
    with pytest.raises(DecryptError):
        group.open_sealed(group.new_content_key(rng), ct)


def test_seal_rejects_bad_key_length():
    with pytest.raises(group.CryptoError):
        group.seal(b"short", b"abc")


@settings(max_examples=25)
@given(st.binary(max_size=64), st.data())
def test_seal_rejects_every_bit_flip(plaintext, data):
    rng = random.Random(1)
    key = group.new_content_key(rng)
    ct = group.seal(key, plaintext, rng)
    bit = data.draw(st.integers(min_value=0, max_value=len(ct) * 8 - 1))
    mutated = bytearray(ct)
    mutated[bit // 8] ^= 1 << (bit % 8)
    with pytest.raises(DecryptError):
        group.open_sealed(key, bytes(mutated))


def test_hybrid_round_trip(rng):
    sk = group.generate_keypair(rng)
    ct = group.hybrid_seal(sk.public_key(), b"hello", rng)
    assert group.hybrid_open(sk, ct) == b"hello"
    assert len(ct) == 5 + group.HYBRID_OVERHEAD


def test_hybrid_wrong_key(rng):
    sk = group.generate_keypair(rng)
    ct = group.hybrid_seal(sk.public_key(), b"hello", rng)
    with pytest.raises(DecryptError):
        group.hybrid_open(group.generate_keypair(rng), ct)


def test_hybrid_is_randomized(rng):
    sk = group.generate_keypair(rng)
    assert group.hybrid_seal(sk.public_key(), b"hello", rng) != group.hybrid_seal(
        sk.public_key(), b"hello", rng
    )


@settings(max_examples=25)
@given(st.binary(max_size=64), st.data())
def test_hybrid_rejects_every_bit_flip(plaintext, data):
    rng = random.Random(2)
    sk = group.generate_keypair(rng)
    ct = group.hybrid_seal(group.public_bytes(sk), plaintext, rng)
    bit = data.draw(st.integers(min_value=0, max_value=len(ct) * 8 - 1))
    mutated = bytearray(ct)
    mutated[bit // 8] ^= 1 << (bit % 8)
    with pytest.raises(DecryptError):
        group.hybrid_open(sk, bytes(mutated))


def test_wordlist_shape():
    words = group.wordlist()
    assert len(words) == 16384 == len(set(words))


def test_fingerprint_deterministic_and_order_free(rng):
    keys = [(group.key_id_for(k), k) for k in (rng.randbytes(32) for _ in range(6))]
    fp = group.fingerprint(keys)
    assert len(fp.split()) == 8
    shuffled = keys[:]
    rng.shuffle(shuffled)
    assert group.fingerprint(shuffled) == fp


def test_fingerprint_changes_on_flipped_key(rng):
    keys = [("a1", rng.randbytes(32)), ("b2", rng.randbytes(32))]
    flipped = [keys[0], ("b2", bytes([keys[1][1][0] ^ 1]) + keys[1][1][1:])]
    assert group.fingerprint(keys) != group.fingerprint(flipped)


def test_fingerprint_rejects_duplicate_ids():
    with pytest.raises(ValueError):
        group.fingerprint([("a", b"x"), ("a", b"y")])


@given(st.lists(st.tuples(st.text(min_size=1, max_size=4), st.binary(max_size=8)),
                unique_by=lambda item: item[0], max_size=6), st.randoms())
def test_fingerprint_permutation_invariance(entries, shuffler):
    permuted = entries[:]
    shuffler.shuffle(permuted)
    assert group.fingerprint(entries) == group.fingerprint(permuted)


def test_fast_group_is_reproducible_and_prime():
    import importlib.util
    import pathlib

    import gmpy2

    script = pathlib.Path(__file__).resolve().parent.parent / "tools" / "make_schnorr_group.py"
    spec = importlib.util.spec_from_file_location("make_schnorr_group", script)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    fast = group.SCHNORR_2048_256
    assert module.generate() == (fast.modulus, fast.order, fast.generator)
    assert gmpy2.is_prime(fast.modulus, 50) and gmpy2.is_prime(fast.order, 50)
    assert fast.modulus.bit_length() == 2048 and fast.order.bit_length() == 256
    fast.validate()
