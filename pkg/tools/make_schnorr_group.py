"""Generate the 2048-bit modulus / 256-bit order Schnorr group shipped in group.py.

Deterministic from the seed so the constants can be re-derived and checked.
"""
import random

import gmpy2

SEED = 20261016


def generate(seed=SEED, pbits=2048, qbits=256):
    rng = random.Random(seed)
    while True:
        q = gmpy2.mpz(rng.getrandbits(qbits) | (1 << (qbits - 1)) | 1)
        if gmpy2.is_prime(q, 64):
            break
    while True:
        k = gmpy2.mpz(rng.getrandbits(pbits - qbits) | (1 << (pbits - qbits - 1))) & ~1
        p = k * q + 1
        if p.bit_length() == pbits and gmpy2.is_prime(p, 64):
            break
    h = 2
    while True:
        g = gmpy2.powmod(h, (p - 1) // q, p)
        if g != 1:
            return int(p), int(q), int(g)
        h += 1


if __name__ == "__main__":
    p, q, g = generate()
    print(f"p = {p:x}\nq = {q:x}\ng = {g:x}")
