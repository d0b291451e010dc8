"""Pure-Python arithmetic kernels.

Mirror of the compiled GMP core (`_gmpcore`).  Everything here is exact
big-integer arithmetic built on the interpreter's own ``pow``; the compiled
module replaces these with libgmp calls that also release the GIL.  Keep the
two implementations behaviourally identical — the test suite runs the same
checks against both.
"""

from __future__ import annotations

import secrets
from typing import Sequence

BACKEND_NAME = "python"

_SMALL_PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
                 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113,
                 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181,
                 191, 193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251]


def _check_mod(mod: int) -> None:
    if mod <= 0:
        raise ValueError("modulus must be positive")


def powmod(base: int, exp: int, mod: int) -> int:
    """base**exp mod mod; negative exponents require an invertible base."""
    _check_mod(mod)
    return pow(base, exp, mod)


def mulmod(a: int, b: int, mod: int) -> int:
    _check_mod(mod)
    return (a * b) % mod


def invmod(a: int, mod: int) -> int:
    _check_mod(mod)
    return pow(a, -1, mod)


def prod_mod(values: Sequence[int], mod: int) -> int:
    _check_mod(mod)
    acc = 1
    for v in values:
        acc = (acc * v) % mod
    return acc


def mulmod_many(a: Sequence[int], b: Sequence[int], mod: int) -> list[int]:
    _check_mod(mod)
    if len(a) != len(b):
        raise ValueError("length mismatch")
    return [(x * y) % mod for x, y in zip(a, b)]


def invmod_many(values: Sequence[int], mod: int) -> list[int]:
    _check_mod(mod)
    return [pow(v, -1, mod) for v in values]


def powmod_many(bases: Sequence[int], exps: Sequence[int], mod: int) -> list[int]:
    _check_mod(mod)
    if len(bases) != len(exps):
        raise ValueError("length mismatch")
    return [pow(b, e, mod) for b, e in zip(bases, exps)]


def pack_fold(values: Sequence[int], radix: int, mod: int) -> int:
    """prod(values[k] ** radix**k) mod mod, evaluated by Horner folding.

    Spelled out: acc = values[-1]; then repeatedly acc = acc**radix * values[k]
    walking k downward, which costs one radix-exponentiation per value instead
    of one full radix**k-exponentiation.
    """
    _check_mod(mod)
    if not values:
        raise ValueError("pack_fold needs at least one value")
    if radix < 2:
        raise ValueError("radix must be >= 2")
    acc = values[-1] % mod
    for k in range(len(values) - 2, -1, -1):
        acc = (pow(acc, radix, mod) * values[k]) % mod
    return acc


def is_probable_prime(n: int, reps: int = 64) -> bool:
    """Miller-Rabin with `reps` random bases (error < 4**-reps)."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(reps):
        a = 2 + secrets.randbelow(n - 3)
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = (x * x) % n
            if x == n - 1:
                break
        else:
            return False
    return True


class FixedBase:
    """Fixed-base modular exponentiation with per-position window tables.

    Precomputes base**(d * 2**(window*k)) for every window position k and
    digit d, so a later `pow(e)` costs only one modular multiplication per
    window of the exponent — no squarings.  Worth it when many exponents are
    raised on the same base (encryption randomizers).
    """

    def __init__(self, base: int, mod: int, max_bits: int, window: int = 6):
        _check_mod(mod)
        if not 1 <= window <= 12:
            raise ValueError("window out of range")
        if max_bits < 1:
            raise ValueError("max_bits must be >= 1")
        if not 0 < base < mod:
            raise ValueError("base must be in (0, mod)")
        self.mod = mod
        self.max_bits = max_bits
        self.window = window
        self._mask = (1 << window) - 1
        positions = (max_bits + window - 1) // window
        table = []
        cur = base
        for _ in range(positions):
            row = [cur]
            for _ in range(self._mask - 1):
                row.append((row[-1] * cur) % mod)
            table.append(row)
            cur = (row[-1] * cur) % mod  # cur ** 2**window
        self._table = table

    def pow(self, exp: int) -> int:
        if exp < 0 or exp.bit_length() > self.max_bits:
            raise ValueError("exponent outside precomputed range")
        acc = 1
        pos = 0
        while exp:
            d = exp & self._mask
            if d:
                acc = (acc * self._table[pos][d - 1]) % self.mod
            exp >>= self.window
            pos += 1
        return acc

    def pow_many(self, exps: Sequence[int]) -> list[int]:
        return [self.pow(e) for e in exps]
