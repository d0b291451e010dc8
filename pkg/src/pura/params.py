"""Parameter sets for the cryptosystem and the secure protocols.

A ParamSet fixes four knobs:

* ``kappa`` — the security level; the two inner primes p, q get 2*kappa bits
  each, so the secret alpha = p*q has 4*kappa bits, and encryption randomness
  gets 4*kappa bits.
* ``modulus_bits`` — the target size of the public modulus N.
* ``sigma`` — the bit length of the statistical blinding values the two-party
  protocols add before revealing anything to the other server.
* ``ell`` — the magnitude bound of signed plaintexts: protocol inputs must
  lie in [-2**ell, 2**ell].

The "toy" profiles trade all security margins for speed and exist only for
tests; do not deploy them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ParameterError

# Miller-Rabin repetitions: error probability < 4**-64 = 2**-128.
PRIMALITY_REPS = 64

# Attempt budget for the modulus search before giving up.
DEFAULT_NGEN_BUDGET = 10_000

# Fixed-point quantization scale for real-valued features.
QUANT_SCALE = 10_000


@dataclass(frozen=True)
class ParamSet:
    kappa: int
    modulus_bits: int
    sigma: int
    ell: int

    def __post_init__(self):
        if self.kappa < 8:
            raise ParameterError("kappa must be at least 8")
        if self.sigma < 8:
            raise ParameterError("sigma must be at least 8")
        if self.ell < 1:
            raise ParameterError("ell must be positive")
        if self.sk_bits >= self.modulus_bits:
            raise ParameterError(
                f"4*kappa = {self.sk_bits} must be smaller than modulus_bits = {self.modulus_bits}")
        if (self.modulus_bits - self.sk_bits) % 2 != 0:
            raise ParameterError("modulus_bits - 4*kappa must be even")
        if self.cofactor_bits < 8:
            raise ParameterError("modulus too small for the prime structure")
        if self.ell > self.sigma:
            raise ParameterError(
                "ell must not exceed sigma (blinded slot values must stay below the slot radix)")
        # Comparison blinding must never wrap mod N: r1*(|x-y|+1) + r2 stays
        # on one side of N/2 only while sigma + ell + 2 < modulus_bits - 1.
        if self.sigma + self.ell + 2 >= self.modulus_bits - 1:
            raise ParameterError("sigma + ell + 2 must stay below modulus_bits - 1")
        if 2 * (self.sigma + 2) > self.modulus_bits:
            raise ParameterError("modulus too small for even one packed slot")

    # -- derived sizes ----------------------------------------------------

    @property
    def sk_bits(self) -> int:
        """Bits of alpha = p*q, and of encryption randomness."""
        return 4 * self.kappa

    @property
    def prime_bits(self) -> int:
        """Bits of each inner prime p, q."""
        return 2 * self.kappa

    @property
    def cofactor_bits(self) -> int:
        """Bits of each odd cofactor p', q' in P = 2pp'+1, Q = 2qq'+1."""
        return (self.modulus_bits - self.sk_bits) // 2 - 1

    @property
    def delta(self) -> int:
        """Offset added to signed slot values to make them non-negative."""
        return 1 << self.ell

    @property
    def slot_radix(self) -> int:
        """Base of the packing radix: one slot per sigma+2 bits."""
        return 1 << (self.sigma + 2)

    @property
    def slot_bits(self) -> int:
        """Bit length of slot_radix as an integer (sigma + 3)."""
        return self.sigma + 3


#: Production-shaped parameters (1024-bit modulus).
DEFAULT = ParamSet(kappa=128, modulus_bits=1024, sigma=128, ell=40)

#: Tiny profile for fast unit tests of the cryptosystem and protocols.
TOY = ParamSet(kappa=16, modulus_bits=128, sigma=16, ell=8)

#: Toy-security profile sized so scale-10000 quantized 512-dim distances fit:
#: distances reach n*scale**2 = 512e8 < 2**36, hence ell = 36.
TOY_E2E = ParamSet(kappa=16, modulus_bits=256, sigma=44, ell=36)

PROFILES = {
    "default": DEFAULT,
    "toy": TOY,
    "toy-e2e": TOY_E2E,
}
