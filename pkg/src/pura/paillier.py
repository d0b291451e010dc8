"""(2,2)-threshold Paillier-style cryptosystem on a structured modulus.

The modulus is N = P*Q with P = 2pp'+1 and Q = 2qq'+1 prime, where p, q are
2*kappa-bit primes and p', q' odd cofactors.  The public generator is
h = -y**(2*beta) mod N for beta = p'q', and a message m encrypts to

    (1+N)**m * (h**r mod N)**N  mod N**2 .

Decryption raises a ciphertext to 2*alpha (alpha = pq): every randomizer has
order dividing 2*alpha modulo N, so c**(2*alpha) collapses to 1 + 2*alpha*m*N
mod N**2 and m falls out by an exact division.  The secret exponent splits
into sk1 + sk2 with sk1 + sk2 = 0 mod 2*alpha and = 1 mod N, so two partial
exponentiations multiply into the same collapse without either holder
learning alpha.

Plaintexts live in Z_N; see `encoding` for the signed embedding.
"""

from __future__ import annotations

import math
import secrets
from dataclasses import dataclass, field
from threading import Lock
from typing import NamedTuple

from ._mathcore import FixedBase, invmod, is_probable_prime, mulmod, powmod
from .errors import (DomainError, IntegrityError, KeyFormatError, ParameterError,
                     ResourceExhaustedError)
from .hexint import from_hex, to_hex
from .params import DEFAULT_NGEN_BUDGET, PRIMALITY_REPS, ParamSet

_sysrand = secrets.SystemRandom()


def default_rng():
    """Process-wide CSPRNG; every randomized API accepts an injected rng."""
    return _sysrand


# ---------------------------------------------------------------------------
# key objects


@dataclass(frozen=True)
class PublicKey:
    n: int
    h: int
    params: ParamSet
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._cache["lock"] = Lock()

    @property
    def n_sq(self) -> int:
        sq = self._cache.get("n_sq")
        if sq is None:
            sq = self.n * self.n
            self._cache["n_sq"] = sq
        return sq

    def _randomizer_base(self) -> FixedBase:
        """Fixed-base table over h**N mod N**2, built once per key.

        (h**r mod N)**N == (h**N mod N**2)**r mod N**2 — reducing the inner
        power mod N only subtracts multiples of N, which vanish mod N**2 when
        raised to N — so encryption becomes one table-driven exponentiation.
        """
        fb = self._cache.get("fb")
        if fb is None:
            with self._cache["lock"]:
                fb = self._cache.get("fb")
                if fb is None:
                    base = powmod(self.h, self.n, self.n_sq)
                    window = 8 if self.params.sk_bits <= 128 else 6
                    fb = FixedBase(base, self.n_sq, self.params.sk_bits, window)
                    self._cache["fb"] = fb
        return fb

    def obfuscator(self, rng=None) -> int:
        """A fresh encryption of zero: (h**r mod N)**N mod N**2."""
        rng = rng or _sysrand
        r = 0
        while r == 0:
            r = rng.getrandbits(self.params.sk_bits)
        return self._randomizer_base().pow(r)


@dataclass(frozen=True)
class PrivateKey:
    alpha: int
    public: PublicKey
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def inv_two_alpha(self) -> int:
        v = self._cache.get("i2a")
        if v is None:
            v = invmod(2 * self.alpha, self.public.n)
            self._cache["i2a"] = v
        return v


class KeyShare(NamedTuple):
    index: int  # 1 or 2
    value: int
    public: PublicKey


class PartialDecryption(NamedTuple):
    value: int
    share_index: int


class ModulusComponents(NamedTuple):
    p: int
    q: int
    p_cof: int
    q_cof: int
    big_p: int  # P = 2*p*p_cof + 1
    big_q: int  # Q = 2*q*q_cof + 1
    n: int


@dataclass(frozen=True)
class KeyMaterial:
    params: ParamSet
    public: PublicKey
    private: PrivateKey
    share1: KeyShare
    share2: KeyShare
    components: ModulusComponents


# ---------------------------------------------------------------------------
# key generation


def _random_prime(bits: int, rng) -> int:
    while True:
        cand = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if is_probable_prime(cand, PRIMALITY_REPS):
            return cand


class _Budget:
    def __init__(self, rounds: int):
        self.left = rounds

    def spend(self):
        if self.left <= 0:
            raise ResourceExhaustedError(
                "modulus search exhausted its candidate budget")
        self.left -= 1


def _modulus_half(params: ParamSet, rng, budget: _Budget) -> tuple[int, int, int]:
    """Draw (prime, cofactor) until 2*prime*cofactor + 1 is itself prime."""
    while True:
        budget.spend()
        prime = _random_prime(params.prime_bits, rng)
        cof = rng.getrandbits(params.cofactor_bits) | (1 << (params.cofactor_bits - 1)) | 1
        big = 2 * prime * cof + 1
        if is_probable_prime(big, PRIMALITY_REPS):
            return prime, cof, big


def ngen(params: ParamSet, rng=None, budget: int = DEFAULT_NGEN_BUDGET) -> ModulusComponents:
    """Generate the structured modulus N = (2pp'+1)(2qq'+1).

    Candidates where P or Q is composite, where the four secret factors are
    not pairwise co-prime, or where N misses the target size by more than one
    bit are rejected and count against the attempt budget.
    """
    rng = rng or _sysrand
    tracker = _Budget(budget)
    while True:
        p, p_cof, big_p = _modulus_half(params, rng, tracker)
        q, q_cof, big_q = _modulus_half(params, rng, tracker)
        parts = (p, q, p_cof, q_cof)
        if any(math.gcd(a, b) != 1
               for i, a in enumerate(parts) for b in parts[i + 1:]):
            continue
        n = big_p * big_q
        if n.bit_length() not in (params.modulus_bits - 1, params.modulus_bits):
            continue
        return ModulusComponents(p, q, p_cof, q_cof, big_p, big_q, n)


def keygen(params: ParamSet, rng=None, budget: int = DEFAULT_NGEN_BUDGET) -> KeyMaterial:
    """Generate a key pair and its additive two-way split of the secret."""
    rng = rng or _sysrand
    comp = ngen(params, rng, budget)
    n = comp.n
    alpha = comp.p * comp.q
    order = (comp.big_p - 1) * (comp.big_q - 1)
    beta, rem = divmod(order, 4 * alpha)
    if rem != 0:  # cannot happen for a well-formed modulus
        raise IntegrityError("(P-1)(Q-1) is not divisible by 4*alpha")

    while True:
        y = rng.randrange(1, n)
        if math.gcd(y, n) == 1:
            break
    h = n - powmod(y, 2 * beta, n)

    sk1 = 0
    while sk1 == 0:
        sk1 = rng.getrandbits(params.sigma)
    sk2 = invmod(2 * alpha, n) * (2 * alpha) - sk1
    while sk2 <= 0:
        sk2 += 2 * alpha * n
    total = sk1 + sk2
    if total % (2 * alpha) != 0 or total % n != 1:
        raise IntegrityError("secret share split failed its congruence checks")

    public = PublicKey(n=n, h=h, params=params)
    return KeyMaterial(
        params=params,
        public=public,
        private=PrivateKey(alpha=alpha, public=public),
        share1=KeyShare(1, sk1, public),
        share2=KeyShare(2, sk2, public),
        components=comp,
    )


# ---------------------------------------------------------------------------
# core operations


def enc(pk: PublicKey, m: int, rng=None, randomizer: int | None = None) -> int:
    """Encrypt m in [0, N) to (1+N)**m * (h**r mod N)**N mod N**2."""
    if not 0 <= m < pk.n:
        raise DomainError("plaintext outside [0, N)")
    if randomizer is None:
        obf = pk.obfuscator(rng)
    else:
        if not 0 < randomizer < (1 << pk.params.sk_bits):
            raise DomainError("randomizer outside (0, 2**(4*kappa))")
        obf = pk._randomizer_base().pow(randomizer)
    return mulmod(1 + m * pk.n, obf, pk.n_sq)


def enc_with_obfuscator(pk: PublicKey, m: int, obf: int) -> int:
    """Encrypt with a pre-generated single-use randomizer (offline pool)."""
    if not 0 <= m < pk.n:
        raise DomainError("plaintext outside [0, N)")
    return mulmod(1 + m * pk.n, obf, pk.n_sq)


def _collapse(pk: PublicKey, value: int) -> int:
    """Map 1 + w*N mod N**2 back to w, checking the division is exact."""
    t = value - 1
    if t < 0 or t % pk.n != 0:
        raise IntegrityError("ciphertext failed the exact-division check")
    return (t // pk.n) % pk.n


def dec(sk: PrivateKey, c: int) -> int:
    pk = sk.public
    u = powmod(c, 2 * sk.alpha, pk.n_sq)
    return _collapse(pk, u) * sk.inv_two_alpha % pk.n


def pdec(share: KeyShare, c: int) -> PartialDecryption:
    return PartialDecryption(powmod(c, share.value, share.public.n_sq), share.index)


def tdec(pk: PublicKey, m1: PartialDecryption, m2: PartialDecryption) -> int:
    """Combine the two partial decryptions of the same ciphertext."""
    if m1.share_index == m2.share_index:
        raise DomainError("partial decryptions come from the same share")
    return _collapse(pk, mulmod(m1.value, m2.value, pk.n_sq))


# ---------------------------------------------------------------------------
# homomorphic operators


def hom_add(pk: PublicKey, c1: int, c2: int) -> int:
    """Ciphertext of m1 + m2 mod N."""
    return mulmod(c1, c2, pk.n_sq)


def hom_scalar_mul(pk: PublicKey, c: int, k: int) -> int:
    """Ciphertext of k*m mod N, literally c**k mod N**2."""
    return powmod(c, k, pk.n_sq)


def hom_neg(pk: PublicKey, c: int) -> int:
    """Ciphertext of -m mod N as the group inverse of c.

    Decrypts identically to c**(N-1) at the cost of one modular inversion
    instead of a full-size exponentiation.
    """
    return invmod(c, pk.n_sq)


def hom_sub(pk: PublicKey, c1: int, c2: int) -> int:
    """Ciphertext of m1 - m2 mod N."""
    return mulmod(c1, invmod(c2, pk.n_sq), pk.n_sq)


def trivial_enc(pk: PublicKey, m: int) -> int:
    """Unrandomized encryption (1 + mN) of a public constant.

    Only safe for values that are public anyway (protocol constants);
    anything secret must go through :func:`enc`.
    """
    return (1 + (m % pk.n) * pk.n) % pk.n_sq


def hom_add_plain(pk: PublicKey, c: int, m: int) -> int:
    """Ciphertext of Dec(c) + m for a public constant m (one mulmod)."""
    return mulmod(c, trivial_enc(pk, m), pk.n_sq)


def hom_scalar_mul_signed(pk: PublicKey, c: int, k: int) -> int:
    """Ciphertext of k*m mod N for a signed small k.

    For k < 0 this inverts c**|k| rather than exponentiating by N - |k|,
    which keeps the exponent |k|-sized.
    """
    if k >= 0:
        return powmod(c, k, pk.n_sq)
    return invmod(powmod(c, -k, pk.n_sq), pk.n_sq)


def refresh(pk: PublicKey, c: int, r: int | None = None, rng=None,
            zero_ct: int | None = None) -> int:
    """Re-randomize c by multiplying in an encryption of zero raised to r."""
    rng = rng or _sysrand
    if r is None:
        r = 0
        while r == 0:
            r = rng.getrandbits(pk.params.ell)
    if r <= 0:
        raise DomainError("refresh exponent must be positive")
    if zero_ct is None:
        zero_ct = enc(pk, 0, rng)
    return mulmod(c, powmod(zero_ct, r, pk.n_sq), pk.n_sq)


def validate_ciphertext(pk: PublicKey, c: int) -> int:
    """Boundary check for ciphertexts arriving from files or the wire."""
    if not 0 < c < pk.n_sq or math.gcd(c, pk.n) != 1:
        raise DomainError("value is not a valid ciphertext for this key")
    return c


# ---------------------------------------------------------------------------
# key files


def _header(kind: str, params: ParamSet) -> dict:
    return {
        "version": 1,
        "kind": kind,
        "kappa": params.kappa,
        "modulus_bits": params.modulus_bits,
        "sigma": params.sigma,
        "ell": params.ell,
    }


def key_file_payloads(material: KeyMaterial) -> dict[str, dict]:
    """The four JSON documents for pk.json / sk.json / share1.json / share2.json."""
    p = material.params
    return {
        "pk": {**_header("pk", p),
               "N": to_hex(material.public.n), "h": to_hex(material.public.h)},
        "sk": {**_header("sk", p), "alpha": to_hex(material.private.alpha)},
        "share1": {**_header("share1", p), "sk1": to_hex(material.share1.value)},
        "share2": {**_header("share2", p), "sk2": to_hex(material.share2.value)},
    }


def _parse_header(doc: dict, expected_kind: str) -> ParamSet:
    try:
        if doc["version"] != 1:
            raise KeyFormatError(f"unsupported key file version {doc['version']!r}")
        if doc["kind"] != expected_kind:
            raise KeyFormatError(f"expected kind {expected_kind!r}, found {doc['kind']!r}")
        return ParamSet(kappa=doc["kappa"], modulus_bits=doc["modulus_bits"],
                        sigma=doc["sigma"], ell=doc["ell"])
    except KeyError as exc:
        raise KeyFormatError(f"key file is missing field {exc}") from None
    except ParameterError as exc:
        raise KeyFormatError(f"key file carries an invalid parameter set: {exc}") from None


def public_key_from_doc(doc: dict) -> PublicKey:
    params = _parse_header(doc, "pk")
    try:
        n, h = from_hex(doc["N"]), from_hex(doc["h"])
    except (KeyError, ValueError) as exc:
        raise KeyFormatError(f"bad public key encoding: {exc}") from None
    if n.bit_length() not in (params.modulus_bits - 1, params.modulus_bits):
        raise KeyFormatError("modulus size disagrees with the declared parameters")
    if not 0 < h < n:
        raise KeyFormatError("generator h outside (0, N)")
    return PublicKey(n=n, h=h, params=params)


def private_key_from_doc(doc: dict, pk: PublicKey) -> PrivateKey:
    params = _parse_header(doc, "sk")
    _require_same_params(params, pk)
    try:
        alpha = from_hex(doc["alpha"])
    except (KeyError, ValueError) as exc:
        raise KeyFormatError(f"bad private key encoding: {exc}") from None
    return PrivateKey(alpha=alpha, public=pk)


def share_from_doc(doc: dict, pk: PublicKey) -> KeyShare:
    kind = doc.get("kind")
    if kind not in ("share1", "share2"):
        raise KeyFormatError(f"expected a key share file, found kind {kind!r}")
    params = _parse_header(doc, kind)
    _require_same_params(params, pk)
    index = 1 if kind == "share1" else 2
    try:
        value = from_hex(doc[f"sk{index}"])
    except (KeyError, ValueError) as exc:
        raise KeyFormatError(f"bad key share encoding: {exc}") from None
    return KeyShare(index, value, pk)


def _require_same_params(params: ParamSet, pk: PublicKey) -> None:
    if params != pk.params:
        raise KeyFormatError("key file parameters disagree with the public key")
