# cython: language_level=3
"""GMP-backed arithmetic kernels.

Same surface as `fallback.py`, but arbitrary-precision operations run on
libgmp and the long exponentiations release the GIL, so protocol threads
overlap on multi-core hosts.  Values cross the boundary as Python ints via
big-endian byte buffers.
"""

from cpython.bytes cimport PyBytes_FromStringAndSize, PyBytes_AS_STRING
from libc.stdlib cimport malloc, free

cdef extern from "gmp.h":
    ctypedef struct __mpz_struct:
        pass
    ctypedef __mpz_struct mpz_t[1]
    ctypedef unsigned long mp_bitcnt_t

    void mpz_init(mpz_t)
    void mpz_clear(mpz_t)
    void mpz_set(mpz_t, const mpz_t) nogil
    void mpz_set_ui(mpz_t, unsigned long) nogil
    int mpz_sgn(const mpz_t) nogil
    int mpz_cmp(const mpz_t, const mpz_t) nogil
    int mpz_cmp_ui(const mpz_t, unsigned long) nogil
    void mpz_mul(mpz_t, const mpz_t, const mpz_t) nogil
    void mpz_mod(mpz_t, const mpz_t, const mpz_t) nogil
    void mpz_powm(mpz_t, const mpz_t, const mpz_t, const mpz_t) nogil
    int mpz_invert(mpz_t, const mpz_t, const mpz_t) nogil
    void mpz_neg(mpz_t, const mpz_t) nogil
    int mpz_probab_prime_p(const mpz_t, int) nogil
    size_t mpz_sizeinbase(const mpz_t, int) nogil
    int mpz_tstbit(const mpz_t, mp_bitcnt_t) nogil
    void mpz_import(mpz_t, size_t, int, size_t, int, size_t, const void *)
    void * mpz_export(void *, size_t *, int, size_t, int, size_t, const mpz_t)

BACKEND_NAME = "gmp"


cdef int _mpz_from_int(mpz_t z, object value) except -1:
    """Load a non-negative Python int into an initialized mpz."""
    cdef Py_ssize_t nbytes
    if value < 0:
        raise ValueError("negative value not supported here")
    nbytes = (value.bit_length() + 7) // 8
    if nbytes == 0:
        mpz_set_ui(z, 0)
        return 0
    buf = value.to_bytes(nbytes, "big")
    mpz_import(z, nbytes, 1, 1, 0, 0, <const void *>PyBytes_AS_STRING(buf))
    return 0


cdef object _int_from_mpz(mpz_t z):
    cdef size_t nbytes, written
    if mpz_sgn(z) == 0:
        return 0
    nbytes = (mpz_sizeinbase(z, 2) + 7) // 8
    buf = PyBytes_FromStringAndSize(NULL, nbytes)
    mpz_export(PyBytes_AS_STRING(buf), &written, 1, 1, 0, 0, z)
    return int.from_bytes(buf[:written], "big")


cdef void _clear3(mpz_t a, mpz_t b, mpz_t c) noexcept:
    mpz_clear(a)
    mpz_clear(b)
    mpz_clear(c)


def powmod(object base, object exp, object mod):
    """base**exp mod mod; negative exponents require an invertible base."""
    cdef mpz_t b, e, m, r
    cdef bint neg = exp < 0
    cdef int ok
    if mod <= 0:
        raise ValueError("modulus must be positive")
    mpz_init(b)
    mpz_init(e)
    mpz_init(m)
    mpz_init(r)
    try:
        _mpz_from_int(m, mod)
        _mpz_from_int(e, -exp if neg else exp)
        _mpz_from_int(b, base % mod)
        if neg:
            with nogil:
                ok = mpz_invert(b, b, m)
            if ok == 0:
                raise ValueError("base is not invertible for the given modulus")
        with nogil:
            mpz_powm(r, b, e, m)
        return _int_from_mpz(r)
    finally:
        _clear3(b, e, m)
        mpz_clear(r)


def mulmod(object a, object b, object mod):
    cdef mpz_t x, y, m
    if mod <= 0:
        raise ValueError("modulus must be positive")
    mpz_init(x)
    mpz_init(y)
    mpz_init(m)
    try:
        _mpz_from_int(m, mod)
        _mpz_from_int(x, a % mod)
        _mpz_from_int(y, b % mod)
        with nogil:
            mpz_mul(x, x, y)
            mpz_mod(x, x, m)
        return _int_from_mpz(x)
    finally:
        _clear3(x, y, m)


def invmod(object a, object mod):
    cdef mpz_t x, m, r
    cdef int ok
    if mod <= 0:
        raise ValueError("modulus must be positive")
    mpz_init(x)
    mpz_init(m)
    mpz_init(r)
    try:
        _mpz_from_int(m, mod)
        _mpz_from_int(x, a % mod)
        with nogil:
            ok = mpz_invert(r, x, m)
        if ok == 0:
            raise ValueError("base is not invertible for the given modulus")
        return _int_from_mpz(r)
    finally:
        _clear3(x, m, r)


def prod_mod(values, object mod):
    cdef mpz_t acc, v, m
    if mod <= 0:
        raise ValueError("modulus must be positive")
    mpz_init(acc)
    mpz_init(v)
    mpz_init(m)
    try:
        _mpz_from_int(m, mod)
        mpz_set_ui(acc, 1)
        for value in values:
            _mpz_from_int(v, value % mod)
            with nogil:
                mpz_mul(acc, acc, v)
                mpz_mod(acc, acc, m)
        return _int_from_mpz(acc)
    finally:
        _clear3(acc, v, m)


def mulmod_many(a, b, object mod):
    cdef mpz_t x, y, m
    if mod <= 0:
        raise ValueError("modulus must be positive")
    if len(a) != len(b):
        raise ValueError("length mismatch")
    out = []
    mpz_init(x)
    mpz_init(y)
    mpz_init(m)
    try:
        _mpz_from_int(m, mod)
        for u, v in zip(a, b):
            _mpz_from_int(x, u % mod)
            _mpz_from_int(y, v % mod)
            with nogil:
                mpz_mul(x, x, y)
                mpz_mod(x, x, m)
            out.append(_int_from_mpz(x))
        return out
    finally:
        _clear3(x, y, m)


def invmod_many(values, object mod):
    cdef mpz_t x, m, r
    cdef int ok
    if mod <= 0:
        raise ValueError("modulus must be positive")
    out = []
    mpz_init(x)
    mpz_init(m)
    mpz_init(r)
    try:
        _mpz_from_int(m, mod)
        for value in values:
            _mpz_from_int(x, value % mod)
            with nogil:
                ok = mpz_invert(r, x, m)
            if ok == 0:
                raise ValueError("base is not invertible for the given modulus")
            out.append(_int_from_mpz(r))
        return out
    finally:
        _clear3(x, m, r)


def powmod_many(bases, exps, object mod):
    cdef mpz_t b, e, m, r
    if mod <= 0:
        raise ValueError("modulus must be positive")
    if len(bases) != len(exps):
        raise ValueError("length mismatch")
    out = []
    mpz_init(b)
    mpz_init(e)
    mpz_init(m)
    mpz_init(r)
    try:
        _mpz_from_int(m, mod)
        for base, exp in zip(bases, exps):
            if exp < 0:
                raise ValueError("powmod_many requires non-negative exponents")
            _mpz_from_int(b, base % mod)
            _mpz_from_int(e, exp)
            with nogil:
                mpz_powm(r, b, e, m)
            out.append(_int_from_mpz(r))
        return out
    finally:
        _clear3(b, e, m)
        mpz_clear(r)


def pack_fold(values, object radix, object mod):
    """prod(values[k] ** radix**k) mod mod via Horner folding."""
    cdef mpz_t acc, rad, m
    cdef mpz_t *arr
    cdef Py_ssize_t n, i
    if mod <= 0:
        raise ValueError("modulus must be positive")
    n = len(values)
    if n == 0:
        raise ValueError("pack_fold needs at least one value")
    if radix < 2:
        raise ValueError("radix must be >= 2")
    arr = <mpz_t *>malloc(n * sizeof(mpz_t))
    if arr == NULL:
        raise MemoryError()
    for i in range(n):
        mpz_init(arr[i])
    mpz_init(acc)
    mpz_init(rad)
    mpz_init(m)
    try:
        _mpz_from_int(m, mod)
        _mpz_from_int(rad, radix)
        for i in range(n):
            _mpz_from_int(arr[i], values[i] % mod)
        with nogil:
            mpz_set(acc, arr[n - 1])
            for i in range(n - 2, -1, -1):
                mpz_powm(acc, acc, rad, m)
                mpz_mul(acc, acc, arr[i])
                mpz_mod(acc, acc, m)
        return _int_from_mpz(acc)
    finally:
        for i in range(n):
            mpz_clear(arr[i])
        free(arr)
        _clear3(acc, rad, m)


def is_probable_prime(object n, int reps=64):
    """Trial division + Miller-Rabin as provided by GMP (error < 4**-reps)."""
    cdef mpz_t z
    cdef int res
    if n < 2:
        return False
    mpz_init(z)
    try:
        _mpz_from_int(z, n)
        with nogil:
            res = mpz_probab_prime_p(z, reps)
        return res > 0
    finally:
        mpz_clear(z)


cdef class FixedBase:
    """Fixed-base modular exponentiation with per-position window tables.

    Precomputes base**(d * 2**(window*k)) for every window position k and
    digit d, so `pow(e)` costs one modular multiplication per exponent window
    and no squarings.
    """

    cdef mpz_t _mod
    cdef mpz_t *_table
    cdef int _window, _positions, _row
    cdef readonly int max_bits

    def __cinit__(self, object base, object mod, int max_bits, int window=6):
        cdef mpz_t cur
        cdef Py_ssize_t pos, d, idx
        if mod <= 0:
            raise ValueError("modulus must be positive")
        if not 1 <= window <= 12:
            raise ValueError("window out of range")
        if max_bits < 1:
            raise ValueError("max_bits must be >= 1")
        if not 0 < base < mod:
            raise ValueError("base must be in (0, mod)")
        self.max_bits = max_bits
        self._window = window
        self._positions = (max_bits + window - 1) // window
        self._row = (1 << window) - 1
        mpz_init(self._mod)
        _mpz_from_int(self._mod, mod)
        self._table = <mpz_t *>malloc(self._positions * self._row * sizeof(mpz_t))
        if self._table == NULL:
            mpz_clear(self._mod)
            raise MemoryError()
        for idx in range(self._positions * self._row):
            mpz_init(self._table[idx])
        mpz_init(cur)
        _mpz_from_int(cur, base)
        with nogil:
            for pos in range(self._positions):
                idx = pos * self._row
                mpz_set(self._table[idx], cur)
                for d in range(1, self._row):
                    mpz_mul(self._table[idx + d], self._table[idx + d - 1], cur)
                    mpz_mod(self._table[idx + d], self._table[idx + d], self._mod)
                # advance cur to base**(2**(window*(pos+1)))
                mpz_mul(cur, self._table[idx + self._row - 1], cur)
                mpz_mod(cur, cur, self._mod)
        mpz_clear(cur)

    def __dealloc__(self):
        cdef Py_ssize_t idx
        if self._table != NULL:
            for idx in range(self._positions * self._row):
                mpz_clear(self._table[idx])
            free(self._table)
        mpz_clear(self._mod)

    cdef object _pow(self, object exp):
        cdef mpz_t e, acc
        cdef Py_ssize_t pos
        cdef unsigned long d
        cdef int bit
        if exp < 0 or exp.bit_length() > self.max_bits:
            raise ValueError("exponent outside precomputed range")
        mpz_init(e)
        mpz_init(acc)
        try:
            _mpz_from_int(e, exp)
            with nogil:
                mpz_set_ui(acc, 1)
                for pos in range(self._positions):
                    d = 0
                    for bit in range(self._window - 1, -1, -1):
                        d = (d << 1) | mpz_tstbit(e, pos * self._window + bit)
                    if d:
                        mpz_mul(acc, acc, self._table[pos * self._row + d - 1])
                        mpz_mod(acc, acc, self._mod)
            return _int_from_mpz(acc)
        finally:
            mpz_clear(e)
            mpz_clear(acc)

    def pow(self, exp):
        return self._pow(exp)

    def pow_many(self, exps):
        return [self._pow(e) for e in exps]
