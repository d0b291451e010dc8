"""Arithmetic backend selection.

Imports the compiled GMP core when available, otherwise the pure-Python
fallback.  ``PURA_BACKEND=python`` or ``PURA_BACKEND=gmp`` forces a choice
(the latter raises if the extension is missing rather than silently
degrading).
"""

import os as _os

_FORCED = _os.environ.get("PURA_BACKEND", "").strip().lower()
if _FORCED not in ("", "gmp", "python"):
    raise ImportError(f"PURA_BACKEND must be 'gmp' or 'python', not {_FORCED!r}")

if _FORCED == "python":
    from . import fallback as _impl
else:
    try:
        from . import _gmpcore as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _FORCED == "gmp":
            raise
        from . import fallback as _impl

BACKEND_NAME = _impl.BACKEND_NAME
powmod = _impl.powmod
mulmod = _impl.mulmod
invmod = _impl.invmod
prod_mod = _impl.prod_mod
mulmod_many = _impl.mulmod_many
invmod_many = _impl.invmod_many
powmod_many = _impl.powmod_many
pack_fold = _impl.pack_fold
is_probable_prime = _impl.is_probable_prime
FixedBase = _impl.FixedBase


def available_backends():
    """Importable backend modules, keyed by name (used by the benchmark)."""
    from . import fallback

    found = {fallback.BACKEND_NAME: fallback}
    try:
        from . import _gmpcore  # type: ignore[attr-defined]

        found[_gmpcore.BACKEND_NAME] = _gmpcore
    except ImportError:
        pass
    return found
