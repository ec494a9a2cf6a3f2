"""Counter-based deterministic random numbers.

Every sample is a pure hash of (seed, key0, key1, ...), so a pixel's sample
stream does not depend on which other pixels are being rendered, on tiling,
or on evaluation order. That is what makes pixel-subset renders bit-identical
to full-frame renders and lets finite-difference probes share random numbers
with the differentiable path.
"""

import numpy as np

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_MASK = 0xFFFFFFFFFFFFFFFF


def _splitmix(x):
    # splitmix64 finalizer; x is uint64 scalar or array, wrapping arithmetic
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def _as_u64(k):
    if isinstance(k, np.ndarray):
        return k.astype(np.int64).astype(np.uint64)
    return _U64(int(k) & _MASK)


def hash_u64(*keys):
    """Mix integer keys (scalars or broadcastable integer arrays) to uint64."""
    acc = _splitmix(_U64(0))
    with np.errstate(over="ignore"):
        for k in keys:
            acc = _splitmix(acc ^ (_as_u64(k) * _GOLDEN))
    return acc


def u01(*keys):
    """Uniform float64 in [0, 1) from hashed keys; broadcasts over array keys."""
    h = hash_u64(*keys)
    return (h >> _U64(11)).astype(np.float64) * (2.0 ** -53)


def normal(*keys):
    """Standard normal via Box-Muller on two derived streams."""
    u1 = u01(*keys, 0x5A5A)
    u2 = u01(*keys, 0xA5A5)
    u1 = np.maximum(u1, 1e-16)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
