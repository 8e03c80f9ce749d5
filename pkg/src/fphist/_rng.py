"""Counter-based random streams.

Every variate is a pure function of ``(seed, domain, stream, counter)``, so a
trajectory (or a partition cell) draws the same numbers no matter how the work
is chunked across threads. The mixer is the SplitMix64 finalizer applied to a
Weyl sequence; for a fixed key the outputs over consecutive counters are the
SplitMix64 stream.
"""

import numpy as np
from scipy.special import ndtri

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_S32 = np.uint64(32)

# stream domains keep simulation and metric draws disjoint for one seed
DOMAIN_SDE = 1
DOMAIN_METRICS = 2
DOMAIN_AUX = 3

MAX_SEED = 2**64 - 1


def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_key(seed, domain):
    """64-bit key for ``(seed, domain)``."""
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    with np.errstate(over="ignore"):
        z = np.array([int(seed)], dtype=np.uint64)
        z = _mix64(z + np.uint64(domain) * _GAMMA)
        return _mix64(z ^ _GAMMA)[0]


def random_bits(key, stream, counter):
    """uint64 words for each ``(stream, counter)`` pair (broadcast).

    ``stream`` occupies the high 32 bits of the position and ``counter`` the
    low 32 bits, so streams never overlap.
    """
    stream = np.asarray(stream, dtype=np.uint64)
    counter = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        pos = (stream << _S32) | counter
        return _mix64(np.uint64(key) + (pos + np.uint64(1)) * _GAMMA)


def uniforms(key, stream, counter):
    """Uniform variates in the open interval (0, 1)."""
    bits = random_bits(key, stream, counter)
    return ((bits >> _S11).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normals(key, stream, counter):
    """Standard normal variates by inverse-CDF transform of :func:`uniforms`."""
    return ndtri(uniforms(key, stream, counter))
