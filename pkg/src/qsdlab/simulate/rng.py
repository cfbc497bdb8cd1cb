"""Counter-based per-path random streams for numba kernels.

Path i of a run with master seed s gets a key k and an odd increment g, both
hashed from (s, i); its n-th 64-bit word is mix64(k + n g).  This is the
SplitMix construction with one split per path, so the randomness of a path
depends only on (s, i) and results cannot depend on how paths are spread
across workers.

Kernels keep the stream as three local scalars ``(k, g, n)`` and thread the
counter through calls: ``z, n = normal(k, g, n)``.  Normals use a 128-layer
ziggurat; exponentials use inversion; positive stable variables use
Kanter's representation.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SALT = np.uint64(0xD1B54A32D192ED03)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_MASK7 = np.uint64(0x7F)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(nogil=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(nogil=True)
def stream_keys(seed, index):
    """(key, odd increment) of path ``index`` under master seed ``seed``."""
    s = mix64(np.uint64(seed) ^ _SALT)
    h = mix64(s + mix64(np.uint64(index) * _GOLDEN + _GOLDEN))
    g = mix64(h ^ _SALT) | _ONE
    return h, g


@nb.njit(nogil=True, inline="always")
def next_u64(k, g, n):
    n += _ONE
    return mix64(k + n * g), n


@nb.njit(nogil=True, inline="always")
def _unit(w):
    # 53 high bits; the signed conversion is cheaper than the unsigned one
    return float(np.int64(w >> _S11)) * _INV53


@nb.njit(nogil=True, inline="always")
def uniform(k, g, n):
    """Uniform on [0, 1)."""
    w, n = next_u64(k, g, n)
    return _unit(w), n


@nb.njit(nogil=True, inline="always")
def uniform_open(k, g, n):
    """Uniform on (0, 1)."""
    w, n = next_u64(k, g, n)
    return _unit(w) + 0.5 * _INV53, n


def _ziggurat_tables(layers=128, r=3.442619855899, v=9.91256303526217e-3):
    f = lambda t: math.exp(-0.5 * t * t)  # noqa: E731
    x = np.zeros(layers + 1)
    x[0] = v / f(r)
    x[1] = r
    for i in range(2, layers):
        x[i] = math.sqrt(-2.0 * math.log(v / x[i - 1] + f(x[i - 1])))
    ratio = x[1:] / x[:-1]
    return x, ratio


_ZX, _ZR = _ziggurat_tables()
_ZIG_R = 3.442619855899


@nb.njit(nogil=True)
def _normal_slow(k, g, n, w):
    i = int(w & _MASK7)
    u = 2.0 * _unit(w) - 1.0
    while True:
        if abs(u) < _ZR[i]:
            return u * _ZX[i], n
        if i == 0:
            while True:
                a, n = uniform_open(k, g, n)
                b, n = uniform_open(k, g, n)
                a = math.log(a) / _ZIG_R
                b = math.log(b)
                if -2.0 * b >= a * a:
                    break
            return (a - _ZIG_R if u < 0.0 else _ZIG_R - a), n
        x = u * _ZX[i]
        f0 = math.exp(-0.5 * (_ZX[i] * _ZX[i] - x * x))
        f1 = math.exp(-0.5 * (_ZX[i + 1] * _ZX[i + 1] - x * x))
        v, n = uniform(k, g, n)
        if f1 + v * (f0 - f1) < 1.0:
            return x, n
        w, n = next_u64(k, g, n)
        i = int(w & _MASK7)
        u = 2.0 * _unit(w) - 1.0


@nb.njit(nogil=True, inline="always")
def normal(k, g, n):
    """Standard normal variate."""
    w, n = next_u64(k, g, n)
    i = int(w & _MASK7)
    u = 2.0 * _unit(w) - 1.0
    if abs(u) < _ZR[i]:
        return u * _ZX[i], n
    return _normal_slow(k, g, n, w)


@nb.njit(nogil=True, inline="always")
def exponential(k, g, n):
    u, n = uniform_open(k, g, n)
    return -math.log(u), n


@nb.njit(nogil=True)
def positive_stable(k, g, n, a):
    """Positive a-stable variable with Laplace transform exp(-lambda^a), 0 < a < 1."""
    u, n = uniform_open(k, g, n)
    u *= math.pi
    e, n = exponential(k, g, n)
    s = (math.sin(a * u) / math.sin(u) ** (1.0 / a)) * (math.sin((1.0 - a) * u) / e) ** ((1.0 - a) / a)
    return s, n


@nb.njit(nogil=True)
def _fill(kind, seed, stream, size, param):
    out = np.empty(size)
    k, g = stream_keys(seed, stream)
    n = np.uint64(0)
    for j in range(size):
        if kind == 0:
            out[j], n = uniform(k, g, n)
        elif kind == 1:
            out[j], n = normal(k, g, n)
        elif kind == 2:
            out[j], n = exponential(k, g, n)
        else:
            out[j], n = positive_stable(k, g, n, param)
    return out


class CounterRNG:
    """Python access to the kernel streams, for tests and small draws.

    Each call reads a fresh stream, so repeated calls give new numbers while
    the whole sequence of calls stays a function of (seed, stream).
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream)
        self._calls = 0

    def _next_stream(self) -> int:
        s = (self.stream << 24) + self._calls
        self._calls += 1
        return s

    def uniform(self, size: int) -> np.ndarray:
        return _fill(0, self.seed, self._next_stream(), int(size), 0.0)

    def normal(self, size: int) -> np.ndarray:
        return _fill(1, self.seed, self._next_stream(), int(size), 0.0)

    def exponential(self, size: int) -> np.ndarray:
        return _fill(2, self.seed, self._next_stream(), int(size), 0.0)

    def positive_stable(self, a: float, size: int) -> np.ndarray:
        if not 0.0 < a < 1.0:
            raise ValueError("stable index must lie in (0, 1)")
        return _fill(3, self.seed, self._next_stream(), int(size), float(a))
