"""Counter-based random streams addressed by integer index sequences.

Every random object of the estimator (time fractions, Brownian increments,
Poisson counts, jump marks) is a pure function of

    (master_seed, theta, purpose, counter...)

where ``theta`` is a finite integer sequence.  There is no generator state:
draws can be produced in any order, in batches, or one at a time, and always
agree.

Construction
------------
The master seed is expanded to a 128-bit state with BLAKE2b.  Each element of
``theta``, the purpose tag and every counter word are then absorbed one after
another into the 128-bit state with a keyed mixing round built from the
MurmurHash3 64-bit finalizer; each kind of word (theta entry, purpose,
counter) uses its own tweak constant so the three domains cannot alias.  The
output word is a final mix of both state lanes.  Uniforms take the top 53 bits
of that word and are centred in their bin, so they lie in the open interval
(0, 1).  Gaussians use the inverse normal CDF (``scipy.special.ndtri``) applied
to one uniform; Poisson counts use sequential CDF inversion of one uniform.
Both methods are fixed so that every consumer of a draw reproduces it
bit-for-bit.

Counter layout per purpose:

* ``TIME_FRACTION``: counter ``(0,)``
* ``GAUSSIAN``: ``(segment_index, coordinate)``
* ``POISSON_COUNT``: ``(segment_index,)``
* ``JUMP_MARK``: ``(segment_index, mark_index, coordinate)``
"""

from __future__ import annotations

import enum
import hashlib
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

_U64 = np.uint64
_MASK = (1 << 64) - 1

_M1 = _U64(0xFF51AFD7ED558CCD)
_M2 = _U64(0xC4CEB9FE1A85EC53)
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_TWEAK_THETA = _U64(0x243F6A8885A308D3)
_TWEAK_PURPOSE = _U64(0x13198A2E03707344)
_TWEAK_COUNTER = _U64(0xA4093822299F31D0)
_TWEAK_OUT = _U64(0x082EFA98EC4E6C89)


class Purpose(enum.IntEnum):
    TIME_FRACTION = 1
    GAUSSIAN = 2
    POISSON_COUNT = 3
    JUMP_MARK = 4


def _fmix(k):
    k = k ^ (k >> _U64(33))
    k = k * _M1
    k = k ^ (k >> _U64(33))
    k = k * _M2
    return k ^ (k >> _U64(33))


def _rotl(k, r):
    return (k << _U64(r)) | (k >> _U64(64 - r))


def _as_u64(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == np.uint64:
        return arr
    return np.asarray(arr, dtype=np.int64).astype(np.uint64)


def _absorb(a, b, word, tweak):
    h = _fmix(_as_u64(word) ^ tweak)
    a2 = _fmix(a + h)
    b2 = _fmix(b ^ a2 ^ _rotl(h, 31))
    return a2 ^ _rotl(b2, 29), b2


def _seed_state(master_seed: int) -> tuple[np.uint64, np.uint64]:
    raw = (int(master_seed) & _MASK).to_bytes(8, "little")
    digest = hashlib.blake2b(raw, digest_size=16, person=b"pidemlp-rng-v1").digest()
    return _U64(int.from_bytes(digest[:8], "little")), _U64(int.from_bytes(digest[8:], "little"))


@dataclass(frozen=True, order=True)
class ThetaIndex:
    """A finite integer sequence addressing one independent copy of randomness."""

    path: tuple[int, ...]

    def __post_init__(self):
        path = tuple(int(p) for p in self.path)
        if not path:
            raise ValueError("theta index must have at least one entry")
        object.__setattr__(self, "path", path)

    @classmethod
    def root(cls, value: int = 0) -> ThetaIndex:
        return cls((value,))

    def child(self, *entries: int) -> ThetaIndex:
        return ThetaIndex(self.path + tuple(entries))

    def __len__(self) -> int:
        return len(self.path)

    def __str__(self) -> str:
        return "(" + ",".join(str(p) for p in self.path) + ")"

    @classmethod
    def parse(cls, text: str) -> ThetaIndex:
        body = text.strip().strip("()[]")
        return cls(tuple(int(p) for p in body.split(",") if p.strip()))


@dataclass
class ThetaBatch:
    """A batch of theta indices of equal length, with their absorbed hash states.

    ``paths`` is kept only for diagnostics (error messages, draw logs); the
    draws depend on ``key_a``/``key_b`` alone.
    """

    master_seed: int
    key_a: np.ndarray
    key_b: np.ndarray
    paths: np.ndarray

    @classmethod
    def from_thetas(cls, master_seed: int, thetas: Sequence[ThetaIndex]) -> ThetaBatch:
        if not thetas:
            raise ValueError("empty theta batch")
        depth = len(thetas[0])
        if any(len(th) != depth for th in thetas):
            raise ValueError("all theta indices in a batch must have the same length")
        paths = np.array([th.path for th in thetas], dtype=np.int64)
        a0, b0 = _seed_state(master_seed)
        a = np.full(len(thetas), a0, dtype=np.uint64)
        b = np.full(len(thetas), b0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            for col in range(depth):
                a, b = _absorb(a, b, paths[:, col], _TWEAK_THETA)
        return cls(int(master_seed), a, b, paths)

    @classmethod
    def single(cls, master_seed: int, theta: ThetaIndex) -> ThetaBatch:
        return cls.from_thetas(master_seed, [theta])

    def __len__(self) -> int:
        return self.key_a.shape[0]

    def theta(self, row: int) -> ThetaIndex:
        return ThetaIndex(tuple(int(v) for v in self.paths[row]))

    def take(self, rows) -> ThetaBatch:
        rows = np.asarray(rows)
        return ThetaBatch(self.master_seed, self.key_a[rows], self.key_b[rows], self.paths[rows])

    def repeat(self, count: int) -> ThetaBatch:
        """Each row repeated ``count`` times (row-major blocks)."""
        return ThetaBatch(
            self.master_seed,
            np.repeat(self.key_a, count),
            np.repeat(self.key_b, count),
            np.repeat(self.paths, count, axis=0),
        )

    def children(self, first: int, seconds: Iterable[int]) -> ThetaBatch:
        """Rows ``(theta_j, first, s)`` for every row j and every s, j-major."""
        seconds = np.asarray(list(seconds), dtype=np.int64)
        n, k = len(self), seconds.shape[0]
        a = np.repeat(self.key_a, k)
        b = np.repeat(self.key_b, k)
        tail = np.tile(seconds, n)
        with np.errstate(over="ignore"):
            a, b = _absorb(a, b, np.full(n * k, first, dtype=np.int64), _TWEAK_THETA)
            a, b = _absorb(a, b, tail, _TWEAK_THETA)
        paths = np.concatenate(
            [
                np.repeat(self.paths, k, axis=0),
                np.full((n * k, 1), first, dtype=np.int64),
                tail[:, None],
            ],
            axis=1,
        )
        return ThetaBatch(self.master_seed, a, b, paths)

    def uniforms(self, purpose: Purpose, *counters) -> np.ndarray:
        """Uniform(0,1) draws; counters broadcast against the leading axis of rows.

        Each counter is either a scalar or an array whose leading axis has
        length ``len(self)`` (extra trailing axes broadcast).
        """
        return _uniforms(self.key_a, self.key_b, purpose, counters)


def _uniforms(key_a, key_b, purpose, counters) -> np.ndarray:
    shapes = [key_a.shape] + [_lead_shape(np.asarray(c), key_a.shape[0]) for c in counters]
    ndim = max(len(s) for s in shapes)
    shape = np.broadcast_shapes(*[s + (1,) * (ndim - len(s)) for s in shapes if s])
    a = _expand(key_a, shape)
    b = _expand(key_b, shape)
    with np.errstate(over="ignore"):
        a, b = _absorb(a, b, np.full(shape, int(purpose), dtype=np.int64), _TWEAK_PURPOSE)
        for c in counters:
            a, b = _absorb(a, b, _expand(np.asarray(c), shape), _TWEAK_COUNTER)
        out = _fmix(a ^ _rotl(b, 17) ^ _TWEAK_OUT) + _GOLDEN * (b >> _U64(11))
        out = _fmix(out)
    return ((out >> _U64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _lead_shape(arr: np.ndarray, n: int) -> tuple[int, ...]:
    if arr.ndim == 0:
        return ()
    if arr.shape[0] != n:
        raise ValueError(f"counter leading axis {arr.shape[0]} does not match batch size {n}")
    return arr.shape


def _expand(arr: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if arr.ndim == 0:
        return np.broadcast_to(arr, shape)
    extra = len(shape) - arr.ndim
    return np.broadcast_to(arr.reshape(arr.shape + (1,) * extra), shape)


def gaussians(batch: ThetaBatch, segment_index, d: int) -> np.ndarray:
    """Standard normal matrix of shape (len(batch), d) for the given segments."""
    seg = np.broadcast_to(np.asarray(segment_index, dtype=np.int64), (len(batch),))
    coords = np.broadcast_to(np.arange(d, dtype=np.int64), (len(batch), d))
    return ndtri(batch.uniforms(Purpose.GAUSSIAN, seg[:, None], coords))


def poisson_from_uniform(u: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """Poisson counts by sequential inversion of the CDF (vectorised)."""
    u = np.asarray(u, dtype=np.float64)
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), u.shape)
    k = np.zeros(u.shape, dtype=np.int64)
    p = np.exp(-mean)
    cdf = p.copy()
    active = (u > cdf) & (mean > 0)
    while active.any():
        idx = np.nonzero(active)[0]
        k[idx] += 1
        p[idx] = p[idx] * mean[idx] / k[idx]
        cdf[idx] += p[idx]
        # p underflow means the remaining tail mass is below double precision
        active[idx] = (u[idx] > cdf[idx]) & (p[idx] > 0.0)
    return k


@dataclass(frozen=True)
class RngStream:
    """One (seed, theta, purpose) stream; ``uniform(*counter)`` reads a cell."""

    master_seed: int
    theta: ThetaIndex
    purpose: Purpose

    def uniform(self, *counter: int) -> float:
        batch = ThetaBatch.single(self.master_seed, self.theta)
        return float(batch.uniforms(self.purpose, *counter)[0])

    def first(self, k: int) -> np.ndarray:
        """The first ``k`` draws at single-word counters 0..k-1."""
        batch = ThetaBatch.single(self.master_seed, self.theta)
        return batch.uniforms(self.purpose, np.arange(k, dtype=np.int64)[None, :])[0]


def sample_time_fraction(seed: int, theta: ThetaIndex) -> float:
    return float(ThetaBatch.single(seed, theta).uniforms(Purpose.TIME_FRACTION, 0)[0])


def mathfrak_T(t: float, fraction, T: float):
    """Random time in [t, T] from a fraction in [0, 1]."""
    if not np.all((0.0 <= np.asarray(t)) & (np.asarray(t) <= T)):
        raise ValueError(f"need 0 <= t <= T, got t={t}, T={T}")
    return t + (T - t) * fraction


def gaussian_increment(seed: int, theta: ThetaIndex, segment_index: int, dt: float, d: int) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    z = gaussians(ThetaBatch.single(seed, theta), segment_index, d)[0]
    return np.sqrt(dt) * z


def poisson_counts(batch: ThetaBatch, segment_index, mean) -> np.ndarray:
    seg = np.broadcast_to(np.asarray(segment_index, dtype=np.int64), (len(batch),))
    u = batch.uniforms(Purpose.POISSON_COUNT, seg)
    return poisson_from_uniform(u, mean)


def mark_uniforms(batch: ThetaBatch, segment_index, mark_index: int, d: int) -> np.ndarray:
    seg = np.broadcast_to(np.asarray(segment_index, dtype=np.int64), (len(batch),))
    coords = np.broadcast_to(np.arange(d, dtype=np.int64), (len(batch), d))
    return batch.uniforms(Purpose.JUMP_MARK, seg[:, None], mark_index, coords)


def poisson_segment(seed: int, theta: ThetaIndex, segment_index: int, dt: float, levy) -> list[np.ndarray]:
    """Jump marks of one segment of length ``dt`` for a single theta."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if levy.intensity == 0:
        return []
    batch = ThetaBatch.single(seed, theta)
    count = int(poisson_counts(batch, segment_index, levy.intensity * dt)[0])
    return [levy.jump_sampler(mark_uniforms(batch, segment_index, j, levy.dim))[0] for j in range(count)]
