"""k-nearest-neighbour mutual information between displacements and actions.

Implements the first Kraskov-Stoegbauer-Grassberger estimator (max-norm
balls in the joint space, strict marginal counts) with exact brute-force
neighbour search. Sample sizes in the self-recognition pipeline are a few
hundred at most, so an O(N^2) compiled scan is cheap and keeps the counts
exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

_EULER_GAMMA = 0.57721566490153286061
# Bernoulli-number coefficients B_2n / (2n) of the asymptotic series.
_ASYMPTOTIC = (1.0 / 12, -1.0 / 120, 1.0 / 252, -1.0 / 240, 1.0 / 132,
               -691.0 / 32760, 1.0 / 12)
_SHIFT_TO = 10.0
_TIE_JITTER = 1e-10


def digamma(x: ArrayLike) -> float | NDArray[np.float64]:
    """Digamma function psi(x) for positive real arguments.

    Shifts the argument above 10 with psi(x) = psi(x + 1) - 1/x, then sums
    the asymptotic expansion. Accepts scalars or arrays.

    Raises:
        ValueError: if any argument is <= 0 or not finite.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("digamma is only defined here for finite x > 0")
    z = arr.copy()
    acc = np.zeros_like(z)
    small = z < _SHIFT_TO
    while np.any(small):
        acc[small] -= 1.0 / z[small]
        z[small] += 1.0
        small = z < _SHIFT_TO
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for coeff in reversed(_ASYMPTOTIC):
        series = (series + coeff) * inv2
    out = acc + np.log(z) - 0.5 / z - series
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class SampleSet:
    """Paired samples: row i of ``x`` goes with row i of ``y``."""

    x: NDArray[np.float64]
    y: NDArray[np.float64]

    def __post_init__(self):
        x = _as_2d(self.x)
        y = _as_2d(self.y)
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"x has {x.shape[0]} samples but y has {y.shape[0]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    def swapped(self) -> SampleSet:
        return SampleSet(self.y, self.x)


@dataclass(frozen=True)
class MiConfig:
    k: int = 3
    noise_variance: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")


def _as_2d(a: ArrayLike) -> NDArray[np.float64]:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected 1-D or 2-D samples, got shape {arr.shape}")
    return arr


def add_gaussian_noise(samples: SampleSet, variance: float, seed: int) -> SampleSet:
    """Add i.i.d. N(0, variance) noise to every coordinate of ``samples.x``.

    The paired ``y`` samples are never perturbed.
    """
    if variance < 0:
        raise ValueError("variance must be >= 0")
    if variance == 0:
        return samples
    rng = np.random.default_rng(seed)
    noisy = samples.x + rng.normal(0.0, math.sqrt(variance), size=samples.x.shape)
    return SampleSet(noisy, samples.y)


def _chebyshev(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """Max-norm distances between the rows of a (..., n, d) and b (..., m, d)."""
    out = np.abs(a[..., :, None, 0] - b[..., None, :, 0])
    for j in range(1, a.shape[-1]):
        np.maximum(out, np.abs(a[..., :, None, j] - b[..., None, :, j]), out=out)
    return out


@njit(cache=True)
def _ksg_counts(x, dist_y, k):
    """Marginal neighbour counts n_x, n_y for a batch of x sample sets.

    ``x`` is (m, n, dx); ``dist_y`` is the (n, n) max-norm table of y.
    """
    m, n, dx = x.shape
    n_x = np.empty((m, n), dtype=np.int64)
    n_y = np.empty((m, n), dtype=np.int64)
    table = np.zeros((n, n))
    nearest = np.empty(k)
    for b in range(m):
        for i in range(n):
            for j in range(i + 1, n):
                d = 0.0
                for c in range(dx):
                    v = abs(x[b, i, c] - x[b, j, c])
                    if v > d:
                        d = v
                table[i, j] = d
                table[j, i] = d
        for i in range(n):
            dist_x = table[i]
            # k smallest joint distances, excluding the point itself
            filled = 0
            for j in range(n):
                if j == i:
                    continue
                d = max(dist_x[j], dist_y[i, j])
                if filled < k:
                    pos = filled
                    filled += 1
                elif d < nearest[k - 1]:
                    pos = k - 1
                else:
                    continue
                while pos > 0 and nearest[pos - 1] > d:
                    nearest[pos] = nearest[pos - 1]
                    pos -= 1
                nearest[pos] = d
            eps = nearest[k - 1]
            cx = 0
            cy = 0
            for j in range(n):
                if j == i:
                    continue
                if dist_x[j] < eps:
                    cx += 1
                if dist_y[i, j] < eps:
                    cy += 1
            n_x[b, i] = cx
            n_y[b, i] = cy
    return n_x, n_y


def _jitter(shape, seed: int, stream: int) -> NDArray[np.float64]:
    rng = np.random.default_rng([seed, stream])
    return _TIE_JITTER * rng.uniform(-1.0, 1.0, size=shape)


def ksg_mi(samples: SampleSet, config: MiConfig = MiConfig()) -> float:
    """KSG estimate of I(x; y) in nats.

    If ``config.noise_variance`` is positive the noise is added to ``x``
    first; otherwise a 1e-10 seeded jitter breaks exact distance ties. The
    raw estimate is returned and may be slightly negative.

    Raises:
        ValueError: if there are not more samples than neighbours.
    """
    n = len(samples)
    if n <= config.k:
        raise ValueError(f"need more than k={config.k} samples, got {n}")
    if config.noise_variance > 0:
        samples = add_gaussian_noise(samples, config.noise_variance, config.rng_seed)
        x = samples.x
    else:
        x = samples.x + _jitter(samples.x.shape, config.rng_seed, 0)
    y = samples.y + _jitter(samples.y.shape, config.rng_seed, 1)
    return float(ksg_mi_batch(x[None], y, config.k)[0])


def ksg_mi_batch(xs: ArrayLike, y: ArrayLike, k: int = 3) -> NDArray[np.float64]:
    """KSG estimates for many x sample sets sharing one y sample set.

    ``xs`` has shape (m, n, dx) and ``y`` shape (n, dy). No noise or jitter
    is applied; callers are responsible for tie-breaking.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 2:
        xs = xs[..., None]
    y = _as_2d(y)
    m, n, _ = xs.shape
    if y.shape[0] != n:
        raise ValueError("x and y sample counts differ")
    if n <= k:
        raise ValueError(f"need more than k={k} samples, got {n}")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")
    dist_y = _chebyshev(y, y)
    n_x, n_y = _ksg_counts(np.ascontiguousarray(xs), dist_y, k)
    psi = digamma(np.arange(1, n + 1))  # psi[c] = psi(c + 1)
    return digamma(k) + digamma(n) - (psi[n_x] + psi[n_y]).mean(axis=1)
