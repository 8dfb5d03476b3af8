"""Deterministic, isolated random streams.

A stream is addressed by ``SeedSpec(base, index, sub)``; the generator state
is a pure function of that triple via ``numpy.random.SeedSequence`` spawn
keys, so sibling streams never overlap and adding streams never perturbs
existing ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError

__all__ = ["SeedSpec", "generator", "rng_normal", "rng_bernoulli", "rng_mvn2"]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SeedSpec:
    base: int
    index: int = 0
    sub: tuple[int, ...] = ()

    def __post_init__(self):
        if self.index < 0 or any(k < 0 for k in self.sub):
            raise InvalidArgumentError("stream indices must be nonnegative")

    def child(self, *keys: int) -> "SeedSpec":
        return SeedSpec(self.base, self.index, self.sub + tuple(int(k) for k in keys))


def generator(seed: SeedSpec) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed.base & _MASK64, spawn_key=(seed.index, *seed.sub))
    return np.random.Generator(np.random.PCG64(ss))


def _gen(seed):
    return seed if isinstance(seed, np.random.Generator) else generator(seed)


def rng_normal(size, seed, mean=0.0, sd=1.0) -> np.ndarray:
    return _gen(seed).normal(mean, sd, size)


def rng_bernoulli(p, seed) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise InvalidArgumentError("Bernoulli probabilities must lie in [0, 1]")
    return (_gen(seed).random(p.shape) < p).astype(np.int8)


def rng_mvn2(mean, cov, size: int, seed) -> np.ndarray:
    """(size, 2) bivariate normal draws via the Cholesky factor of ``cov``.

    ``mean`` may be a pair or a (size, 2) array of per-row means.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (2, 2) or not np.allclose(cov, cov.T, rtol=0, atol=1e-14):
        raise InvalidArgumentError("covariance must be a symmetric 2x2 matrix")
    s11, s12, s22 = cov[0, 0], cov[0, 1], cov[1, 1]
    det = s11 * s22 - s12 * s12
    if s11 <= 0 or det <= 0:
        raise InvalidArgumentError("covariance must be positive definite")
    l11 = np.sqrt(s11)
    l21 = s12 / l11
    l22 = np.sqrt(det / s11)
    e = _gen(seed).standard_normal((size, 2))
    out = np.empty((size, 2))
    out[:, 0] = l11 * e[:, 0]
    out[:, 1] = l21 * e[:, 0] + l22 * e[:, 1]
    return out + np.asarray(mean, dtype=float)
