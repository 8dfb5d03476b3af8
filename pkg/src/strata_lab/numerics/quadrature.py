"""Gauss-Hermite rules for expectations under a normal law."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp as _logsumexp

from ..errors import InvalidArgumentError

__all__ = ["QuadratureRule", "gauss_hermite", "gh_expectation", "gh_log_expectation", "DEFAULT_ORDER"]

DEFAULT_ORDER = 30


@dataclass(frozen=True)
class QuadratureRule:
    """Physicists' Gauss-Hermite nodes/weights (weight function exp(-x^2))."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        if self.order < 1 or len(self.nodes) != self.order or len(self.weights) != self.order:
            raise InvalidArgumentError("rule arrays must have length == order >= 1")
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.weights / math.sqrt(math.pi)


@lru_cache(maxsize=32)
def gauss_hermite(order: int = DEFAULT_ORDER) -> QuadratureRule:
    if order < 1:
        raise InvalidArgumentError("quadrature order must be positive")
    x, w = np.polynomial.hermite.hermgauss(order)
    # hermgauss returns ascending nodes; symmetrize exactly to kill round-off.
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadratureRule(nodes=x, weights=w, order=order)


def gh_expectation(f, mu, sigma, rule: QuadratureRule | None = None):
    """E f(W) for W ~ N(mu, sigma^2).

    ``mu`` and ``sigma`` may be arrays (broadcast against each other); ``f``
    must accept an array whose trailing axis runs over the quadrature nodes.
    """
    rule = rule or gauss_hermite()
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise InvalidArgumentError("sigma must be positive and finite")
    mu = np.asarray(mu, dtype=float)
    pts = mu[..., None] + math.sqrt(2.0) * sigma[..., None] * rule.nodes
    vals = np.asarray(f(pts), dtype=float)
    out = vals @ rule.normalized_weights
    return float(out) if out.ndim == 0 else out


def gh_log_expectation(logf, mu, sigma, rule: QuadratureRule | None = None):
    """log E exp(logf(W)) for W ~ N(mu, sigma^2), stable when E exp(logf) underflows."""
    rule = rule or gauss_hermite()
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise InvalidArgumentError("sigma must be positive and finite")
    mu = np.asarray(mu, dtype=float)
    pts = mu[..., None] + math.sqrt(2.0) * sigma[..., None] * rule.nodes
    out = _logsumexp(np.asarray(logf(pts), dtype=float), b=rule.normalized_weights, axis=-1)
    return float(out) if np.ndim(out) == 0 else out
