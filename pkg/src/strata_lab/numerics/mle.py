"""Maximum-likelihood fits for the nuisance models: probit and Gaussian linear."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

from ..errors import InvalidArgumentError, NonConvergenceError, RankDeficiencyError, SeparationError
from .special import inverse_mills

__all__ = ["ProbitFit", "probit_mle", "LinearFit", "linear_gaussian_mle"]

# |index| beyond this means fitted probabilities are 0/1 to double precision.
_SEPARATION_INDEX = 38.0


@dataclass(frozen=True)
class ProbitFit:
    coef: np.ndarray
    loglik: float
    score_norm: float
    iterations: int
    cov: np.ndarray  # inverse observed information


@dataclass(frozen=True)
class LinearFit:
    coef: np.ndarray
    sigma: float  # MLE residual SD (divisor n)
    cov: np.ndarray


def _check_design(x, n):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != n:
        raise InvalidArgumentError("design rows must match the response length")
    if n == 0:
        raise InvalidArgumentError("empty design")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("design contains non-finite values")
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise RankDeficiencyError(f"design has rank < {x.shape[1]} columns")
    return x


def probit_mle(y, x, offset=None, start=None, max_iter: int = 100, tol: float = 1e-8) -> ProbitFit:
    """Newton-Raphson for pr(y=1) = Phi(offset + x b).

    Stops when the mean score falls below ``tol`` or the Newton step vanishes.
    """
    y = np.asarray(y, dtype=float).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("probit responses must be 0/1")
    n = y.size
    x = _check_design(x, n)
    if y.min() == y.max():
        raise SeparationError("only one response class present; the probit MLE diverges")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float).ravel()
    q = 2.0 * y - 1.0
    beta = np.zeros(x.shape[1]) if start is None else np.array(start, dtype=float)

    def loglik(b):
        return float(_sp.log_ndtr(q * (off + x @ b)).sum())

    ll = loglik(beta)
    for it in range(1, max_iter + 1):
        eta = off + x @ beta
        if np.max(np.abs(eta)) > _SEPARATION_INDEX:
            raise SeparationError("probit index diverging: responses are (quasi-)separated")
        lam = q * inverse_mills(q * eta)
        score = x.T @ lam
        info = (x * (lam * (lam + eta))[:, None]).T @ x
        if np.linalg.norm(score) < tol * n:
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular probit information matrix") from exc
        if np.max(np.abs(step)) < 1e-12 * (1.0 + np.max(np.abs(beta))):
            break
        t = 1.0
        while True:
            cand = beta + t * step
            llc = loglik(cand)
            if llc >= ll or t < 1e-8:
                break
            t *= 0.5
        beta, ll = cand, llc
    else:
        raise NonConvergenceError(f"probit Newton-Raphson hit {max_iter} iterations")
    cov = np.linalg.inv(info)
    return ProbitFit(coef=beta, loglik=ll, score_norm=float(np.linalg.norm(score)), iterations=it, cov=cov)


def linear_gaussian_mle(y, x) -> LinearFit:
    y = np.asarray(y, dtype=float).ravel()
    x = _check_design(x, y.size)
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    sigma = float(np.sqrt(resid @ resid / y.size))
    cov = sigma**2 * np.linalg.inv(x.T @ x)
    return LinearFit(coef=coef, sigma=sigma, cov=cov)
