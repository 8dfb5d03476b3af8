"""Gauss-Newton GMM and a bracketed scalar root finder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import optimize as _opt

from ..errors import BracketError, InvalidArgumentError, NonConvergenceError, RankDeficiencyError

__all__ = [
    "GmmProblem",
    "GmmReport",
    "GmmResult",
    "gmm_solve",
    "central_jacobian",
    "root_find_1d",
]

WEIGHTINGS = ("identity", "two-step")


@dataclass(frozen=True)
class GmmProblem:
    """Moment conditions E[g(theta; record)] = 0.

    ``moments(theta, data)`` returns the (n, m) array of per-record moment
    contributions; the sample moment is its column mean.
    """

    moments: Callable[[np.ndarray, Any], np.ndarray]
    start: np.ndarray
    n_moments: int
    weighting: str = "identity"
    xtol: float = 1e-9
    ftol: float = 1e-12
    max_iter: int = 200
    rank_tol: float = 1e-10
    labels: Sequence[str] | None = None
    # optional analytic d mbar / d theta, called as jacobian(theta, data) -> (m, p)
    jacobian: Callable[[np.ndarray, Any], np.ndarray] | None = None

    def __post_init__(self):
        start = np.array(self.start, dtype=float).ravel()
        object.__setattr__(self, "start", start)
        if self.n_moments < start.size:
            raise InvalidArgumentError(
                f"under-identified: {self.n_moments} moments for {start.size} parameters"
            )
        if self.weighting not in WEIGHTINGS:
            raise InvalidArgumentError(f"weighting must be one of {WEIGHTINGS}")

    @property
    def n_params(self) -> int:
        return self.start.size


@dataclass(frozen=True)
class GmmReport:
    converged: bool
    objective: float
    iterations: int
    condition: float
    gradient_norm: float
    moment_norm: float
    weighting: str


@dataclass(frozen=True)
class GmmResult:
    params: np.ndarray
    report: GmmReport
    weight: np.ndarray = field(repr=False, default=None)


def _step_sizes(theta):
    return np.maximum(1e-6, 1e-6 * np.abs(theta))


def central_jacobian(fun: Callable[[np.ndarray], np.ndarray], theta) -> np.ndarray:
    """d fun / d theta by central differences, step max(1e-6, 1e-6|theta_j|)."""
    theta = np.asarray(theta, dtype=float)
    steps = _step_sizes(theta)
    cols = []
    for j, h in enumerate(steps):
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        cols.append((np.asarray(fun(up)) - np.asarray(fun(dn))) / (2.0 * h))
    return np.column_stack(cols)


def _weight_root(weight):
    if weight is None:
        return None
    # W = L^T L with L upper-triangular
    return np.linalg.cholesky(weight).T


def _gauss_newton(problem: GmmProblem, data, theta0, weight):
    root = _weight_root(weight)

    def mbar(theta):
        return problem.moments(theta, data).mean(axis=0)

    def jacobian(theta):
        if problem.jacobian is not None:
            return np.asarray(problem.jacobian(theta, data), dtype=float)
        return central_jacobian(mbar, theta)

    def wmul(v):
        return v if root is None else root @ v

    def objective(gbar):
        r = wmul(gbar)
        return float(r @ r)

    theta = np.array(theta0, dtype=float)
    gbar = mbar(theta)
    if not np.all(np.isfinite(gbar)):
        raise InvalidArgumentError("moment function is not finite at the starting value")
    q = objective(gbar)
    converged = False
    it = 0
    cond = np.nan
    for it in range(1, problem.max_iter + 1):
        jac = jacobian(theta)
        lj = wmul(jac)
        u, s, vt = np.linalg.svd(lj, full_matrices=False)
        smax = s[0] if s.size else 0.0
        cond = smax / s[-1] if s[-1] > 0 else np.inf
        bad = s <= problem.rank_tol * max(smax, np.finfo(float).tiny)
        if np.any(bad):
            dirs = vt[bad]
            raise RankDeficiencyError(
                _describe_deficiency(dirs, problem.labels),
                directions=dirs,
                labels=problem.labels,
            )
        step = -(vt.T @ ((u.T @ wmul(gbar)) / s))
        t = 1.0
        while True:
            cand = theta + t * step
            try:
                gc = mbar(cand)
                qc = objective(gc) if np.all(np.isfinite(gc)) else np.inf
            except (OverflowError, FloatingPointError, InvalidArgumentError):
                # the trial point left the model's domain; shorten the step
                gc, qc = None, np.inf
            if qc <= q or t < 1e-10:
                break
            t *= 0.5
        if not qc <= q:
            # No descent along the Gauss-Newton direction: stationary to working precision.
            converged = True
            break
        dtheta = cand - theta
        dq = q - qc
        theta, gbar, q = cand, gc, qc
        if np.max(np.abs(dtheta)) <= problem.xtol * (1.0 + np.max(np.abs(theta))) or dq < problem.ftol:
            converged = True
            break
    jac = jacobian(theta)
    grad = 2.0 * wmul(jac).T @ wmul(gbar)
    report = GmmReport(
        converged=converged,
        objective=q,
        iterations=it,
        condition=float(cond),
        gradient_norm=float(np.linalg.norm(grad)),
        moment_norm=float(np.linalg.norm(gbar)),
        weighting=problem.weighting,
    )
    if not converged:
        raise NonConvergenceError(
            f"GMM did not converge in {problem.max_iter} iterations (objective {q:.3e})",
            best=theta,
            report=report,
        )
    return theta, report


def _describe_deficiency(dirs, labels):
    parts = []
    for d in dirs:
        idx = np.argsort(-np.abs(d))[:3]
        names = [labels[i] if labels else f"theta[{i}]" for i in idx if abs(d[i]) > 1e-3]
        parts.append("+".join(names))
    return "singular GMM normal equations along: " + "; ".join(parts)


def gmm_solve(problem: GmmProblem, data, weight: np.ndarray | None = None) -> GmmResult:
    """Minimize mbar' W mbar by Gauss-Newton.

    Identity weighting unless ``weight`` is given; ``weighting="two-step"``
    re-solves from the first-step estimate with the inverse sample covariance
    of the moment contributions.
    """
    theta, report = _gauss_newton(problem, data, problem.start, weight)
    if problem.weighting == "two-step":
        contrib = problem.moments(theta, data)
        dev = contrib - contrib.mean(axis=0)
        cov = dev.T @ dev / contrib.shape[0]
        try:
            weight = np.linalg.inv(cov)
            weight = 0.5 * (weight + weight.T)
            np.linalg.cholesky(weight)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("moment covariance is singular; two-step weight undefined") from exc
        theta, report = _gauss_newton(problem, data, theta, weight)
    return GmmResult(params=theta, report=report, weight=weight)


def root_find_1d(f: Callable[[float], float], bracket: tuple[float, float]) -> float:
    """Brent's method on a sign-changing bracket (scipy ``brentq``)."""
    lo, hi = map(float, bracket)
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f={flo:.3g}, {fhi:.3g}")
    return float(_opt.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))
