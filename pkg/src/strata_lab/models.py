"""Parametric model family: bridge, nuisance, ordered-probit strata, outcome means.

Every C-block coefficient is a length-k array so that datasets with several
baseline covariates (CSV columns c, c2, c3, ...) use the same code path; a
scalar is accepted wherever k = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Stratum
from .errors import InvalidArgumentError
from .numerics.special import normal_cdf

__all__ = [
    "BridgeParams",
    "TreatmentParams",
    "WModelParams",
    "OrderedProbitParams",
    "OutcomeParams",
    "CASES",
    "LINKS",
    "CASE_COVARIATES",
    "bridge_h",
    "treatment_prob",
    "w_mean",
    "ordered_probit_pi",
    "assign_stratum",
    "stratum_s",
    "s_from_latent",
    "outcome_index",
    "outcome_mean",
]

CASES = ("i", "ii", "iii", "iv")
LINKS = ("linear", "probit")
# Covariates (besides C) the outcome mean may depend on, per identification case.
CASE_COVARIATES = {"i": (), "ii": ("a",), "iii": ("w",), "iv": ("a", "w")}


def _vec(x) -> np.ndarray:
    out = np.atleast_1d(np.array(x, dtype=float))
    if out.ndim != 1:
        raise InvalidArgumentError("C-block coefficients must be 1-D")
    out.setflags(write=False)
    return out


def _cdot(c, coef) -> np.ndarray | float:
    """c-block linear term; c is (..., k), or any shape when k == 1."""
    c = np.asarray(c, dtype=float)
    if coef.size == 1 and (c.ndim == 0 or c.shape[-1] != 1):
        return c * coef[0]
    return c @ coef


def _finite(*vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("model inputs must be finite")


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class BridgeParams:
    """h(z, w, c) = Phi(alpha0 + exp(alpha1) z + alpha_w w + alpha_c1 c + alpha_c2 c^2)."""

    alpha0: float
    alpha1: float
    alpha_w: float
    alpha_c1: np.ndarray
    alpha_c2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha_c1", _vec(self.alpha_c1))
        object.__setattr__(self, "alpha_c2", _vec(self.alpha_c2))
        if self.alpha_c1.size != self.alpha_c2.size:
            raise InvalidArgumentError("alpha_c1 and alpha_c2 must have equal length")
        _finite(self.as_vector())

    @property
    def k(self) -> int:
        return self.alpha_c1.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.alpha0, self.alpha1, self.alpha_w], self.alpha_c1, self.alpha_c2])

    @classmethod
    def from_vector(cls, v, k: int = 1) -> "BridgeParams":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1], v[2], v[3 : 3 + k], v[3 + k : 3 + 2 * k])

    @staticmethod
    def labels(k: int = 1) -> list[str]:
        return ["alpha0", "alpha1", "alpha_w"] + _clabels("alpha_c1", k) + _clabels("alpha_c2", k)

    def index(self, z, w, c):
        return (
            self.alpha0
            + math.exp(self.alpha1) * np.asarray(z, dtype=float)
            + self.alpha_w * np.asarray(w, dtype=float)
            + self.c_term(c)
        )

    def c_term(self, c):
        c = np.asarray(c, dtype=float)
        return _cdot(c, self.alpha_c1) + _cdot(c * c, self.alpha_c2)


@dataclass(frozen=True)
class TreatmentParams:
    beta0: float
    beta_a: float
    beta_c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta_c", _vec(self.beta_c))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.beta0, self.beta_a], self.beta_c])

    @classmethod
    def from_vector(cls, v, k: int = 1) -> "TreatmentParams":
        return cls(v[0], v[1], v[2 : 2 + k])

    @staticmethod
    def labels(k: int = 1) -> list[str]:
        return ["beta0", "beta_a"] + _clabels("beta_c", k)


@dataclass(frozen=True)
class WModelParams:
    """W | Z, A, C ~ N(q(Z, A, C), sigma_w^2) with q linear in (1, Z, A, C, C^2)."""

    gamma0: float
    gamma_z: float
    gamma_a: float
    gamma_c1: np.ndarray
    gamma_c2: np.ndarray
    sigma_w: float

    def __post_init__(self):
        object.__setattr__(self, "gamma_c1", _vec(self.gamma_c1))
        object.__setattr__(self, "gamma_c2", _vec(self.gamma_c2))
        if not self.sigma_w > 0:
            raise InvalidArgumentError("sigma_w must be positive")

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [[self.gamma0, self.gamma_z, self.gamma_a], self.gamma_c1, self.gamma_c2, [self.sigma_w]]
        )

    @classmethod
    def from_vector(cls, v, k: int = 1) -> "WModelParams":
        return cls(v[0], v[1], v[2], v[3 : 3 + k], v[3 + k : 3 + 2 * k], v[3 + 2 * k])

    @staticmethod
    def labels(k: int = 1) -> list[str]:
        return ["gamma0", "gamma_z", "gamma_a"] + _clabels("gamma_c1", k) + _clabels("gamma_c2", k) + ["sigma_w"]


@dataclass(frozen=True)
class OrderedProbitParams:
    """G* = psi0 + psi_z Z + psi_w W + psi_a A + psi_c C with thresholds 0 and exp(psi1)."""

    psi0: float
    psi1: float
    psi_z: float
    psi_w: float
    psi_a: float
    psi_c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "psi_c", _vec(self.psi_c))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.psi0, self.psi1, self.psi_z, self.psi_w, self.psi_a], self.psi_c])

    @classmethod
    def from_vector(cls, v, k: int = 1) -> "OrderedProbitParams":
        return cls(v[0], v[1], v[2], v[3], v[4], v[5 : 5 + k])

    @staticmethod
    def labels(k: int = 1) -> list[str]:
        return ["psi0", "psi1", "psi_z", "psi_w", "psi_a"] + _clabels("psi_c", k)

    def index(self, z, a, w, c):
        return (
            self.psi0
            + self.psi_z * np.asarray(z, dtype=float)
            + self.psi_w * np.asarray(w, dtype=float)
            + self.psi_a * np.asarray(a, dtype=float)
            + _cdot(c, self.psi_c)
        )


def _clabels(stem, k):
    return [stem] if k == 1 else [f"{stem}[{j}]" for j in range(k)]


@dataclass(frozen=True)
class OutcomeParams:
    """m(z, g, x) = link(theta_{z,g,0} + theta_a A + theta_w W + theta_c C).

    ``intercepts[z, g]`` is indexed by treatment arm and ``Stratum`` code.
    Slopes outside the case's admissible set are structurally zero and never
    enter an evaluation.  Intercepts a fit could not reach (truncated mode) are
    NaN.
    """

    intercepts: np.ndarray
    theta_c: np.ndarray
    theta_a: float = 0.0
    theta_w: float = 0.0
    case: str = "i"
    link: str = "linear"

    def __post_init__(self):
        if self.case not in CASES:
            raise InvalidArgumentError(f"case must be one of {CASES}")
        if self.link not in LINKS:
            raise InvalidArgumentError(f"link must be one of {LINKS}")
        icpt = np.array(self.intercepts, dtype=float).reshape(2, 3)
        icpt.setflags(write=False)
        object.__setattr__(self, "intercepts", icpt)
        object.__setattr__(self, "theta_c", _vec(self.theta_c))
        adm = CASE_COVARIATES[self.case]
        if "a" not in adm and self.theta_a != 0.0:
            raise InvalidArgumentError(f"case ({self.case}) excludes A from the outcome model")
        if "w" not in adm and self.theta_w != 0.0:
            raise InvalidArgumentError(f"case ({self.case}) excludes W from the outcome model")

    @property
    def k(self) -> int:
        return self.theta_c.size

    def intercept(self, z: int, g: Stratum) -> float:
        return float(self.intercepts[int(z), int(g)])

    def contrast(self, g: Stratum) -> float:
        return self.intercept(1, g) - self.intercept(0, g)

    # free-parameter layout used by the outcome GMM
    @staticmethod
    def cells(truncated: bool = False) -> list[tuple[int, Stratum]]:
        if truncated:
            return [(0, Stratum.SS), (1, Stratum.SS), (1, Stratum.SC)]
        return [(z, g) for z in (0, 1) for g in (Stratum.SS, Stratum.SC, Stratum.NN)]

    @classmethod
    def labels(cls, case: str, k: int = 1, truncated: bool = False) -> list[str]:
        names = [f"theta_{z}_{g.token}" for z, g in cls.cells(truncated)]
        names += [f"theta_{v}" for v in CASE_COVARIATES[case]]
        return names + _clabels("theta_c", k)

    @classmethod
    def from_vector(cls, v, case: str, link: str = "linear", k: int = 1, truncated: bool = False) -> "OutcomeParams":
        v = np.asarray(v, dtype=float)
        icpt = np.full((2, 3), np.nan)
        cells = cls.cells(truncated)
        for j, (z, g) in enumerate(cells):
            icpt[z, int(g)] = v[j]
        pos = len(cells)
        slopes = {}
        for name in CASE_COVARIATES[case]:
            slopes[f"theta_{name}"] = float(v[pos])
            pos += 1
        return cls(intercepts=icpt, theta_c=v[pos : pos + k], case=case, link=link, **slopes)

    def as_vector(self, truncated: bool = False) -> np.ndarray:
        vals = [self.intercept(z, g) for z, g in self.cells(truncated)]
        vals += [getattr(self, f"theta_{v}") for v in CASE_COVARIATES[self.case]]
        return np.concatenate([vals, self.theta_c])

    def with_link(self, link: str) -> "OutcomeParams":
        return replace(self, link=link)


def bridge_h(z, w, c, p: BridgeParams):
    _finite(z, w, c)
    return _scalar(normal_cdf(p.index(z, w, c)))


def treatment_prob(a, c, p: TreatmentParams):
    return _scalar(normal_cdf(p.beta0 + p.beta_a * np.asarray(a, dtype=float) + _cdot(c, p.beta_c)))


def w_mean(z, a, c, p: WModelParams):
    c = np.asarray(c, dtype=float)
    return _scalar(
        p.gamma0
        + p.gamma_z * np.asarray(z, dtype=float)
        + p.gamma_a * np.asarray(a, dtype=float)
        + _cdot(c, p.gamma_c1)
        + _cdot(c * c, p.gamma_c2)
    )


def ordered_probit_pi(z, a, w, c, p: OrderedProbitParams):
    """(pi_ss, pi_sc, pi_nn) under the ordered probit for G given (Z, X)."""
    _finite(z, a, w, c)
    idx = p.index(z, a, w, c)
    upper = normal_cdf(idx)  # pr(G* + eps > 0)
    p_ss = normal_cdf(idx - math.exp(p.psi1))
    p_nn = normal_cdf(-idx)
    p_sc = np.maximum(upper - p_ss, 0.0)
    return _scalar(p_ss), _scalar(p_sc), _scalar(p_nn)


def assign_stratum(latent, psi1: float):
    """Ordered-probit stratum from the realized latent index G* + eps."""
    latent = np.asarray(latent, dtype=float)
    cut = math.exp(psi1)
    return np.where(latent <= 0.0, Stratum.NN, np.where(latent <= cut, Stratum.SC, Stratum.SS)).astype(np.int8)


def stratum_s(z, g):
    """Observed S implied by arm z and stratum g (ss -> 1, sc -> z, nn -> 0)."""
    z = np.asarray(z)
    g = np.asarray(g)
    out = np.where(g == Stratum.SS, 1, np.where(g == Stratum.SC, z, 0)).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def s_from_latent(z, g_star, eps, psi1: float):
    """S_z = 1{G* + eps >= (1 - z) exp(psi1)}."""
    lhs = np.asarray(g_star, dtype=float) + np.asarray(eps, dtype=float)
    out = (lhs >= (1 - np.asarray(z)) * math.exp(psi1)).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def outcome_index(z, g, a, w, c, p: OutcomeParams):
    adm = CASE_COVARIATES[p.case]
    out = p.intercepts[np.asarray(z, dtype=int), np.asarray(g, dtype=int)] + _cdot(c, p.theta_c)
    if "a" in adm:
        out = out + p.theta_a * np.asarray(a, dtype=float)
    if "w" in adm:
        out = out + p.theta_w * np.asarray(w, dtype=float)
    return out


def outcome_mean(z, g, a, w, c, p: OutcomeParams):
    """Conditional mean of Y in arm z, stratum g; probit link maps into (0, 1)."""
    idx = outcome_index(z, g, a, w, c, p)
    if p.link == "probit":
        return _scalar(normal_cdf(idx))
    return _scalar(idx)
