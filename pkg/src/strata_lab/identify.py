"""Strata proportions, mixture weights and the diagnostics built on them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Stratum
from .errors import InfeasibilityError, InvalidEvidenceError, PositivityError, UnsupportedKindError
from .models import (
    BridgeParams,
    OrderedProbitParams,
    OutcomeParams,
    WModelParams,
    ordered_probit_pi,
    outcome_mean,
    w_mean,
)
from .numerics.quadrature import QuadratureRule, gauss_hermite, gh_expectation, gh_log_expectation
from .numerics.special import normal_cdf, normal_logcdf

__all__ = [
    "TAGS",
    "StrataWeights",
    "strata_proportions_ac",
    "strata_proportions_x",
    "eta_weights",
    "weights_ac",
    "weights_x",
    "omega_weight",
    "bernoulli_lik",
    "MixtureResidual",
    "mixture_residual",
    "RankReport",
    "rank_check",
    "MIXTURE_STRATA",
]

TAGS = ("AC", "fullX")
WARN_REMAINDER = -1e-6
FAIL_REMAINDER = -0.02
POSITIVITY_EPS = 1e-12
UNDERFLOW = 1e-8
RANK_FLAG = 1e-3
# strata mixed in each observed (Z, S) cell that is not pure
MIXTURE_STRATA = {1: (Stratum.SS, Stratum.SC), 0: (Stratum.SC, Stratum.NN)}


def strata_proportions_ac(z, a, c, bridge: BridgeParams, wmodel: WModelParams, rule: QuadratureRule | None = None):
    """(pi_ss, pi_sc, pi_nn) given (Z, A, C) through the bridge function.

    pi_ss = E{h(0, W, C) | Z, A, C} and pi_nn = 1 - E{h(1, W, C) | Z, A, C}
    with W | Z, A, C from the fitted W-model; both by Gauss-Hermite.
    """
    rule = rule or gauss_hermite()
    c = np.asarray(c, dtype=float)
    q = np.asarray(w_mean(z, a, c, wmodel), dtype=float)
    base = np.asarray(bridge.c_term(c) + bridge.alpha0, dtype=float)
    if base.shape != q.shape:
        base = np.broadcast_to(base, np.broadcast_shapes(base.shape, q.shape))
        q = np.broadcast_to(q, base.shape)
    lift = math.exp(bridge.alpha1)
    aw = bridge.alpha_w
    eh0 = np.asarray(gh_expectation(lambda wp: normal_cdf(base[..., None] + aw * wp), q, wmodel.sigma_w, rule))
    eh1 = np.asarray(gh_expectation(lambda wp: normal_cdf(base[..., None] + lift + aw * wp), q, wmodel.sigma_w, rule))
    raw = eh1 - eh0
    worst = float(np.min(raw)) if raw.size else 0.0
    if worst < FAIL_REMAINDER:
        raise InfeasibilityError(
            f"complier proportion {worst:.4f} < {FAIL_REMAINDER}: bridge and W-model are inconsistent"
        )
    if worst < WARN_REMAINDER:
        warnings.warn(f"negative complier proportion {worst:.2e} clamped to 0", RuntimeWarning, stacklevel=2)
    p_ss = eh0
    p_sc = np.maximum(raw, 0.0)
    p_nn = 1.0 - p_ss - p_sc
    return _pack(p_ss), _pack(p_sc), _pack(p_nn)


def _pack(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def strata_proportions_x(z, a, w, c, psi: OrderedProbitParams):
    return ordered_probit_pi(z, a, w, c, psi)


def _eta_raw(z, pi_ss, pi_sc, pi_nn):
    if z == 1:
        den = pi_ss + pi_sc
        return den, {Stratum.SS: pi_ss, Stratum.SC: pi_sc, Stratum.NN: None}
    den = pi_sc + pi_nn
    return den, {Stratum.SS: None, Stratum.SC: pi_sc, Stratum.NN: pi_nn}


def eta_weights(z: int, pi_ss, pi_sc, pi_nn) -> dict:
    """Stratum shares inside the mixture cell (Z=z, S=z) for arm z.

    Arm 1 mixes ss and sc among S=1 units, arm 0 mixes sc and nn among S=0
    units; the strata absent from a cell get weight exactly 0.  The inputs
    may be unnormalized stratum masses.
    """
    pi_ss, pi_sc, pi_nn = (np.asarray(v, dtype=float) for v in (pi_ss, pi_sc, pi_nn))
    zero = np.zeros(np.broadcast_shapes(pi_ss.shape, pi_sc.shape, pi_nn.shape))
    if z == 1:
        den = pi_ss + pi_sc
        _positive(den, "pr(S=1 | Z=1)")
        out = {Stratum.SS: pi_ss / den, Stratum.SC: pi_sc / den, Stratum.NN: zero}
    elif z == 0:
        den = pi_sc + pi_nn
        _positive(den, "pr(S=0 | Z=0)")
        out = {Stratum.SS: zero, Stratum.SC: pi_sc / den, Stratum.NN: pi_nn / den}
    else:
        raise InvalidEvidenceError("arm must be 0 or 1")
    return {g: _pack(v) for g, v in out.items()}


def _positive(den, what):
    if np.any(den <= POSITIVITY_EPS):
        raise PositivityError(f"{what} is numerically zero: no units in the mixture cell")


@dataclass(frozen=True, eq=False)
class StrataWeights:
    """pi[z, g] and eta[z, g] evaluated per record at both arms.

    ``tag`` records the conditioning set: "AC" (bridge route) or "fullX"
    (ordered probit route).
    """

    tag: str
    pi: np.ndarray  # (2, 3, n)
    eta: np.ndarray  # (2, 3, n)

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"tag must be one of {TAGS}")
        self.pi.setflags(write=False)
        self.eta.setflags(write=False)

    @classmethod
    def from_pi(cls, tag: str, pi_by_arm, log_eta=None) -> "StrataWeights":
        """``pi_by_arm[z]`` is the (pi_ss, pi_sc, pi_nn) triple evaluated at arm z.

        Where a mixture-cell probability underflows (below 1e-8) the ratio is
        taken from ``log_eta(z, rows)`` instead, which must return the
        log-numerators keyed by stratum and the log-denominator on those rows.
        """
        n = np.size(pi_by_arm[0][0])
        pi = np.empty((2, 3, n))
        eta = np.zeros((2, 3, n))
        for z in (0, 1):
            p_ss, p_sc, p_nn = pi_by_arm[z]
            pi[z, Stratum.SS], pi[z, Stratum.SC], pi[z, Stratum.NN] = p_ss, p_sc, p_nn
            den, num = _eta_raw(z, pi[z, Stratum.SS], pi[z, Stratum.SC], pi[z, Stratum.NN])
            tiny = den < UNDERFLOW
            if np.any(tiny) and log_eta is None:
                _positive(den, "pr(S=1 | Z=1)" if z == 1 else "pr(S=0 | Z=0)")
            safe = np.where(tiny, 1.0, den)
            for g, v in num.items():
                if v is not None:
                    eta[z, g] = v / safe
            if np.any(tiny):
                rows = np.flatnonzero(tiny)
                log_num, log_den = log_eta(z, rows)
                for g, v in log_num.items():
                    eta[z, g, rows] = np.exp(np.minimum(v - log_den, 0.0))
                    # compliers take the rest of the cell
                    eta[z, Stratum.SC, rows] = 1.0 - eta[z, g, rows]
        return cls(tag, pi, eta)

    @property
    def n(self) -> int:
        return self.pi.shape[2]

    def own_arm(self, z) -> np.ndarray:
        """(3, n) array of pi_g(Z_i, V_i) at each record's observed arm."""
        z = np.asarray(z, dtype=int)
        return self.pi[z, :, np.arange(self.n)].T

    def take(self, idx) -> "StrataWeights":
        return StrataWeights(self.tag, self.pi[:, :, idx], self.eta[:, :, idx])


def weights_ac(a, c, bridge, wmodel, rule=None) -> StrataWeights:
    rule = rule or gauss_hermite()
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float).reshape(a.size, -1)
    pis = {z: strata_proportions_ac(np.full(a.shape, z), a, c, bridge, wmodel, rule) for z in (0, 1)}

    def log_eta(z, rows):
        # eta_{1,sc} = 1 - E h(0)/E h(1); eta_{0,nn} = E{1 - h(1)} / E{1 - h(0)}
        q = np.asarray(w_mean(np.full(rows.size, z), a[rows], c[rows], wmodel), dtype=float)
        base = np.asarray(bridge.c_term(c[rows]) + bridge.alpha0, dtype=float)[:, None]
        lift = math.exp(bridge.alpha1)
        aw = bridge.alpha_w
        sign = 1.0 if z == 1 else -1.0
        log0 = gh_log_expectation(lambda wp: normal_logcdf(sign * (base + aw * wp)), q, wmodel.sigma_w, rule)
        log1 = gh_log_expectation(lambda wp: normal_logcdf(sign * (base + lift + aw * wp)), q, wmodel.sigma_w, rule)
        if z == 1:
            return {Stratum.SS: log0}, log1
        return {Stratum.NN: log1}, log0

    return StrataWeights.from_pi("AC", pis, log_eta)


def weights_x(a, w, c, psi) -> StrataWeights:
    a = np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)
    c = np.asarray(c, dtype=float).reshape(a.size, -1)
    pis = {z: ordered_probit_pi(np.full(a.shape, z), a, w, c, psi) for z in (0, 1)}
    cut = math.exp(psi.psi1)

    def log_eta(z, rows):
        idx = np.asarray(psi.index(np.full(rows.size, z), a[rows], w[rows], c[rows]), dtype=float)
        if z == 1:
            return {Stratum.SS: normal_logcdf(idx - cut)}, normal_logcdf(idx)
        return {Stratum.NN: normal_logcdf(-idx)}, normal_logcdf(cut - idx)

    return StrataWeights.from_pi("fullX", pis, log_eta)


def bernoulli_lik(y, p):
    y = np.asarray(y, dtype=float)
    return np.where(y == 1, p, 1.0 - p)


def omega_weight(z, s, y, a, w, c, outcome: OutcomeParams, weights: StrataWeights):
    """Likelihood ratio pr(Y=y | Z=z, G=sc, X) / pr(Y=y | Z=z, S=s, X).

    The denominator is the eta-weighted mixture of the stratum likelihoods in
    the (z, s) cell; ``weights`` must be evaluated at the same rows.
    """
    if outcome.link != "probit":
        raise UnsupportedKindError("outcome-based attribution needs a binary (probit) outcome model")
    if (z, s) not in ((1, 1), (0, 0)):
        raise InvalidEvidenceError("omega is defined on the (Z=1, S=1) and (Z=0, S=0) cells only")
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise InvalidEvidenceError("y must be binary")
    lik = {g: bernoulli_lik(y, outcome_mean(z, g, a, w, c, outcome)) for g in MIXTURE_STRATA[z]}
    den = sum(weights.eta[z, g] * lik[g] for g in MIXTURE_STRATA[z])
    return _pack(lik[Stratum.SC] / den)


@dataclass(frozen=True)
class MixtureResidual:
    max_abs_residual: float
    max_ratio: float  # |residual| / (4 sd_cell / sqrt(n_cell)); <= 1 is within MC error
    max_eta_gap: float  # fitted eta vs latent stratum share, worst cell
    cells: list = field(default_factory=list)  # (z, a_bin, c_bin, n, residual, eta_gap)
    pooled_residual: float = 0.0  # worst arm of the record-weighted mean residual over its cells


def mixture_residual(
    data: Dataset, outcome: OutcomeParams, weights: StrataWeights, bins: int = 3, min_cell: int = 30
) -> MixtureResidual:
    """Check the two-strata mixture identity for E(Y | Z=z, S=z, X) cell by cell.

    The model side averages sum_g eta_{z,g}(V) m(z, g, X) over the cell; the
    truth side weights the per-stratum outcome means by the latent stratum
    shares of the cell.  Single cells carry outcome noise of order
    sd(Y) / sqrt(n_cell), so ``max_ratio`` scales by it and
    ``pooled_residual`` averages the cells of each arm.
    """
    if not data.has_latent:
        raise InvalidEvidenceError("mixture residual needs latent strata")
    edges = np.linspace(0, 1, bins + 1)[1:-1]
    c0 = data.c[:, 0]
    abin = np.searchsorted(np.quantile(data.a, edges), data.a)
    cbin = np.searchsorted(np.quantile(c0, edges), c0)
    cells = []
    worst, worst_ratio, worst_gap, pooled = 0.0, 0.0, 0.0, 0.0
    for z in (0, 1):
        in_cell = (data.z == z) & (data.s == z)
        arm_sum, arm_n = 0.0, 0
        for i in range(bins):
            for j in range(bins):
                m = in_cell & (abin == i) & (cbin == j)
                nc = int(m.sum())
                if nc < min_cell:
                    continue
                idx = np.flatnonzero(m)
                implied = 0.0
                truth = 0.0
                gap = 0.0
                for g in MIXTURE_STRATA[z]:
                    eta_g = weights.eta[z, g, idx]
                    if np.all(eta_g == 0):
                        mg = 0.0
                    else:
                        mg = outcome_mean(z, g, data.a[idx], data.w[idx], data.c[idx], outcome)
                    implied += float(np.mean(eta_g * mg))
                    share = np.mean(data.g[idx] == g)
                    if share > 0:
                        truth += share * float(np.mean(data.y[idx][data.g[idx] == g]))
                    gap = max(gap, abs(float(eta_g.mean()) - share))
                res = implied - truth
                sd = float(np.std(data.y[idx])) or 1.0
                ratio = abs(res) * math.sqrt(nc) / (4.0 * sd)
                cells.append((z, i, j, nc, res, gap))
                worst = max(worst, abs(res))
                worst_ratio = max(worst_ratio, ratio)
                worst_gap = max(worst_gap, gap)
                arm_sum += nc * res
                arm_n += nc
        if arm_n:
            pooled = max(pooled, abs(arm_sum / arm_n))
    return MixtureResidual(worst, worst_ratio, worst_gap, cells, pooled)


@dataclass(frozen=True)
class RankReport:
    free: str
    grid: list
    min_sv_control: float  # {eta_0sc, eta_0nn} over the grid
    min_sv_treated: float  # {eta_1sc, eta_1ss} over the grid
    flagged: bool
    threshold: float = RANK_FLAG

    def to_dict(self) -> dict:
        return {
            "free": self.free,
            "grid": list(map(float, self.grid)),
            "min_sv_control": self.min_sv_control,
            "min_sv_treated": self.min_sv_treated,
            "flagged": self.flagged,
            "threshold": self.threshold,
        }


def rank_check(pi_fn, free: str, grid, fixed_points, threshold: float = RANK_FLAG) -> RankReport:
    """Linear-independence check of the mixture weights along a free coordinate.

    ``pi_fn(z, a, w, c)`` returns the stratum triple; ``free`` names the
    coordinate ("a" or "w") swept over ``grid`` while every dict in
    ``fixed_points`` pins the remaining coordinates.  Reports the smallest
    singular value of the (grid x 2) weight matrices of both mixture cells.
    """
    if free not in ("a", "w"):
        raise ValueError("free coordinate must be 'a' or 'w'")
    grid = np.unique(np.asarray(grid, dtype=float))
    if grid.size < 3:
        raise ValueError("rank check needs at least 3 distinct grid points")
    sv0, sv1 = np.inf, np.inf
    for point in fixed_points:
        coords = {
            k: (np.full(grid.shape, float(v)) if np.ndim(v) == 0 else np.asarray(v, dtype=float))
            for k, v in point.items()
            if k != free
        }
        coords[free] = grid
        coords.setdefault("w", np.zeros(grid.shape))
        etas = {}
        for z in (0, 1):
            tri = pi_fn(np.full(grid.shape, z), coords["a"], coords["w"], coords["c"])
            etas[z] = eta_weights(z, *tri)
        m0 = np.column_stack([etas[0][Stratum.SC], etas[0][Stratum.NN]])
        m1 = np.column_stack([etas[1][Stratum.SC], etas[1][Stratum.SS]])
        sv0 = min(sv0, float(np.linalg.svd(m0, compute_uv=False)[-1]))
        sv1 = min(sv1, float(np.linalg.svd(m1, compute_uv=False)[-1]))
    return RankReport(free, grid.tolist(), sv0, sv1, bool(sv0 < threshold or sv1 < threshold), threshold)
