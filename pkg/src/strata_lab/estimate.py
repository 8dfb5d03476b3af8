"""Three-step estimation: bridge and nuisance fits, outcome GMM, plug-in effects."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Stratum
from .errors import (
    BracketError,
    EmptyStratumError,
    InvalidArgumentError,
    InvalidEvidenceError,
    PositivityError,
    ReconciliationError,
    StageError,
    StrataLabError,
    UnsupportedKindError,
)
from .identify import (
    MIXTURE_STRATA,
    MixtureResidual,
    RankReport,
    StrataWeights,
    bernoulli_lik,
    mixture_residual,
    omega_weight,
    rank_check,
    strata_proportions_ac,
    weights_ac,
    weights_x,
)
from .models import (
    CASE_COVARIATES,
    CASES,
    LINKS,
    BridgeParams,
    OrderedProbitParams,
    OutcomeParams,
    TreatmentParams,
    WModelParams,
    bridge_h,
    ordered_probit_pi,
    outcome_mean,
)
from .numerics.mle import LinearFit, ProbitFit, linear_gaussian_mle, probit_mle
from .numerics.quadrature import gauss_hermite
from .numerics.solvers import WEIGHTINGS, GmmProblem, GmmReport, gmm_solve, root_find_1d
from .numerics.special import normal_cdf, normal_pdf, normal_quantile

__all__ = [
    "MODES",
    "DEFAULT_BRIDGE_INSTRUMENTS",
    "PipelineConfig",
    "instrument_matrix",
    "BridgeFit",
    "NuisanceFit",
    "OrderedProbitFit",
    "OutcomeFit",
    "FittedModel",
    "Evidence",
    "EstimateReport",
    "bridge_problem",
    "outcome_problem",
    "OutcomeSystem",
    "fit_bridge",
    "fit_nuisance",
    "fit_ordered_probit",
    "fit_outcome",
    "estimate_pce",
    "estimate_pn_ps",
    "posterior_stratum",
    "run_pipeline",
]

MODES = ("AC", "fullX")
DEFAULT_BRIDGE_INSTRUMENTS = ("1", "a", "z", "c", "c2")
INSTRUMENT_TOKENS = ("1", "z", "a", "w", "c", "c2", "a2", "w2", "ac")
EMPTY_STRATUM = 1e-6
# a stratum whose largest fitted share stays below this is treated as absent
ABSENT_STRATUM = 1e-8
# Stage B accepts the t -> 0 boundary when its moment gap is within this many standard errors
BOUNDARY_SE = 3.0


def _default_mode(case: str) -> str:
    return "AC" if case == "i" else "fullX"


@dataclass(frozen=True)
class PipelineConfig:
    """Options for one pipeline run.

    Case (i) conditions on (A, C) and uses the bridge route for the strata
    proportions; cases (ii)-(iv) condition on the full X and go through the
    ordered probit.  Instrument tokens: 1, z, a, w, c, c2, a2, w2, ac ("c"
    and "c2" expand to every C column).
    """

    case: str = "i"
    mode: str | None = None
    truncated: bool = False
    bridge_instruments: tuple = DEFAULT_BRIDGE_INSTRUMENTS
    outcome_instruments: tuple | None = None
    quad_order: int = 30
    bridge_weighting: str = "identity"
    outcome_weighting: str = "two-step"
    link: str = "linear"
    max_iter: int = 200
    diagnostics: bool = True

    def __post_init__(self):
        if self.case not in CASES:
            raise InvalidArgumentError(f"case must be one of {CASES}")
        mode = self.mode or _default_mode(self.case)
        if mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}")
        if mode != _default_mode(self.case):
            raise InvalidArgumentError(f"case ({self.case}) requires mode {_default_mode(self.case)}, got {mode}")
        object.__setattr__(self, "mode", mode)
        if self.link not in LINKS:
            raise InvalidArgumentError(f"link must be one of {LINKS}")
        for name in ("bridge_weighting", "outcome_weighting"):
            if getattr(self, name) not in WEIGHTINGS:
                raise InvalidArgumentError(f"{name} must be one of {WEIGHTINGS}")
        if not (isinstance(self.quad_order, int) and self.quad_order >= 2):
            raise InvalidArgumentError("quad_order must be an integer >= 2")
        if not (isinstance(self.max_iter, int) and self.max_iter >= 1):
            raise InvalidArgumentError("max_iter must be a positive integer")
        bridge = tuple(self.bridge_instruments)
        _check_tokens(bridge)
        if any("w" in t for t in bridge):
            raise InvalidArgumentError("bridge instruments must not involve W (it is endogenous in the bridge)")
        object.__setattr__(self, "bridge_instruments", bridge)
        outcome = self.outcome_instruments
        if outcome is None:
            outcome = ("1", "a", "c") if mode == "AC" else ("1", "a", "w", "c")
        outcome = tuple(outcome)
        _check_tokens(outcome)
        if "z" in outcome:
            raise InvalidArgumentError("outcome instruments are functions of V; Z is fixed within each moment cell")
        if mode == "AC" and any("w" in t for t in outcome):
            raise InvalidArgumentError("in AC mode V = (A, C); W cannot be an outcome instrument")
        object.__setattr__(self, "outcome_instruments", outcome)

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "mode": self.mode,
            "truncated": self.truncated,
            "bridge_instruments": list(self.bridge_instruments),
            "outcome_instruments": list(self.outcome_instruments),
            "quad_order": self.quad_order,
            "bridge_weighting": self.bridge_weighting,
            "outcome_weighting": self.outcome_weighting,
            "link": self.link,
            "max_iter": self.max_iter,
            "diagnostics": self.diagnostics,
        }


def _check_tokens(tokens):
    if not tokens:
        raise InvalidArgumentError("instrument list is empty")
    bad = [t for t in tokens if t not in INSTRUMENT_TOKENS]
    if bad:
        raise InvalidArgumentError(f"unknown instrument tokens {bad}; allowed {INSTRUMENT_TOKENS}")
    if len(set(tokens)) != len(tokens):
        raise InvalidArgumentError("duplicate instrument tokens")


def instrument_matrix(tokens, z, a, w, c) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float).reshape(a.size, -1)
    cols = []
    for t in tokens:
        if t == "1":
            cols.append(np.ones((a.size, 1)))
        elif t == "z":
            cols.append(np.asarray(z, dtype=float)[:, None])
        elif t == "a":
            cols.append(a[:, None])
        elif t == "w":
            cols.append(np.asarray(w, dtype=float)[:, None])
        elif t == "c":
            cols.append(c)
        elif t == "c2":
            cols.append(c * c)
        elif t == "a2":
            cols.append((a * a)[:, None])
        elif t == "w2":
            cols.append((np.asarray(w, dtype=float) ** 2)[:, None])
        elif t == "ac":
            cols.append(a[:, None] * c)
    return np.hstack(cols)


def _require_records(data: Dataset):
    if data.n == 0:
        raise PositivityError("dataset has no records")
    for z in (0, 1):
        if not np.any(data.z == z):
            raise PositivityError(f"no records with Z = {z}")


# ---------------------------------------------------------------------------
# step 1: bridge, nuisance models, ordered probit


@dataclass(frozen=True)
class BridgeFit:
    params: BridgeParams
    report: GmmReport


def bridge_problem(data: Dataset, cfg: PipelineConfig, start: BridgeParams | None = None) -> GmmProblem:
    """Moment system E[{S - h(Z, W, C)} B(Z, A, C)] = 0 with its analytic Jacobian."""
    _require_records(data)
    k = data.k
    z = data.z.astype(float)
    s = data.s.astype(float)
    w, c = data.w, data.c
    B = instrument_matrix(cfg.bridge_instruments, z, data.a, w, c)
    n = data.n

    def index(theta):
        return theta[0] + math.exp(theta[1]) * z + theta[2] * w + c @ theta[3 : 3 + k] + (c * c) @ theta[3 + k :]

    def moments(theta, _):
        return (s - normal_cdf(index(theta)))[:, None] * B

    def jacobian(theta, _):
        dens = normal_pdf(index(theta))
        d_idx = np.column_stack([np.ones(n), math.exp(theta[1]) * z, w, c, c * c])
        return -(B * dens[:, None]).T @ d_idx / n

    return GmmProblem(
        moments=moments,
        start=_bridge_start(s, z, w, c) if start is None else start.as_vector(),
        n_moments=B.shape[1],
        weighting=cfg.bridge_weighting,
        max_iter=cfg.max_iter,
        labels=BridgeParams.labels(k),
        jacobian=jacobian,
    )


def fit_bridge(data: Dataset, cfg: PipelineConfig, start: BridgeParams | None = None) -> BridgeFit:
    """GMM on E[{S - h(Z, W, C)} B(Z, A, C)] = 0."""
    res = gmm_solve(bridge_problem(data, cfg, start), None)
    return BridgeFit(BridgeParams.from_vector(res.params, data.k), res.report)


def _bridge_start(s, z, w, c):
    """Naive probit of S on (1, Z, W, C, C^2) as a starting point."""
    k = c.shape[1]
    x = np.column_stack([np.ones_like(z), z, w, c, c * c])
    try:
        b = probit_mle(s, x, max_iter=50).coef
    except StrataLabError:
        return np.zeros(3 + 2 * k)
    return np.concatenate([[b[0], math.log(max(b[1], 0.05)), b[2]], b[3:]])


@dataclass(frozen=True)
class NuisanceFit:
    treatment: TreatmentParams
    wmodel: WModelParams
    treatment_fit: ProbitFit = field(repr=False)
    w_fit: LinearFit = field(repr=False)


def fit_nuisance(data: Dataset) -> NuisanceFit:
    """Probit for Z on (1, A, C); Gaussian linear model for W on (1, Z, A, C, C^2).

    A single-arm sample surfaces as the probit's separation error.
    """
    k = data.k
    ones = np.ones(data.n)
    tf = probit_mle(data.z, np.column_stack([ones, data.a, data.c]))
    wf = linear_gaussian_mle(data.w, np.column_stack([ones, data.z, data.a, data.c, data.c**2]))
    treat = TreatmentParams.from_vector(tf.coef, k)
    wm = WModelParams.from_vector(np.concatenate([wf.coef, [max(wf.sigma, np.finfo(float).tiny)]]), k)
    return NuisanceFit(treat, wm, tf, wf)


@dataclass(frozen=True)
class OrderedProbitFit:
    params: OrderedProbitParams
    stage_a: ProbitFit = field(repr=False)
    threshold: float  # t = exp(psi1) from stage B


def fit_ordered_probit(data: Dataset, bridge: BridgeParams, wmodel: WModelParams | None = None) -> OrderedProbitFit:
    """Recover the ordered-probit strata model from S and the fitted bridge.

    Stage A: probit of S on (1, Z, W, A, C) identifies psi0 - t, psi_z + t and
    the covariate slopes, t = exp(psi1).  Stage B: t solves
    mean[h(0, W, C) - Phi(c0 + (cz - t) Z + ...)] = 0, i.e. the bridge and
    the probit must agree on the overall always-S proportion.  A root pushed
    just below t = 0 by sampling noise is taken at the boundary.  ``wmodel`` is
    not needed: the bridge is averaged over the observed W directly.
    """
    _require_records(data)
    k = data.k
    z = data.z.astype(float)
    x = np.column_stack([np.ones(data.n), z, data.w, data.a, data.c])
    fit = probit_mle(data.s, x)
    c0, cz, pw, pa = fit.coef[:4]
    pc = fit.coef[4 : 4 + k]
    rest = c0 + pw * data.w + pa * data.a + data.c @ pc
    target = float(np.mean(bridge_h(np.zeros(data.n), data.w, data.c, bridge)))
    treated = z == 1
    base0 = float(np.sum(normal_cdf(rest[~treated]))) if np.any(~treated) else 0.0
    rest1 = rest[treated] + cz
    n = data.n

    def f(t):
        return target - (base0 + float(np.sum(normal_cdf(rest1 - t)))) / n

    lo, hi = 1e-12, max(cz, 0.0) + 10.0
    f_lo = f(lo)
    # the moment increases in t: a positive gap at t -> 0 puts the root below the
    # bracket, accepted as the boundary solution when within the sampling error of
    # the bridge share against the observed S share (the probit tracks mean S)
    boundary = False
    if f_lo > 0:
        noise = bridge_h(np.zeros(n), data.w, data.c, bridge) - data.s
        boundary = f_lo <= BOUNDARY_SE * float(np.std(noise)) / math.sqrt(n)
    try:
        t = lo if boundary else root_find_1d(f, (lo, hi))
    except BracketError as exc:
        raise ReconciliationError(
            f"bridge always-S share {target:.4f} cannot be matched by the ordered probit: {exc}"
        ) from exc
    t = max(t, 1e-12)
    psi = OrderedProbitParams(psi0=c0 + t, psi1=math.log(t), psi_z=cz - t, psi_w=pw, psi_a=pa, psi_c=pc)
    return OrderedProbitFit(psi, fit, t)


# ---------------------------------------------------------------------------
# step 2: outcome GMM


@dataclass(frozen=True)
class OutcomeFit:
    params: OutcomeParams
    report: GmmReport
    free_cells: tuple
    equations: tuple  # moment equations kept, numbered 1-4


# equation number -> (arm, observed S, strata entering the mean)
_EQUATIONS = {
    1: (0, 1, (Stratum.SS,)),
    2: (1, 0, (Stratum.NN,)),
    3: (0, 0, MIXTURE_STRATA[0]),
    4: (1, 1, MIXTURE_STRATA[1]),
}


def _check_outcome_data(data: Dataset, truncated: bool):
    if not data.has_outcome:
        raise InvalidArgumentError("dataset has no outcome column")
    y = data.y
    miss = np.isnan(y)
    if np.any(miss & (data.s == 1)):
        raise InvalidArgumentError("outcome missing for a record with S = 1")
    if np.any(miss) and not truncated:
        raise InvalidArgumentError("outcome missing where S = 0: enable truncated mode")


@dataclass(frozen=True)
class OutcomeSystem:
    problem: GmmProblem
    cells: tuple  # (arm, stratum) of each free intercept, in parameter order
    equations: tuple
    covariates: tuple


def outcome_problem(
    data: Dataset, weights: StrataWeights, cfg: PipelineConfig, start: OutcomeParams | None = None
) -> OutcomeSystem:
    """Stack the four conditional moment restrictions into one GMM problem.

    Each (Z, S) cell contributes E[{Y - sum_g eta_{z,g}(V) m(z, g, X)} b(V)] = 0
    with the pure cells (Z=0, S=1) and (Z=1, S=0) carrying a single stratum.
    Truncated mode keeps only the survivor cells.  Strata with no fitted mass
    are dropped together with the equations that only they feed.
    """
    if weights.tag != cfg.mode:
        raise InvalidArgumentError(f"weights are tagged {weights.tag} but the pipeline runs in {cfg.mode} mode")
    if weights.n != data.n:
        raise InvalidArgumentError("weights and data have different lengths")
    _check_outcome_data(data, cfg.truncated)
    k = data.k
    z = data.z.astype(int)
    s = data.s.astype(int)
    present = {g for g in Stratum if np.max(weights.pi[:, g], initial=0.0) >= ABSENT_STRATUM}

    eqs = (1, 4) if cfg.truncated else (1, 2, 3, 4)
    kept = []
    for e in eqs:
        ez, es, strata = _EQUATIONS[e]
        live = [g for g in strata if g in present]
        has_rows = bool(np.any((z == ez) & (s == es)))
        if not live:
            if has_rows:
                raise PositivityError(f"records in cell (Z={ez}, S={es}) but none of its strata has fitted mass")
            continue
        if not has_rows:
            raise PositivityError(f"empty cell (Z={ez}, S={es}): its moment equation cannot be formed")
        kept.append(e)
    cells = []
    for e in kept:
        ez, _, strata = _EQUATIONS[e]
        cells += [(ez, g) for g in strata if g in present and (ez, g) not in cells]
    order = [(zz, g) for zz in (0, 1) for g in (Stratum.SS, Stratum.SC, Stratum.NN)]
    cells = [cg for cg in order if cg in cells]
    col = {cg: j for j, cg in enumerate(cells)}

    # per record: equation slot, up to two strata columns and their weights
    rows = np.zeros(data.n, dtype=bool)
    slot = np.zeros(data.n, dtype=int)
    j1 = np.zeros(data.n, dtype=int)
    j2 = np.zeros(data.n, dtype=int)
    e1 = np.zeros(data.n)
    e2 = np.zeros(data.n)
    for q, e in enumerate(kept):
        ez, es, strata = _EQUATIONS[e]
        m = (z == ez) & (s == es)
        rows |= m
        slot[m] = q
        live = [g for g in strata if g in present]
        if len(live) == 1:
            j1[m] = j2[m] = col[(ez, live[0])]
            e1[m] = 1.0
        else:
            ga, gb = live
            j1[m], j2[m] = col[(ez, ga)], col[(ez, gb)]
            e1[m] = weights.eta[ez, ga, m]
            e2[m] = weights.eta[ez, gb, m]
    idx = np.flatnonzero(rows)
    slot, j1, j2, e1, e2 = slot[idx], j1[idx], j2[idx], e1[idx], e2[idx]
    y = data.y[idx]
    covs = CASE_COVARIATES[cfg.case]
    xs = [data.a[idx][:, None]] if "a" in covs else []
    xs += [data.w[idx][:, None]] if "w" in covs else []
    X = np.hstack(xs + [data.c[idx]])
    bv = instrument_matrix(cfg.outcome_instruments, data.z[idx], data.a[idx], data.w[idx], data.c[idx])
    nq = bv.shape[1]
    neq = len(kept)
    # record i places its instrument vector in the block of its equation
    placed = np.zeros((idx.size, neq, nq))
    placed[np.arange(idx.size), slot] = bv
    placed = placed.reshape(idx.size, neq * nq)
    n = data.n
    p_int = len(cells)
    probit = cfg.link == "probit"

    def mean_parts(theta):
        lin = X @ theta[p_int:]
        i1 = theta[j1] + lin
        i2 = theta[j2] + lin
        if probit:
            return normal_cdf(i1), normal_cdf(i2), normal_pdf(i1), normal_pdf(i2)
        one = np.ones_like(i1)
        return i1, i2, one, one

    def moments(theta, _):
        m1, m2, _, _ = mean_parts(theta)
        r = y - e1 * m1 - e2 * m2
        out = np.zeros((n, neq * nq))
        out[idx] = placed * r[:, None]
        return out

    def jacobian(theta, _):
        _, _, d1, d2 = mean_parts(theta)
        w1, w2 = e1 * d1, e2 * d2
        dmu = np.zeros((idx.size, p_int + X.shape[1]))
        np.add.at(dmu, (np.arange(idx.size), j1), w1)
        np.add.at(dmu, (np.arange(idx.size), j2), w2)
        dmu[:, p_int:] = (w1 + w2)[:, None] * X
        return -placed.T @ dmu / n

    labels = [f"theta_{zz}_{g.token}" for zz, g in cells] + [f"theta_{v}" for v in covs]
    labels += ["theta_c"] if k == 1 else [f"theta_c[{j}]" for j in range(k)]
    theta0 = _outcome_start(cells, start, covs, k, z, s, data.y, probit)
    problem = GmmProblem(
        moments=moments,
        start=theta0,
        n_moments=neq * nq,
        weighting=cfg.outcome_weighting,
        max_iter=cfg.max_iter,
        labels=labels,
        jacobian=jacobian,
    )
    return OutcomeSystem(problem, tuple(cells), tuple(kept), covs)


def fit_outcome(
    data: Dataset, weights: StrataWeights, cfg: PipelineConfig, start: OutcomeParams | None = None
) -> OutcomeFit:
    """Stacked outcome GMM; see ``outcome_problem`` for the moment system."""
    system = outcome_problem(data, weights, cfg, start)
    res = gmm_solve(system.problem, None)
    p_int = len(system.cells)
    icpt = np.full((2, 3), np.nan)
    for j, (zz, g) in enumerate(system.cells):
        icpt[zz, g] = res.params[j]
    covs = system.covariates
    slopes = dict(zip((f"theta_{v}" for v in covs), map(float, res.params[p_int : p_int + len(covs)])))
    params = OutcomeParams(icpt, res.params[p_int + len(covs) :], case=cfg.case, link=cfg.link, **slopes)
    return OutcomeFit(params, res.report, system.cells, system.equations)


def _outcome_start(cells, start, covs, k, z, s, y, probit):
    if start is not None:
        vals = [start.intercept(zz, g) for zz, g in cells]
        if np.all(np.isfinite(vals)):
            return np.concatenate([vals, [getattr(start, f"theta_{v}") for v in covs], start.theta_c])
    vals = []
    for zz, g in cells:
        ss = 1 if g == Stratum.SS else 0 if g == Stratum.NN else zz
        m = (z == zz) & (s == ss)
        mu = float(np.mean(y[m])) if np.any(m) else 0.0
        if probit:
            mu = float(np.clip(mu, 0.02, 0.98))
            mu = normal_quantile(mu)
        vals.append(mu)
    return np.concatenate([vals, np.zeros(len(covs) + k)])


# ---------------------------------------------------------------------------
# step 3: plug-in effects and attribution


def estimate_pce(data: Dataset, outcome: OutcomeParams, weights: StrataWeights, strata=None) -> dict:
    """Ratio-of-means plug-in Delta_g = P_n{(m(1,g,X) - m(0,g,X)) pi_g} / P_n{pi_g}.

    ``pi_g`` is evaluated at each record's own arm.  Strata whose intercepts
    were not estimated (truncated mode) are skipped unless named explicitly.
    """
    own = weights.own_arm(data.z)
    if strata is None:
        strata = [g for g in Stratum if np.all(np.isfinite(outcome.intercepts[:, g]))]
    out = {}
    for g in strata:
        g = Stratum(g)
        if not np.all(np.isfinite(outcome.intercepts[:, g])):
            raise InvalidArgumentError(f"stratum {g.token} has no fitted outcome model")
        pg = own[g]
        mass = float(np.mean(pg))
        if mass < EMPTY_STRATUM:
            raise EmptyStratumError(f"stratum {g.token} has estimated share {mass:.2e}")
        m1 = outcome_mean(1, g, data.a, data.w, data.c, outcome)
        m0 = outcome_mean(0, g, data.a, data.w, data.c, outcome)
        out[g] = float(np.mean(m1 * pg) / mass - np.mean(m0 * pg) / mass)
    return out


@dataclass(frozen=True)
class Evidence:
    """Evidence rows (z, s, v[, y]) for PN (z = s = 1) or PS (z = s = 0)."""

    z: np.ndarray
    s: np.ndarray
    a: np.ndarray
    w: np.ndarray
    c: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=int))
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "s", np.atleast_1d(np.asarray(self.s, dtype=int)))
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=float)))
        object.__setattr__(self, "w", np.atleast_1d(np.asarray(self.w, dtype=float)))
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "c", c.reshape(z.size, -1))
        if self.y is not None:
            y = np.atleast_1d(np.asarray(self.y, dtype=float))
            object.__setattr__(self, "y", None if np.all(np.isnan(y)) else y)
        for name in ("s", "a", "w"):
            if getattr(self, name).size != z.size:
                raise InvalidEvidenceError(f"evidence column {name} has the wrong length")

    @property
    def n(self) -> int:
        return self.z.size

    def row_has_y(self):
        if self.y is None:
            return np.zeros(self.n, dtype=bool)
        return ~np.isnan(self.y)


def _metric_arm(z, s):
    if z == 1 and s == 1:
        return 1
    if z == 0 and s == 0:
        return 0
    raise InvalidEvidenceError(f"(z, s) = ({z}, {s}) is not a PN (1, 1) or PS (0, 0) evidence set")


def estimate_pn_ps(evidence: Evidence, outcome: OutcomeParams | None, weights: StrataWeights) -> np.ndarray:
    """PN at (z, s) = (1, 1) rows and PS at (0, 0) rows.

    Without Y the answer is eta_{z,sc}(v); with Y it is reweighted by the
    likelihood ratio of the complier outcome model to the cell mixture.
    ``weights`` must be evaluated at the evidence rows.
    """
    if weights.n != evidence.n:
        raise InvalidArgumentError("weights must be evaluated at the evidence rows")
    out = np.empty(evidence.n)
    has_y = evidence.row_has_y()
    for i in range(evidence.n):
        zi = _metric_arm(int(evidence.z[i]), int(evidence.s[i]))
        base = float(weights.eta[zi, Stratum.SC, i])
        if not has_y[i]:
            out[i] = base
            continue
        if outcome is None or outcome.link != "probit":
            raise UnsupportedKindError("PN/PS given Y requires a binary (probit) outcome model")
        om = omega_weight(
            zi, zi, evidence.y[i], evidence.a[i], evidence.w[i], evidence.c[i], outcome, weights.take([i])
        )
        out[i] = float(np.asarray(om).ravel()[0]) * base
    return np.clip(out, 0.0, 1.0)


def posterior_stratum(g: Stratum, evidence: Evidence, outcome: OutcomeParams, weights: StrataWeights) -> np.ndarray:
    """pr(G = g | Z, S, V, Y) from the fitted mixture, one value per evidence row."""
    if outcome.link != "probit":
        raise UnsupportedKindError("posterior given Y requires a binary (probit) outcome model")
    if evidence.y is None or np.any(np.isnan(evidence.y)):
        raise InvalidEvidenceError("posterior_stratum needs y on every row")
    out = np.empty(evidence.n)
    for i in range(evidence.n):
        zi = _metric_arm(int(evidence.z[i]), int(evidence.s[i]))
        a, w, c, y = evidence.a[i], evidence.w[i], evidence.c[i], evidence.y[i]
        terms = {
            h: weights.eta[zi, h, i] * bernoulli_lik(y, outcome_mean(zi, h, a, w, c, outcome))
            for h in MIXTURE_STRATA[zi]
        }
        out[i] = float(terms.get(Stratum(g), 0.0) / sum(terms.values()))
    return out


# ---------------------------------------------------------------------------
# orchestration


@dataclass(frozen=True)
class FittedModel:
    """Every fitted block plus what is needed to evaluate weights at new rows."""

    cfg: PipelineConfig
    bridge: BridgeParams
    treatment: TreatmentParams
    wmodel: WModelParams
    psi: OrderedProbitParams | None
    outcome: OutcomeParams

    def pi(self, z, a, w, c):
        if self.cfg.mode == "AC":
            return strata_proportions_ac(z, a, c, self.bridge, self.wmodel, gauss_hermite(self.cfg.quad_order))
        return ordered_probit_pi(z, a, w, c, self.psi)

    def weights(self, a, w, c) -> StrataWeights:
        a = np.atleast_1d(np.asarray(a, dtype=float))
        c = np.asarray(c, dtype=float).reshape(a.size, -1)
        if self.cfg.mode == "AC":
            return weights_ac(a, c, self.bridge, self.wmodel, gauss_hermite(self.cfg.quad_order))
        return weights_x(a, np.atleast_1d(np.asarray(w, dtype=float)), c, self.psi)


@dataclass(frozen=True)
class EstimateReport:
    cfg: PipelineConfig
    n: int
    delta: dict  # Stratum -> estimate
    shares: dict  # Stratum -> P_n pi_g at own arm
    model: FittedModel
    gmm: dict = field(default_factory=dict)  # stage -> GmmReport
    threshold: float | None = None  # stage B root exp(psi1)
    rank: RankReport | None = None
    mixture: MixtureResidual | None = None
    pnps: np.ndarray | None = None
    evidence: Evidence | None = field(default=None, repr=False)
    bootstrap: dict | None = None  # filled by bench.bootstrap_ci

    def estimand(self, name: str) -> float:
        """Scalar estimand by name: delta_ss, delta_sc, delta_nn."""
        stem, _, tok = name.partition("_")
        if stem != "delta":
            raise KeyError(name)
        return self.delta[Stratum.from_token(tok)]

    def estimands(self) -> dict:
        return {f"delta_{g.token}": v for g, v in self.delta.items()}

    def parameter_blocks(self) -> dict:
        m = self.model
        k = m.outcome.k
        blocks = {
            "alpha": dict(zip(BridgeParams.labels(k), m.bridge.as_vector().tolist())),
            "beta": dict(zip(TreatmentParams.labels(k), m.treatment.as_vector().tolist())),
            "gamma": dict(zip(WModelParams.labels(k), m.wmodel.as_vector().tolist())),
        }
        if m.psi is not None:
            blocks["psi"] = dict(zip(OrderedProbitParams.labels(k), m.psi.as_vector().tolist()))
        theta = {}
        for zz in (0, 1):
            for g in Stratum:
                v = m.outcome.intercept(zz, g)
                if np.isfinite(v):
                    theta[f"theta_{zz}_{g.token}"] = v
        for cov in CASE_COVARIATES[m.outcome.case]:
            theta[f"theta_{cov}"] = float(getattr(m.outcome, f"theta_{cov}"))
        for j, v in enumerate(m.outcome.theta_c):
            theta["theta_c" if k == 1 else f"theta_c[{j}]"] = float(v)
        blocks["theta"] = theta
        return blocks

    def to_dict(self) -> dict:
        out = {
            "config": self.cfg.to_dict(),
            "n": self.n,
            "delta": {g.token: v for g, v in self.delta.items()},
            "strata_shares": {g.token: v for g, v in self.shares.items()},
            "parameters": self.parameter_blocks(),
            "diagnostics": {
                "gmm": {k: _report_dict(r) for k, r in self.gmm.items()},
                "stage_b_threshold": self.threshold,
                "rank_check": None if self.rank is None else self.rank.to_dict(),
                "mixture_residual": None
                if self.mixture is None
                else {
                    "max_abs_residual": self.mixture.max_abs_residual,
                    "max_ratio": self.mixture.max_ratio,
                    "max_eta_gap": self.mixture.max_eta_gap,
                },
            },
        }
        if self.pnps is not None:
            ev = self.evidence
            out["pnps"] = [
                {
                    "row": i + 1,
                    "metric": "PN" if ev.z[i] == 1 else "PS",
                    "z": int(ev.z[i]),
                    "s": int(ev.s[i]),
                    "y": None if ev.y is None or np.isnan(ev.y[i]) else float(ev.y[i]),
                    "value": float(self.pnps[i]),
                }
                for i in range(ev.n)
            ]
        if self.bootstrap is not None:
            out["bootstrap"] = self.bootstrap
        return out


def _report_dict(r: GmmReport) -> dict:
    return {
        "converged": r.converged,
        "objective": r.objective,
        "iterations": r.iterations,
        "condition": r.condition,
        "gradient_norm": r.gradient_norm,
        "moment_norm": r.moment_norm,
        "weighting": r.weighting,
    }


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except (StrataLabError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def _rank_report(data: Dataset, model: FittedModel) -> RankReport:
    """Rank check at the 10/50/90 percentiles; the free coordinate follows the case."""
    frees = {"i": ("a",), "ii": ("w",), "iii": ("a",), "iv": ("a", "w")}[model.cfg.case]
    pct = [10, 50, 90]
    c_pts = np.percentile(data.c, pct, axis=0)

    def pi_fn(z, a, w, c):
        c = np.broadcast_to(np.asarray(c, dtype=float).reshape(1, -1), (np.size(a), data.k))
        return model.pi(z, a, w, c)

    reports = []
    for free in frees:
        other = "w" if free == "a" else "a"
        o_pts = np.percentile(getattr(data, other), pct)
        fixed = [{"c": cp, other: op} for cp in c_pts for op in o_pts]
        reports.append(rank_check(pi_fn, free, np.percentile(getattr(data, free), pct), fixed))
    return min(reports, key=lambda r: min(r.min_sv_control, r.min_sv_treated))


def run_pipeline(
    data: Dataset,
    cfg: PipelineConfig | None = None,
    evidence: Evidence | None = None,
    start: EstimateReport | None = None,
) -> EstimateReport:
    """Fit every block and return effects, shares and diagnostics.

    ``start`` (a previous report on similar data) seeds the GMM solvers; the
    bootstrap uses it to warm-start each resample.
    """
    cfg = cfg or PipelineConfig()
    bridge = _stage("bridge", fit_bridge, data, cfg, None if start is None else start.model.bridge)
    nuis = _stage("nuisance", fit_nuisance, data)
    threshold = None
    psi = None
    if cfg.mode == "fullX":
        opf = _stage("ordered_probit", fit_ordered_probit, data, bridge.params, nuis.wmodel)
        psi, threshold = opf.params, opf.threshold
        weights = _stage("weights", weights_x, data.a, data.w, data.c, psi)
    else:
        rule = gauss_hermite(cfg.quad_order)
        weights = _stage("weights", weights_ac, data.a, data.c, bridge.params, nuis.wmodel, rule)
    out_fit = _stage("outcome", fit_outcome, data, weights, cfg, None if start is None else start.model.outcome)
    delta = _stage("pce", estimate_pce, data, out_fit.params, weights)
    own = weights.own_arm(data.z)
    shares = {g: float(np.mean(own[g])) for g in Stratum}
    model = FittedModel(cfg, bridge.params, nuis.treatment, nuis.wmodel, psi, out_fit.params)
    rank = mix = None
    if cfg.diagnostics:
        rank = _stage("diagnostics", _rank_report, data, model)
        if data.has_latent and data.has_outcome and not data.is_truncated:
            mix = _stage("diagnostics", mixture_residual, data, out_fit.params, weights)
    pnps = None
    if evidence is not None:
        ew = _stage("pnps", model.weights, evidence.a, evidence.w, evidence.c)
        pnps = _stage("pnps", estimate_pn_ps, evidence, out_fit.params, ew)
    return EstimateReport(
        cfg=cfg,
        n=data.n,
        delta=delta,
        shares=shares,
        model=model,
        gmm={"bridge": bridge.report, "outcome": out_fit.report},
        threshold=threshold,
        rank=rank,
        mixture=mix,
        pnps=pnps,
        evidence=evidence,
    )
