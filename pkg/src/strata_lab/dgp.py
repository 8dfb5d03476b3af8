"""Synthetic data: the noncompliance simulation design and its ground truth.

Besides the generator this module exposes closed-form truths derived from
the joint normality of (U, W) given (Z, A, C):

* ``true_bridge``: the probit bridge parameters solving
  pr(S = 1 | Z, C, U) = E{h(Z, W, C) | Z, C, U};
* ``true_ordered_probit``: the ordered-probit parameters of G given (Z, X)
  obtained by integrating U out of the selection index;
* ``true_strata_ac``: pr(G = g | Z, A, C) computed directly from the latent
  index, independent of any bridge function.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .data import Dataset, Stratum
from .errors import InvalidArgumentError
from .models import (
    CASE_COVARIATES,
    CASES,
    LINKS,
    BridgeParams,
    OrderedProbitParams,
    OutcomeParams,
    TreatmentParams,
    WModelParams,
    assign_stratum,
    stratum_s,
)
from .numerics.rng import SeedSpec, generator, rng_mvn2
from .numerics.special import normal_cdf, normal_quantile

__all__ = [
    "SimConfig",
    "CASE_SLOPES",
    "LatentTable",
    "generate_latent",
    "generate",
    "OracleTruth",
    "oracle_truth",
    "BridgeCheck",
    "verify_bridge_compatibility",
]

# (theta_a, theta_w) used to generate outcomes for each identification case.
CASE_SLOPES = {"i": (0.0, 0.0), "ii": (1.0, 0.0), "iii": (0.0, 1.0), "iv": (1.0, 1.0)}


@dataclass(frozen=True)
class SimConfig:
    # covariates (A, C)
    delta_a: float = 0.0
    delta_c: float = 0.0
    sigma_a: float = 0.5
    sigma_c: float = 0.5
    rho1: float = 0.5
    # treatment
    beta0: float = 0.0
    beta_a: float = 1.0
    beta_c: float = 1.0
    # latent confounder and negative-control intermediate
    iota0: float = 1.0
    iota_z: float = 1.0
    iota_a: float = 1.5
    iota_c1: float = 1.5
    iota_c2: float = -0.75
    sigma_u: float = 0.5
    rho2: float = 0.5
    sigma_w: float = 0.5
    gamma0: float = 1.0
    gamma_c1: float = 1.5
    # stratum selection
    zeta0: float = 0.5
    zeta_w: float = 0.5
    zeta_u: float = 0.2
    zeta_c: float = 1.0
    psi1: float = 0.0
    # outcome
    theta_0_nn: float = 0.0
    theta_0_sc: float = 1.0
    theta_0_ss: float = 2.0
    theta_1_nn: float = 2.0
    theta_1_sc: float = 3.0
    theta_1_ss: float = 4.0
    theta_a: float = 0.0
    theta_w: float = 0.0
    theta_c: float = 1.0
    sigma_y: float = 0.5
    link: str = "linear"
    # output
    n: int = 1000
    truncated: bool = False

    def __post_init__(self):
        for name in ("sigma_a", "sigma_c", "sigma_u", "sigma_w", "sigma_y"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if not (abs(self.rho1) < 1 and abs(self.rho2) < 1):
            raise InvalidArgumentError("correlations must lie strictly inside (-1, 1)")
        if self.rho2 == 0:
            raise InvalidArgumentError("rho2 must be nonzero (gamma_c2 divides by it)")
        if self.link not in LINKS:
            raise InvalidArgumentError(f"link must be one of {LINKS}")
        if int(self.n) != self.n or self.n < 1:
            raise InvalidArgumentError("n must be a positive integer")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise InvalidArgumentError(f"{f.name} must be finite")

    # constraints making W independent of (Z, A) given (U, C) and E(U | Z, A, W, C) linear in C
    @property
    def gamma_z(self) -> float:
        return self.iota_z * self.sigma_w * self.rho2 / self.sigma_u

    @property
    def gamma_a(self) -> float:
        return self.iota_a * self.sigma_w * self.rho2 / self.sigma_u

    @property
    def gamma_c2(self) -> float:
        return self.iota_c2 * self.sigma_w / (self.sigma_u * self.rho2)

    def for_case(self, case: str) -> "SimConfig":
        ta, tw = CASE_SLOPES[case]
        return replace(self, theta_a=ta, theta_w=tw)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def intercepts(self) -> np.ndarray:
        out = np.empty((2, 3))
        for z in (0, 1):
            for g in Stratum:
                out[z, g] = getattr(self, f"theta_{z}_{g.token}")
        return out

    # ---- ground truth -------------------------------------------------

    def true_treatment(self) -> TreatmentParams:
        return TreatmentParams(self.beta0, self.beta_a, [self.beta_c])

    def true_wmodel(self) -> WModelParams:
        return WModelParams(self.gamma0, self.gamma_z, self.gamma_a, [self.gamma_c1], [self.gamma_c2], self.sigma_w)

    def true_outcome(self, case: str) -> OutcomeParams:
        adm = CASE_COVARIATES[case]
        for name, val in (("a", self.theta_a), ("w", self.theta_w)):
            if val != 0 and name not in adm:
                raise InvalidArgumentError(f"theta_{name} = {val} is not representable in case ({case})")
        return OutcomeParams(
            intercepts=self.intercepts,
            theta_c=[self.theta_c],
            theta_a=self.theta_a if "a" in adm else 0.0,
            theta_w=self.theta_w if "w" in adm else 0.0,
            case=case,
            link=self.link,
        )

    def _w_given_uc(self):
        """W | (U, C) ~ N(l0 + lu U + lc1 C + lc2 C^2, tau^2)."""
        lu = self.sigma_w * self.rho2 / self.sigma_u
        return dict(
            lu=lu,
            l0=self.gamma0 - lu * self.iota0,
            lc1=self.gamma_c1 - lu * self.iota_c1,
            lc2=self.gamma_c2 - lu * self.iota_c2,
            tau2=self.sigma_w**2 * (1 - self.rho2**2),
        )

    def true_bridge(self) -> BridgeParams:
        """Probit bridge solving the confounding-bridge integral equation exactly."""
        p = self._w_given_uc()
        r0 = math.sqrt(1 + self.zeta_w**2 * p["tau2"])
        k_u = (self.zeta_w * p["lu"] + self.zeta_u) / r0
        disc = p["lu"] ** 2 - k_u**2 * p["tau2"]
        if disc <= 0:
            raise InvalidArgumentError("no probit bridge exists for this configuration")
        alpha_w = k_u / p["lu"] * abs(p["lu"]) / math.sqrt(disc)
        r = math.sqrt(1 + alpha_w**2 * p["tau2"])
        t = math.exp(self.psi1)
        return BridgeParams(
            alpha0=r * (self.zeta0 + self.zeta_w * p["l0"] - t) / r0 - alpha_w * p["l0"],
            alpha1=self.psi1 + math.log(r / r0),
            alpha_w=alpha_w,
            alpha_c1=[r * (self.zeta_c + self.zeta_w * p["lc1"]) / r0 - alpha_w * p["lc1"]],
            alpha_c2=[r * self.zeta_w * p["lc2"] / r0 - alpha_w * p["lc2"]],
        )

    def true_ordered_probit(self) -> OrderedProbitParams:
        """Ordered probit for G | (Z, X) after integrating out U."""
        k = self.rho2 * self.sigma_u / self.sigma_w
        s = math.sqrt(1 + self.zeta_u**2 * self.sigma_u**2 * (1 - self.rho2**2))
        zu = self.zeta_u
        return OrderedProbitParams(
            psi0=(self.zeta0 + zu * (self.iota0 - k * self.gamma0)) / s,
            psi1=self.psi1 - math.log(s),
            psi_z=zu * (self.iota_z - k * self.gamma_z) / s,
            psi_w=(self.zeta_w + zu * k) / s,
            psi_a=zu * (self.iota_a - k * self.gamma_a) / s,
            psi_c=[(self.zeta_c + zu * (self.iota_c1 - k * self.gamma_c1)) / s],
        )

    def true_strata_ac(self, z, a, c):
        """(pi_ss, pi_sc, pi_nn) = pr(G = g | Z, A, C) straight from the latent index."""
        z, a, c = (np.asarray(v, dtype=float) for v in (z, a, c))
        mu_u = self.iota0 + self.iota_z * z + self.iota_a * a + self.iota_c1 * c + self.iota_c2 * c * c
        mu_w = self.gamma0 + self.gamma_z * z + self.gamma_a * a + self.gamma_c1 * c + self.gamma_c2 * c * c
        mean = self.zeta0 + self.zeta_w * mu_w + self.zeta_u * mu_u + self.zeta_c * c
        var = (
            1
            + self.zeta_w**2 * self.sigma_w**2
            + self.zeta_u**2 * self.sigma_u**2
            + 2 * self.zeta_w * self.zeta_u * self.rho2 * self.sigma_u * self.sigma_w
        )
        sd = math.sqrt(var)
        p_ss = normal_cdf((mean - math.exp(self.psi1)) / sd)
        p_nn = normal_cdf(-mean / sd)
        return p_ss, 1.0 - p_ss - p_nn, p_nn

    def true_delta(self) -> dict[Stratum, float]:
        """Principal causal effects; analytic under the linear link only."""
        if self.link != "linear":
            raise InvalidArgumentError("analytic PCEs exist only for the linear outcome")
        icpt = self.intercepts
        return {g: float(icpt[1, g] - icpt[0, g]) for g in Stratum}


@dataclass(frozen=True, eq=False)
class LatentTable:
    a: np.ndarray
    c: np.ndarray
    z: np.ndarray
    u: np.ndarray
    w: np.ndarray
    g_star: np.ndarray
    eps: np.ndarray
    g: np.ndarray
    s: np.ndarray
    y: np.ndarray
    y0: np.ndarray  # potential outcomes (Y_z observed as Y)
    y1: np.ndarray

    def dataset(self, truncated: bool = False) -> Dataset:
        y = self.y.copy()
        if truncated:
            y[self.s == 0] = np.nan
        return Dataset(z=self.z, s=self.s, a=self.a, w=self.w, c=self.c, y=y, u=self.u, g=self.g)


def generate_latent(cfg: SimConfig, seed: SeedSpec, n: int | None = None) -> LatentTable:
    n = int(cfg.n if n is None else n)
    rng = generator(seed)
    cov_ac = [
        [cfg.sigma_a**2, cfg.rho1 * cfg.sigma_a * cfg.sigma_c],
        [cfg.rho1 * cfg.sigma_a * cfg.sigma_c, cfg.sigma_c**2],
    ]
    ac = rng_mvn2((cfg.delta_a, cfg.delta_c), cov_ac, n, rng)
    a, c = ac[:, 0], ac[:, 1]
    pz = normal_cdf(cfg.beta0 + cfg.beta_a * a + cfg.beta_c * c)
    z = (rng.random(n) < pz).astype(np.int8)
    mu = np.column_stack(
        [
            cfg.iota0 + cfg.iota_z * z + cfg.iota_a * a + cfg.iota_c1 * c + cfg.iota_c2 * c * c,
            cfg.gamma0 + cfg.gamma_z * z + cfg.gamma_a * a + cfg.gamma_c1 * c + cfg.gamma_c2 * c * c,
        ]
    )
    cov_uw = [
        [cfg.sigma_u**2, cfg.rho2 * cfg.sigma_u * cfg.sigma_w],
        [cfg.rho2 * cfg.sigma_u * cfg.sigma_w, cfg.sigma_w**2],
    ]
    uw = rng_mvn2(mu, cov_uw, n, rng)
    u, w = uw[:, 0], uw[:, 1]
    g_star = cfg.zeta0 + cfg.zeta_w * w + cfg.zeta_u * u + cfg.zeta_c * c
    eps = rng.standard_normal(n)
    g = assign_stratum(g_star + eps, cfg.psi1)
    s = stratum_s(z, g)
    icpt = cfg.intercepts
    lin = cfg.theta_a * a + cfg.theta_w * w + cfg.theta_c * c
    idx0 = icpt[0, g] + lin
    idx1 = icpt[1, g] + lin
    if cfg.link == "linear":
        noise = rng.standard_normal((2, n)) * cfg.sigma_y
        y0, y1 = idx0 + noise[0], idx1 + noise[1]
    else:
        unif = rng.random((2, n))
        y0 = (unif[0] < normal_cdf(idx0)).astype(float)
        y1 = (unif[1] < normal_cdf(idx1)).astype(float)
    y = np.where(z == 1, y1, y0)
    return LatentTable(a=a, c=c, z=z, u=u, w=w, g_star=g_star, eps=eps, g=g, s=s, y=y, y0=y0, y1=y1)


def generate(cfg: SimConfig, seed: SeedSpec, n: int | None = None) -> Dataset:
    """Draw one dataset (observed columns plus latent U and G)."""
    return generate_latent(cfg, seed, n).dataset(truncated=cfg.truncated)


@dataclass(frozen=True)
class OracleTruth:
    delta: dict  # Stratum -> analytic PCE (None for the probit link)
    delta_mc: dict  # Stratum -> Monte Carlo PCE
    delta_mc_se: dict
    proportions: dict  # Stratum -> pr(G = g)
    proportions_by_z: dict  # (z, Stratum) -> pr(G = g | Z = z)
    eta_grid: dict  # "a", "c", and (z, Stratum) -> array over the (a, c) grid


def oracle_truth(cfg: SimConfig, n_mc: int = 200_000, seed: SeedSpec = SeedSpec(0), grid_size: int = 5) -> OracleTruth:
    if n_mc < 100_000:
        raise InvalidArgumentError("oracle Monte Carlo needs n_mc >= 1e5")
    lat = generate_latent(cfg, seed, n_mc)
    delta = cfg.true_delta() if cfg.link == "linear" else {g: None for g in Stratum}
    diff = lat.y1 - lat.y0
    d_mc, d_se, props, props_z = {}, {}, {}, {}
    for g in Stratum:
        m = lat.g == g
        props[g] = float(m.mean())
        d_mc[g] = float(diff[m].mean()) if m.any() else float("nan")
        d_se[g] = float(diff[m].std(ddof=1) / math.sqrt(m.sum())) if m.sum() > 1 else float("nan")
        for z in (0, 1):
            props_z[(z, g)] = float(m[lat.z == z].mean())
    qs = np.linspace(0.1, 0.9, grid_size)
    ag = cfg.delta_a + cfg.sigma_a * normal_quantile(qs)
    cg = cfg.delta_c + cfg.sigma_c * normal_quantile(qs)
    aa, cc = np.meshgrid(ag, cg, indexing="ij")
    eta = {"a": ag, "c": cg}
    from .identify import eta_weights  # local import: identify depends on models only

    for z in (0, 1):
        ew = eta_weights(z, *cfg.true_strata_ac(np.full_like(aa, z), aa, cc))
        for g, val in ew.items():
            eta[(z, g)] = val
    return OracleTruth(delta, d_mc, d_se, props, props_z, eta)


@dataclass(frozen=True)
class BridgeCheck:
    max_abs_residual: float
    max_ratio: float  # max over cells of |residual| / (4 / sqrt(n_cell))
    cells: list  # (z, c_bin, u_bin, n_cell, residual)

    @property
    def ok(self) -> bool:
        return self.max_ratio <= 1.0


def verify_bridge_compatibility(
    cfg: SimConfig,
    n_mc: int = 1_000_000,
    seed: SeedSpec = SeedSpec(0),
    bridge: BridgeParams | None = None,
    bins: int = 4,
    min_cell: int = 500,
) -> BridgeCheck:
    """Residual-test E[S - h(Z, W, C) | Z, C, U] = 0 on a latent-cell grid."""
    bridge = bridge or cfg.true_bridge()
    lat = generate_latent(cfg, seed, n_mc)
    resid = lat.s - normal_cdf(bridge.index(lat.z, lat.w, lat.c))
    edges = np.linspace(0, 1, bins + 1)[1:-1]
    cbin = np.searchsorted(np.quantile(lat.c, edges), lat.c)
    ubin = np.searchsorted(np.quantile(lat.u, edges), lat.u)
    cells = []
    worst_res, worst_ratio = 0.0, 0.0
    for z in (0, 1):
        for i in range(bins):
            for j in range(bins):
                m = (lat.z == z) & (cbin == i) & (ubin == j)
                nc = int(m.sum())
                if nc < min_cell:
                    continue
                r = float(resid[m].mean())
                cells.append((z, i, j, nc, r))
                worst_res = max(worst_res, abs(r))
                worst_ratio = max(worst_ratio, abs(r) * math.sqrt(nc) / 4.0)
    return BridgeCheck(worst_res, worst_ratio, cells)
