import math
from dataclasses import replace

import numpy as np
import pytest

from strata_lab import SeedSpec, SimConfig, Stratum, generate, oracle_truth
from strata_lab.dgp import generate_latent, verify_bridge_compatibility
from strata_lab.errors import InvalidArgumentError
from strata_lab.models import stratum_s
from strata_lab.numerics import probit_mle

from oracles import ALPHA_STAR, PI_SS_100_STRUCTURAL, structural_strata_frequency

CFG = SimConfig()


def test_derived_constraints():
    assert CFG.gamma_z == pytest.approx(0.5)
    assert CFG.gamma_a == pytest.approx(0.75)
    assert CFG.gamma_c2 == pytest.approx(-1.5)
    flipped = replace(CFG, rho2=-0.5)
    assert flipped.gamma_z == pytest.approx(-0.5) and flipped.gamma_c2 == pytest.approx(1.5)


@pytest.mark.parametrize(
    "override", [{"sigma_u": 0.0}, {"rho1": 1.0}, {"rho2": 0.0}, {"rho2": -1.2}, {"link": "logit"}, {"n": 0}]
)
def test_config_validation(override):
    with pytest.raises(InvalidArgumentError):
        replace(CFG, **override)


def test_true_bridge_matches_frozen_values():
    np.testing.assert_allclose(CFG.true_bridge().as_vector(), ALPHA_STAR, rtol=0, atol=1e-12)


def test_regeneration_is_bit_identical():
    a = generate(CFG, SeedSpec(4), 2000)
    b = generate(CFG, SeedSpec(4), 2000)
    assert a.equals(b)
    for col in ("z", "s", "a", "w", "c", "y", "u", "g"):
        assert getattr(a, col).tobytes() == getattr(b, col).tobytes()
    assert not a.equals(generate(CFG, SeedSpec(5), 2000))


def test_s_is_deterministic_map_and_monotone():
    lat = generate_latent(CFG, SeedSpec(8), 50_000)
    assert np.array_equal(lat.s, stratum_s(lat.z, lat.g))
    s1 = stratum_s(np.ones_like(lat.z), lat.g)
    s0 = stratum_s(np.zeros_like(lat.z), lat.g)
    assert np.all(s1 >= s0)
    assert set(np.unique(lat.g)) <= {0, 1, 2}


def test_treatment_assignment_at_center():
    lat = generate_latent(CFG, SeedSpec(9), 1_000_000)
    m = (np.abs(lat.a) < 0.05) & (np.abs(lat.c) < 0.05)
    k = int(m.sum())
    p = lat.z[m].mean()
    # the bin is narrow but not a point: allow the first-order bin effect on top of 4 SEs
    assert abs(p - 0.5) < 4 * math.sqrt(0.25 / k) + 0.01


def test_covariate_correlation():
    lat = generate_latent(CFG, SeedSpec(10), 1_000_000)
    r = np.corrcoef(lat.a, lat.c)[0, 1]
    se = (1 - 0.25) / math.sqrt(lat.a.size)
    assert abs(r - 0.5) < 4 * se


def test_no_confounding_channel_when_zeta_u_zero():
    cfg = replace(CFG, zeta_u=0.0)
    lat = generate_latent(cfg, SeedSpec(11), 200_000)
    x = np.column_stack([np.ones(lat.z.size), lat.w, lat.c, lat.z, lat.a])
    fit = probit_mle((lat.g != Stratum.NN).astype(int), x)
    se = np.sqrt(np.diag(fit.cov))
    assert abs(fit.coef[3]) < 4 * se[3] and abs(fit.coef[4]) < 4 * se[4]


def test_w_regression_recovers_constraints():
    lat = generate_latent(CFG, SeedSpec(12), 100_000)
    x = np.column_stack([np.ones(lat.z.size), lat.z, lat.a, lat.c, lat.c**2])
    coef, *_ = np.linalg.lstsq(x, lat.w, rcond=None)
    resid = lat.w - x @ coef
    cov = resid.var() * np.linalg.inv(x.T @ x)
    truth = [CFG.gamma0, CFG.gamma_z, CFG.gamma_a, CFG.gamma_c1, CFG.gamma_c2]
    assert np.all(np.abs(coef - truth) <= 3 * np.sqrt(np.diag(cov)))


def test_truncated_output_masks_y():
    d = generate(replace(CFG, truncated=True), SeedSpec(13), 3000)
    assert np.all(np.isnan(d.y[d.s == 0]))
    assert np.all(np.isfinite(d.y[d.s == 1]))


def test_probit_link_outcomes_binary():
    d = generate(replace(CFG, link="probit"), SeedSpec(14), 3000)
    assert set(np.unique(d.y)) <= {0.0, 1.0}


def test_case_slopes():
    assert CFG.for_case("iv").theta_a == 1.0 and CFG.for_case("iv").theta_w == 1.0
    with pytest.raises(InvalidArgumentError):
        CFG.for_case("ii").true_outcome("i")


def test_true_strata_agree_with_structural_simulation():
    ss, sc, nn = CFG.true_strata_ac(1, 0.0, 0.0)
    assert abs(ss + sc + nn - 1) < 1e-15
    mean, se = PI_SS_100_STRUCTURAL
    assert abs(ss - mean) < 3 * se
    freq = structural_strata_frequency(0, 0.5, -0.5, n=1_000_000)
    ss0, _, nn0 = CFG.true_strata_ac(0, 0.5, -0.5)
    assert abs(freq["ss"] - ss0) < 4 * math.sqrt(ss0 * (1 - ss0) / 1e6)
    assert abs(freq["nn"] - nn0) < 4 * math.sqrt(nn0 * (1 - nn0) / 1e6)


def test_oracle_truth_analytic_and_mc_branches():
    tr = oracle_truth(CFG, n_mc=200_000, seed=SeedSpec(15))
    for g in Stratum:
        assert tr.delta[g] == 2.0
        assert abs(tr.delta_mc[g] - 2.0) < 4 * tr.delta_mc_se[g]
    assert sum(tr.proportions.values()) == pytest.approx(1.0)
    for z in (0, 1):
        s = sum(tr.eta_grid[(z, g)] for g in Stratum)
        np.testing.assert_allclose(s, 1.0, atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        oracle_truth(CFG, n_mc=1000)


def test_oracle_truth_collapsed_complier_stratum():
    tr = oracle_truth(replace(CFG, psi1=-30.0), n_mc=100_000, seed=SeedSpec(16))
    assert tr.proportions[Stratum.SC] < 1e-3


def test_bridge_compatibility_default_and_flipped():
    assert verify_bridge_compatibility(CFG, n_mc=1_000_000, seed=SeedSpec(17)).ok
    assert verify_bridge_compatibility(replace(CFG, rho2=-0.5), n_mc=1_000_000, seed=SeedSpec(18)).ok


def test_bridge_compatibility_negative_control():
    # the bridge of a different design no longer solves this design's equation
    wrong = replace(CFG, zeta_u=0.8).true_bridge()
    chk = verify_bridge_compatibility(CFG, n_mc=1_000_000, seed=SeedSpec(19), bridge=wrong)
    assert not chk.ok
