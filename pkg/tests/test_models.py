import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strata_lab.data import Dataset, Stratum
from strata_lab.errors import InvalidArgumentError
from strata_lab.models import (
    CASE_COVARIATES,
    BridgeParams,
    OrderedProbitParams,
    OutcomeParams,
    TreatmentParams,
    WModelParams,
    assign_stratum,
    bridge_h,
    ordered_probit_pi,
    outcome_mean,
    s_from_latent,
    stratum_s,
    treatment_prob,
    w_mean,
)

from oracles import PHI_1, phi_cdf

finite = st.floats(-3, 3)


def test_bridge_h_values():
    zero = BridgeParams(0, 0, 0, [0], [0])
    assert bridge_h(0, 1.3, -0.4, zero) == 0.5
    assert abs(bridge_h(1, 0.2, 0.9, zero) - PHI_1) < 1e-6


@settings(max_examples=100, deadline=None)
@given(st.tuples(finite, st.floats(-2, 2), finite, finite, finite), finite, finite)
def test_bridge_h_increasing_in_z(alpha, w, c):
    p = BridgeParams(alpha[0], alpha[1], alpha[2], [alpha[3]], [alpha[4]])
    h0, h1 = bridge_h(0, w, c, p), bridge_h(1, w, c, p)
    assert 0 < h0 < 1 and 0 < h1 < 1
    assert h1 >= h0
    if p.index(0, w, c) < 5:
        assert h1 > h0


def test_bridge_params_validation():
    with pytest.raises(InvalidArgumentError):
        BridgeParams(np.nan, 0, 0, [0], [0])
    with pytest.raises(InvalidArgumentError):
        BridgeParams(0, 0, 0, [0, 1], [0])
    with pytest.raises(InvalidArgumentError):
        bridge_h(0, np.inf, 0, BridgeParams(0, 0, 0, [0], [0]))


def test_param_vectors_round_trip():
    b = BridgeParams(0.1, 0.2, 0.3, [0.4, 0.5], [0.6, 0.7])
    np.testing.assert_array_equal(BridgeParams.from_vector(b.as_vector(), k=2).as_vector(), b.as_vector())
    assert len(BridgeParams.labels(2)) == 7
    w = WModelParams(1, 0.5, 0.75, [1.5], [-1.5], 0.5)
    np.testing.assert_array_equal(WModelParams.from_vector(w.as_vector()).as_vector(), w.as_vector())
    psi = OrderedProbitParams(0.1, -0.2, 0.3, 0.4, 0.5, [0.6])
    np.testing.assert_array_equal(OrderedProbitParams.from_vector(psi.as_vector()).as_vector(), psi.as_vector())
    with pytest.raises(InvalidArgumentError):
        WModelParams(0, 0, 0, [0], [0], 0.0)


def test_treatment_and_w_mean():
    assert treatment_prob(0.3, -0.2, TreatmentParams(0, 0, [0])) == 0.5
    assert treatment_prob(0.0, 0.0, TreatmentParams(0, 1, [1])) == 0.5
    assert treatment_prob(0.5, 0.5, TreatmentParams(0, 1, [1])) == pytest.approx(phi_cdf(1.0), abs=1e-12)
    wm = WModelParams(1.0, 0.5, 0.75, [1.5], [-1.5], 0.5)
    assert w_mean(1, 0, 0, wm) == 1.5


@settings(max_examples=100, deadline=None)
@given(st.tuples(*[finite] * 6), st.sampled_from([0, 1]), finite, finite, finite)
def test_ordered_probit_sums_to_one(psi, z, a, w, c):
    p = OrderedProbitParams(*psi[:5], [psi[5]])
    tri = ordered_probit_pi(z, a, w, c, p)
    assert all(0 <= v <= 1 for v in tri)
    assert abs(sum(tri) - 1) < 1e-12


def test_ordered_probit_special_points():
    zero = OrderedProbitParams(0, 0, 0, 0, 0, [0])
    ss, sc, nn = ordered_probit_pi(1, 0.4, -0.3, 0.2, zero)
    assert abs(ss - phi_cdf(-1)) < 1e-12
    assert abs(nn - 0.5) < 1e-12
    assert abs(sc - (0.5 - phi_cdf(-1))) < 1e-12
    collapsed = OrderedProbitParams(0.3, -30.0, 0.2, 0.1, 0.4, [0.5])
    assert ordered_probit_pi(1, 0.1, 0.2, 0.3, collapsed)[1] < 1e-9


def test_stratum_s_map():
    assert stratum_s(1, Stratum.SC) == 1 and stratum_s(0, Stratum.SC) == 0
    assert stratum_s(0, Stratum.SS) == 1 and stratum_s(1, Stratum.SS) == 1
    assert stratum_s(0, Stratum.NN) == 0 and stratum_s(1, Stratum.NN) == 0


def test_latent_form_matches_composed_form():
    r = np.random.default_rng(99)
    n = 100_000
    g_star = r.normal(0, 2, n)
    eps = r.normal(size=n)
    for psi1 in r.normal(0, 1, 5):
        g = assign_stratum(g_star + eps, psi1)
        for z in (0, 1):
            composed = stratum_s(np.full(n, z), g)
            latent = s_from_latent(np.full(n, z), g_star, eps, psi1)
            # the only disagreement allowed is exact ties at a threshold
            tie = (g_star + eps == 0.0) | (g_star + eps == math.exp(psi1))
            assert np.array_equal(composed[~tie], latent[~tie])


def test_outcome_mean_linear_and_probit():
    icpt = np.array([[0.0, 1.0, 2.0], [2.0, 3.0, 4.0]])
    p = OutcomeParams(icpt, [1.0], case="i")
    assert outcome_mean(1, Stratum.SS, 0, 0, 0, p) == 4.0
    assert outcome_mean(0, Stratum.SC, 0.3, 9.0, 0.5, p) == pytest.approx(1.5)
    zero = OutcomeParams(np.zeros((2, 3)), [0.0], case="iv", link="probit")
    assert outcome_mean(1, Stratum.NN, 0.2, 0.3, 0.4, zero) == 0.5
    iv = OutcomeParams(icpt, [1.0], theta_a=0.5, theta_w=-0.25, case="iv", link="probit")
    val = outcome_mean(0, Stratum.NN, 1.0, 2.0, 0.5, iv)
    assert val == pytest.approx(phi_cdf(0.0 + 0.5 - 0.5 + 0.5))
    assert 0 < val < 1


def test_outcome_case_structure():
    for case, adm in CASE_COVARIATES.items():
        kw = {f"theta_{v}": 1.0 for v in ("a", "w")}
        if set(adm) == {"a", "w"}:
            OutcomeParams(np.zeros((2, 3)), [0.0], case=case, **kw)
        else:
            with pytest.raises(InvalidArgumentError):
                OutcomeParams(np.zeros((2, 3)), [0.0], case=case, **kw)
    with pytest.raises(InvalidArgumentError):
        OutcomeParams(np.zeros((2, 3)), [0.0], case="v")
    with pytest.raises(InvalidArgumentError):
        OutcomeParams(np.zeros((2, 3)), [0.0], link="logit")


def test_outcome_vector_round_trip():
    p = OutcomeParams(np.arange(6.0).reshape(2, 3), [0.5], theta_a=1.5, case="ii")
    q = OutcomeParams.from_vector(p.as_vector(), case="ii")
    np.testing.assert_array_equal(p.intercepts, q.intercepts)
    assert q.theta_a == 1.5
    t = OutcomeParams.from_vector([1.0, 2.0, 3.0, 0.5], case="i", truncated=True)
    assert np.isnan(t.intercept(0, Stratum.SC)) and t.intercept(1, Stratum.SC) == 3.0
    assert p.contrast(Stratum.SS) == 3.0


def test_stratum_tokens():
    assert [g.token for g in Stratum] == ["nn", "sc", "ss"]
    assert Stratum.from_token("sc") is Stratum.SC
    with pytest.raises(InvalidArgumentError):
        Stratum.from_token("de")


def test_dataset_validation_and_immutability():
    d = Dataset(z=[0, 1], s=[1, 0], a=[0.1, 0.2], w=[0.3, 0.4], c=[0.5, 0.6], y=[1.0, np.nan])
    assert d.k == 1 and d.n == 2 and d.is_truncated
    with pytest.raises(ValueError):
        d.a[0] = 3.0
    with pytest.raises(InvalidArgumentError):
        Dataset(z=[0, 2], s=[1, 0], a=[0, 0], w=[0, 0], c=[0, 0])
    with pytest.raises(InvalidArgumentError):
        Dataset(z=[0, 1], s=[1, 0], a=[0, np.nan], w=[0, 0], c=[0, 0])
    with pytest.raises(InvalidArgumentError):
        Dataset(z=[0, 1], s=[1, 0], a=[0], w=[0, 0], c=[0, 0])
    assert d.take([1, 1]).n == 2
    assert d.equals(d.take([0, 1]))
