from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsdlab.errors import ModelError
from qsdlab.models import (
    CoordinateDiffusion,
    DiffusionModel,
    PolynomialEnvelope,
    SamplingPlan,
    check_assumption_A,
    check_H1,
    check_H2,
    check_H3,
    check_H4,
    default_lyapunov,
    linear_diffusion,
    zoo_envelope,
    zoo_instantiate,
)

SMALL = SamplingPlan(n_box=2048, n_shell=256)
LV2 = {"r": [1, 1], "c": [[1, 0.5], [0.5, 1]], "gamma": [1, 1]}


def _model_1d(a: CoordinateDiffusion, drift=lambda z: -z) -> DiffusionModel:
    return DiffusionModel(d=1, a=(a,), b=drift)


def test_lotka_volterra_drift_matches_formula():
    m = zoo_instantiate("lotka_volterra", LV2)
    z = np.array([[0.3, 0.7], [2.0, 1.5]])
    expect = z * (1 - z @ np.array([[1, 0.5], [0.5, 1]]).T)
    assert np.allclose(m.drift(z), expect)
    assert m.zoo_id == "lotka_volterra"


def test_feller_linear_coefficients():
    m = zoo_instantiate("feller_linear", {"r": -1.0, "gamma": 2.0})
    z = np.array([[0.0], [1.5]])
    assert np.allclose(m.diffusion(z), 2 * z)
    assert np.allclose(m.drift(z), -z)
    assert m.drift(np.zeros((1, 1)))[0, 0] == 0.0


def test_crowley_martin_dimension_guard():
    with pytest.raises(ModelError):
        zoo_instantiate("crowley_martin", {"r": [1, 1, 1], "c11": 1, "c22": 1, "beta": 1, "alpha": 1,
                                           "gamma": [1, 1, 1]})


@pytest.mark.parametrize(
    "zoo_id, params",
    [
        ("unknown", {}),
        ("feller_linear", {"r": -1.0, "gamma": 0.0}),
        ("lotka_volterra", {"r": 1.0, "c": 0.0, "gamma": 1.0}),
        ("lotka_volterra", {"r": 1.0, "gamma": 1.0}),
    ],
)
def test_zoo_rejects_bad_parameters(zoo_id, params):
    with pytest.raises(ModelError):
        zoo_instantiate(zoo_id, params)


def test_analytic_jacobian_matches_differences():
    for zid, p in [
        ("lotka_volterra", LV2),
        ("beddington_deangelis", LV2),
        ("holling", {**LV2, "r": [0.5, 0.5], "k": 2}),
        ("crowley_martin", {"r": [1, 0.5], "c11": 1, "c22": 1, "beta": 1, "alpha": 1, "alpha2": 0.3,
                            "alpha3": 0.2, "gamma": [1, 1]}),
    ]:
        m = zoo_instantiate(zid, p)
        z = np.random.default_rng(0).uniform(0.1, 3.0, (50, 2))
        h = 1e-6
        num = np.empty_like(z)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            num[:, i] = (m.growth(z + e)[:, i] - m.growth(z - e)[:, i]) / (2 * h)
        assert np.allclose(m.growth_diag_jacobian(z), num, atol=1e-6), zid


def test_H1_linear_passes():
    rep = check_H1(_model_1d(linear_diffusion(2.0)), SMALL)
    assert rep.passed
    assert rep.witness("H1.da0[0]").margin == pytest.approx(2.0, abs=1e-9)


def test_H1_quadratic_fails_at_origin():
    a = CoordinateDiffusion(lambda s: s**2, lambda s: 2 * s, lambda s: 2 + 0 * s)
    rep = check_H1(_model_1d(a), SMALL)
    assert not rep.passed
    assert rep.witness("H1.da0[0]").margin < 0


def test_H1_logistic_noise_has_divergent_tail():
    # int ds / sqrt(s(1+s)) grows like log s, so the divergence test passes
    a = CoordinateDiffusion(lambda s: s * (1 + s), lambda s: 1 + 2 * s, lambda s: 2 + 0 * s)
    rep = check_H1(_model_1d(a), SMALL)
    assert rep.passed
    assert "HEURISTIC" in rep.notes


def test_H1_requires_large_s_max():
    with pytest.raises(ModelError):
        check_H1(_model_1d(linear_diffusion(1.0)), SamplingPlan(s_max=10.0))


def test_H2_detects_nonvanishing_facet_drift():
    good = zoo_instantiate("lotka_volterra", LV2)
    assert check_H2(good, SMALL).passed
    bad = DiffusionModel(d=1, a=(linear_diffusion(1.0),), b=lambda z: 1.0 - z)
    rep = check_H2(bad, SMALL)
    assert not rep.passed
    assert rep.witness("H2.facet[0]").margin < 0


def test_H3_sign_of_linear_growth():
    lyap = default_lyapunov(PolynomialEnvelope(m=0.0, n=0.0, C1=1, C2=1, C3=1, C4=1, R=1, delta=0), 1)
    sub = zoo_instantiate("feller_linear", {"r": -1.0, "gamma": 1.0})
    sup = zoo_instantiate("feller_linear", {"r": 1.0, "gamma": 1.0})
    assert check_H3(sub, lyap, SMALL.radii, SMALL).passed
    assert not check_H3(sup, lyap, SMALL.radii, SMALL).passed


def test_H4_holds_for_competitive_lv_and_fails_for_linear():
    lv = zoo_instantiate("lotka_volterra", LV2)
    lyap = default_lyapunov(zoo_envelope(lv), 2)
    assert lyap.gamma == pytest.approx(0.5)
    assert check_H4(lv, lyap, SMALL.radii, SMALL).passed
    fe = zoo_instantiate("feller_linear", {"r": -1.0, "gamma": 1.0})
    lin = default_lyapunov(PolynomialEnvelope(m=0.0, n=0.0, C1=1, C2=1, C3=1, C4=1, R=1, delta=0), 1)
    lin = lin._replace(gamma=0.5)
    assert not check_H4(fe, lin, SMALL.radii, SMALL).passed


def test_assumption_A_verdicts():
    lv = zoo_instantiate("lotka_volterra", LV2)
    assert check_assumption_A(lv, zoo_envelope(lv), SMALL).passed
    coop = zoo_instantiate("lotka_volterra", {**LV2, "c": [[1, -2], [-2, 1]]})
    rep = check_assumption_A(coop, zoo_envelope(coop), SMALL)
    assert rep.witness("corollary.e_LV").margin < 0


def test_check_report_margins_decide_pass():
    lv = zoo_instantiate("lotka_volterra", LV2)
    rep = check_assumption_A(lv, zoo_envelope(lv), SMALL)
    assert rep.passed == all(w.margin >= 0 for w in rep.witnesses)
    d = rep.to_dict()
    assert d["passed"] is rep.passed and len(d["witnesses"]) == len(rep.witnesses)


def test_default_lyapunov_dominates_minorant():
    lyap = default_lyapunov(PolynomialEnvelope(m=1.0, n=1.0, C1=1, C2=1, C3=1, C4=1, R=1, delta=0), 3)
    z = np.random.default_rng(1).uniform(0.0, 50.0, (500, 3))
    assert np.all(lyap.V(z) > 0)
    assert np.all(lyap.V(z) >= np.sum(lyap.tildeV(z), axis=1) * (1 - 1e-12))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(1e-6, 1e3))
def test_linear_diffusion_derivatives(gamma, s):
    cd = linear_diffusion(gamma)
    x = np.array([s])
    assert cd.value(x)[0] == pytest.approx(gamma * s)
    assert cd.first(x)[0] == pytest.approx(gamma)
    assert cd.second(x)[0] == 0.0


def test_finite_difference_fallback():
    cd = CoordinateDiffusion(lambda s: s + s**2)
    x = np.array([0.5, 3.0])
    assert np.allclose(cd.first(x), 1 + 2 * x, rtol=1e-6)
    assert np.allclose(cd.second(x), 2.0, rtol=1e-3)
