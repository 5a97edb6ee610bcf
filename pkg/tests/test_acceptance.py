"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a one-line verdict that is printed at the end of the
pytest run (see ``conftest.pytest_terminal_summary``). Run this file directly
for the same lines without pytest's own output.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from conftest import BD2, CM2, FELLER, LOGISTIC, LV2, certified, conjugation_errors

from qsdlab.models import (
    CoordinateDiffusion,
    DiffusionModel,
    SamplingPlan,
    check_assumption_A,
    default_lyapunov,
    zoo_envelope,
    zoo_instantiate,
)
from qsdlab.montecarlo import coming_down_diagnostic, simulate_paths, survival_rate_fit
from qsdlab.spectral import GridSpec, solve_spectrum
from qsdlab.transform import boundary_constant_check, build_transform, certification_sample, certify_beta0
from qsdlab.validation import gap_rate_check, observable, stationarity_test, stochastic_representation_probe

RESULTS: dict[int, tuple[bool, str]] = {}

TITLES = {
    1: "closed-form eigenpair (Feller)",
    2: "cross-method extinction rate (1D logistic)",
    3: "stochastic representation probe",
    4: "gap-rate convergence",
    5: "stationarity of the computed QSD",
    6: "Liouville certificates on 5 zoo instances",
    7: "transform identities",
    8: "2D competitive Lotka-Volterra",
    9: "assumption checker verdicts",
    10: "coming-down dichotomy",
}

LOGISTIC_GRID = GridSpec(delta_cut=1e-4, R_cut=20.0, nodes=2048, ratio=1.05)


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(verdict_line(n))
    assert ok, detail


def verdict_line(n: int) -> str:
    ok, detail = RESULTS[n]
    return f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {TITLES[n]}: {detail}"


def _l1_to_exponential(res) -> float:
    z = res.z_axes[0]
    w = np.zeros_like(z)
    dz = np.diff(z)
    w[:-1] += dz / 2
    w[1:] += dz / 2
    return float(np.sum(w[1:-1] * np.abs(res.qsd_z - np.exp(-z[1:-1]))))


@pytest.fixture(scope="module")
def logistic_bench():
    op = certified(LOGISTIC)
    res = solve_spectrum(op, LOGISTIC_GRID, k_sub=4)
    return zoo_instantiate(*LOGISTIC), op, res


def test_criterion_01_feller_eigenpair():
    start = time.perf_counter()
    op = certified(FELLER)
    base = GridSpec(1e-3, 30.0, 256, 1.1)
    ladder = [base, base.refined(), base.refined().refined()]
    results = [solve_spectrum(op, spec, k_sub=0) for spec in ladder]
    fine = results[-1]
    l1 = _l1_to_exponential(fine)
    elapsed = time.perf_counter() - start
    ok = 0.99 <= fine.lambda1 <= 1.01 and l1 <= 0.02 and elapsed <= 60
    record(1, ok, f"lambda1={fine.lambda1:.6f} (target 1), L1 to e^-z={l1:.2e} (<=0.02) on "
                  f"{fine.grid.spec.nodes} nodes, {elapsed:.1f}s (<=60s)")


def test_criterion_02_extinction_rate(logistic_bench):
    model, op, res = logistic_bench
    start = time.perf_counter()
    ens = simulate_paths(model, [1.0], dt=1e-3, t_final=25.0, n_particles=100_000, seed=2, checkpoints=251)
    fit = survival_rate_fit(ens)
    elapsed = time.perf_counter() - start
    tol = max(0.05 * res.lambda1, 2 * fit.stderr)
    err = abs(fit.rate - res.lambda1)
    ok = err <= tol and elapsed <= 300
    record(2, ok, f"MC rate={fit.rate:.5f}+/-{fit.stderr:.1e} on {fit.window}, spectral={res.lambda1:.5f}, "
                  f"|diff|={err:.2e} (<= {tol:.2e}), MC {elapsed:.0f}s")


def test_criterion_03_stochastic_representation(logistic_bench):
    model, op, res = logistic_bench
    rep = stochastic_representation_probe(op, res, model, observable("exp(-z1)", 1), [0.5, 1.0, 2.0, 3.0, 4.0],
                                          [0.5, 2.0], n_particles=20_000, seed=0)
    worst = max(r["deviation_in_ci"] for r in rep["rows"])
    n_ok = sum(r["pass"] for r in rep["rows"])
    record(3, rep["pass"] and len(rep["rows"]) == 10,
           f"{n_ok}/{len(rep['rows'])} probe comparisons inside the 95% CI (worst {worst:.2f} half-widths)")


def test_criterion_04_gap_rate(logistic_bench):
    model, op, res = logistic_bench
    rep = gap_rate_check(res, model, [3.0], obs="z1", n_particles=100_000, dt=1e-3, t_final=6.0,
                         window=(1.0, 6.0), rel_tol=0.15, seed=0)
    if rep["outcome"] == "noise_floor":
        detail = f"noise floor reached: {rep['message']}"
    else:
        detail = (f"fitted rate={rep['fit']['rate']:.4f}, spectral gap={res.gap:.4f}, "
                  f"relative error={rep['relative_error']:.3f} (<=0.15)")
    record(4, rep["pass"], detail)


def test_criterion_05_stationarity(logistic_bench):
    model, op, res = logistic_bench
    names = ["z1", "z1^2", "exp(-z1)"]
    rep = stationarity_test(res, model, names, n_particles=100_000, dt=1e-3, seed=0)
    worst = 0.0
    for v in rep["observables"].values():
        h0 = v["series"][0]["half_width"]
        for s in v["series"]:
            worst = max(worst, abs(s["mean"] - v["initial"]) / max(s["half_width"], h0))
    record(5, rep["pass"], f"3 observables over [0, {rep['t_max']:.2f}], worst drift {worst:.2f} CI (<=2)")


def test_criterion_06_certificates():
    parts, ok = [], True
    for name, zoo in (("feller", FELLER), ("logistic", LOGISTIC), ("LV2", LV2), ("BD2", BD2), ("CM2", CM2)):
        op = build_transform(zoo_instantiate(*zoo))
        try:
            cert = certify_beta0(op, n_samples=10_000, revalidate=100_000)
        except Exception as exc:  # noqa: BLE001 - the verdict records any failure
            ok = False
            parts.append(f"{name}: {type(exc).__name__}")
            continue
        x = certification_sample(op, 1000, seed=77)
        e = {N: op.zeroth_order_e(cert.beta0, N, x) for N in (1.0, 1.5, 2.0, 4.0, math.inf)}
        scale = np.max(np.abs(e[1.0])) + np.max(np.abs(e[math.inf]))
        aff = max(float(np.max(np.abs(e[N] - (e[math.inf] + (e[1.0] - e[math.inf]) / N)))) for N in (1.5, 2.0, 4.0))
        good = cert.C_star > 0 and cert.revalidation_margin >= -1e-8 and aff <= 1e-13 * scale
        ok &= good
        parts.append(f"{name}: beta0={cert.beta0:.3g} C*={cert.C_star:.3g} reval={cert.revalidation_margin:.2e} "
                     f"affinity={aff / scale:.1e}")
    record(6, ok, "; ".join(parts))


def test_criterion_07_transform_identities():
    rng = np.random.default_rng(5)
    lv = build_transform(zoo_instantiate(*LV2))
    worst_rt = 0.0
    for tab in lv.xi_tables:
        z = np.exp(rng.uniform(math.log(1e-6), math.log(0.9 * tab.z_max), 1000))
        worst_rt = max(worst_rt, float(np.max(np.abs(tab.inverse(tab.forward(z)) - z) / np.maximum(z, 1.0))))
        x = rng.uniform(1e-4, 0.99 * tab.x_max, 1000)
        worst_rt = max(worst_rt, float(np.max(np.abs(tab.forward(tab.inverse(x)) - x))))
    q_one = float(lv.log_density_Q(np.ones((1, 2)))[0])
    conj = float(conjugation_errors(certified(LOGISTIC, revalidate=0), n_funcs=50).max())
    lin = boundary_constant_check(build_transform(zoo_instantiate("feller_linear", {"r": -1.0, "gamma": 1.0})))
    lin_err = float(np.max(lin["coordinates"][0]["abs_error"]))
    cd = CoordinateDiffusion(lambda s: s * (1 + s), lambda s: 1 + 2 * s, lambda s: 2 + 0 * s)
    quad = boundary_constant_check(build_transform(DiffusionModel(d=1, a=(cd,), b=lambda z: -z)), xs=(1e-3,))
    quad_err = quad["coordinates"][0]["abs_error"][0]
    ok = worst_rt <= 1e-10 and q_one == 0.0 and conj <= 1e-4 and lin_err <= 1e-12 and quad_err <= 1e-2
    record(7, ok, f"round trip {worst_rt:.1e} (<=1e-10), Q(1,1)={q_one}, conjugation {conj:.1e} (<=1e-4), "
                  f"linear |x^2(q^2-q')-3/4|={lin_err:.1e}, s(1+s) at 1e-3: {quad_err:.1e} (<=1e-2)")


def test_criterion_08_lotka_volterra_2d():
    start = time.perf_counter()
    model = zoo_instantiate(*LV2)
    op = certified(LV2)
    res = solve_spectrum(op, GridSpec(1e-3, 10.0, 256, 1.1), k_sub=2)
    mass = float(res.grid.weights() @ res.qsd_x)
    ens = simulate_paths(model, [1.0, 1.0], dt=1e-3, t_final=8.0, n_particles=100_000, seed=3, checkpoints=161)
    fit = survival_rate_fit(ens)
    rel = abs(fit.rate - res.lambda1) / res.lambda1
    elapsed = time.perf_counter() - start
    ok = (res.lambda1 > 0 and bool(np.all(res.qsd_x > 0)) and abs(mass - 1) <= 1e-12 and res.gap > 0
          and rel <= 0.10 and elapsed <= 1200)
    record(8, ok, f"lambda1={res.lambda1:.5f}, gap={res.gap:.4f}, min density={res.qsd_x.min():.1e}, "
                  f"mass={mass:.12f}, MC rate={fit.rate:.5f} (rel {rel:.3f} <= 0.10), {elapsed:.0f}s")


def test_criterion_09_checker_corpus():
    plan = SamplingPlan()
    corpus = {
        "competitive LV": (LV2, True),
        "cooperative LV (c_off=-2)": (("lotka_volterra", {**LV2[1], "c": [[1, -2], [-2, 1]]}), False),
        "Holling c_ii <= r_i": (("holling", {"r": [1, 1], "c": [[0.8, 0.2], [0.2, 0.8]], "gamma": [1, 1], "k": 1}),
                                False),
        "Crowley-Martin alpha=1": (CM2, True),
        "Crowley-Martin alpha=0.5": (("crowley_martin", {**CM2[1], "alpha": 0.5}), False),
    }
    parts, ok = [], True
    for name, (zoo, expect) in corpus.items():
        m = zoo_instantiate(*zoo)
        rep = check_assumption_A(m, zoo_envelope(m), plan)
        extra = ""
        if name.startswith("cooperative"):
            extra = f", e_LV margin {rep.witness('corollary.e_LV').margin:.2f}"
            good = rep.passed is expect and rep.witness("corollary.e_LV").margin < 0
        else:
            good = rep.passed is expect
        ok &= good
        parts.append(f"{name}: {'pass' if rep.passed else 'fail'}{extra}")
    record(9, ok, "; ".join(parts))


def test_criterion_10_coming_down():
    lv = zoo_instantiate(*LV2)
    fe = zoo_instantiate(*FELLER)
    R, lam = 2.0, 1.0
    radii = (10.0, 20.0, 40.0)
    m_lv = default_lyapunov(zoo_envelope(lv), 2).m
    env_fe = zoo_envelope(fe)
    a = coming_down_diagnostic(lv, R, lam, [[r / math.sqrt(2)] * 2 for r in radii], n=2000, seed=1)
    b = coming_down_diagnostic(fe, R, lam, [[r] for r in radii], n=2000, seed=1)
    est_a = [r["estimate"] for r in a["rows"]]
    est_b = [r["estimate"] for r in b["rows"]]
    ok = (a["bounded_within_2x"] and a["horizon_ok"] and b["increasing"] and b["horizon_ok"]
          and est_b[-1] / est_b[0] > 2.0 and m_lv == 1.0 and env_fe.m == 0.0)
    record(10, ok, f"LV (m=1): {np.round(est_a, 3).tolist()} (max/min {a['max_over_min']:.2f} <= 2); "
                   f"linear (m=0): {np.round(est_b, 3).tolist()} (growing)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
