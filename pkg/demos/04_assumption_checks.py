"""Run the assumption checkers over a small corpus of zoo models."""

from __future__ import annotations

from qsdlab.models import SamplingPlan, check_assumption_A, check_H1, check_H2, zoo_envelope, zoo_instantiate

CORPUS = {
    "competitive LV": ("lotka_volterra", {"r": [1, 1], "c": [[1, 0.5], [0.5, 1]], "gamma": [1, 1]}),
    "cooperative LV": ("lotka_volterra", {"r": [1, 1], "c": [[1, -2], [-2, 1]], "gamma": [1, 1]}),
    "Holling, weak self-limitation": ("holling", {"r": [1, 1], "c": [[0.8, 0.2], [0.2, 0.8]], "gamma": [1, 1]}),
    "Beddington-DeAngelis": ("beddington_deangelis", {"r": [1, 1], "c": [[1, 0.5], [0.5, 1]], "gamma": [1, 1]}),
    "Crowley-Martin alpha=1": ("crowley_martin", {"r": [1, 0.5], "c11": 1, "c22": 1, "beta": 1, "alpha": 1,
                               "gamma": [1, 1]}),
    "Crowley-Martin alpha=0.5": ("crowley_martin", {"r": [1, 0.5], "c11": 1, "c22": 1, "beta": 1, "alpha": 0.5,
                                 "gamma": [1, 1]}),
}


def main() -> None:
    plan = SamplingPlan(n_box=4096, n_shell=512)
    for name, (zid, params) in CORPUS.items():
        model = zoo_instantiate(zid, params)
        reports = {
            "H1": check_H1(model, plan),
            "H2": check_H2(model, plan),
            "A": check_assumption_A(model, zoo_envelope(model), plan),
        }
        verdict = ", ".join(f"{k}={'pass' if r.passed else 'FAIL'}" for k, r in reports.items())
        print(f"{name:32s} {verdict}")
        for w in reports["A"].failures():
            print(f"    {w.condition}: margin {w.margin:.3g}")


if __name__ == "__main__":
    main()
