"""Command-line entry point: ``qsdlab <command> --config FILE``.

Exit codes: 0 success, 1 scientific failure (failed check or verdict, solver
or certificate failure), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigError, GridError, QSDLabError
from .io import config_hash, write_csv, write_json
from .models import (
    LyapunovSpec,
    PolynomialEnvelope,
    SamplingPlan,
    check_assumption_A,
    check_H1,
    check_H2,
    check_H3,
    check_H4,
    default_lyapunov,
    zoo_envelope,
    zoo_instantiate,
)

COMMANDS = ("check", "transform", "spectrum", "qsd", "simulate", "validate", "report")

DEFAULTS = {
    "lyapunov": {"mode": "auto"},
    "checks": {"run": None, "n_box": 10_000, "n_shell": 1_000, "radii": [10, 20, 40, 80, 160], "seed": 0},
    "transform": {"z_max": 1e4, "nodes": 4096, "delta0": 0.1, "R0": None, "ladder": None,
                  "n_samples": 10_000, "revalidate": 100_000, "margin_floor": 0.1, "seed": 0},
    "spectral": {"delta_cut": 1e-3, "R_cut": 20.0, "nodes": 512, "ratio": 1.1, "refinement_levels": 3,
                 "tol": 1e-8, "k_sub": 4, "fitting": True, "rich_tol": 1e-2},
    "montecarlo": {"dt": 1e-3, "n_particles": 10_000, "seed": 0, "scheme": "euler-full-truncation",
                   "t_final": 10.0, "init": None, "checkpoints": 101, "window": None,
                   "observables": ["one", "z1"], "block_size": 8192, "fleming_viot": False},
    "validate": {"lambda_rel_tol": 0.05, "gap_rel_tol": 0.15, "gap_window": None, "probe_x": [],
                 "probe_times": [0.5, 2.0], "probe_particles": 20_000, "stationarity_particles": 0},
    "output": {"dir": "qsdlab_out"},
}


class ScientificFailure(Exception):
    """A check or verdict failed; maps to exit code 1."""


def load_schema() -> dict:
    text = resources.files("qsdlab").joinpath("config_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_config(path: Path) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config is not valid UTF-8 JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    return resolve(cfg), raw


def resolve(cfg: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for key, val in cfg.items():
        if isinstance(val, dict) and key in out:
            out[key].update(val)
        else:
            out[key] = val
    return out


# ---------------------------------------------------------------------------
# Stage helpers
# ---------------------------------------------------------------------------


def _model(cfg: dict):
    return zoo_instantiate(cfg["model"]["zoo_id"], cfg["model"]["params"])


def _lyapunov(cfg: dict, model) -> tuple[LyapunovSpec, PolynomialEnvelope]:
    env = zoo_envelope(model)
    ly = cfg["lyapunov"]
    if ly.get("mode") == "explicit":
        m = float(ly.get("m", env.m))
        env = PolynomialEnvelope(m=m, n=min(env.n, m), C1=env.C1, C2=env.C2, C3=env.C3, C4=env.C4,
                                 R=env.R, delta=env.delta)
        lyap = default_lyapunov(env, model.d)
        if "gamma" in ly:
            lyap = lyap._replace(gamma=ly["gamma"])
        return lyap, env
    return default_lyapunov(env, model.d), env


def run_checks(cfg: dict, model) -> dict:
    c = cfg["checks"]
    plan = SamplingPlan(n_box=c["n_box"], n_shell=c["n_shell"], radii=tuple(c["radii"]), seed=c["seed"])
    lyap, env = _lyapunov(cfg, model)
    wanted = c["run"] or (["H1", "H2", "H3", "A"] + (["H4"] if lyap.gamma is not None else []))
    reports = {}
    for name in wanted:
        if name == "H1":
            r = check_H1(model, plan)
        elif name == "H2":
            r = check_H2(model, plan)
        elif name == "H3":
            r = check_H3(model, lyap, plan.radii, plan)
        elif name == "H4":
            r = check_H4(model, lyap, plan.radii, plan)
        else:
            r = check_assumption_A(model, env, plan)
        reports[name] = r.to_dict()
    return {"checks": reports, "passed": all(r["passed"] for r in reports.values()),
            "note": "limit and integral conditions are judged by trend tests (HEURISTIC)"}


def build_certified(cfg: dict, model):
    from .transform import AlphaConfig, build_transform, certify_beta0

    tc = cfg["transform"]
    lyap, _ = _lyapunov(cfg, model)
    op = build_transform(model, lyap, z_max=tc["z_max"], nodes=tc["nodes"],
                         alpha_config=AlphaConfig(tc["delta0"], tc["R0"]))
    cert = certify_beta0(op, n_samples=tc["n_samples"], seed=tc["seed"], ladder=tc["ladder"],
                         margin_floor=tc["margin_floor"], revalidate=tc["revalidate"])
    return op, cert


def _grid_ladder(cfg: dict):
    from .spectral import GridSpec

    s = cfg["spectral"]
    base = GridSpec(s["delta_cut"], s["R_cut"], s["nodes"], s["ratio"])
    ladder = [base]
    for _ in range(s["refinement_levels"] - 1):
        ladder.append(ladder[-1].refined())
    return ladder


def run_spectrum(cfg: dict, model, op):
    from .spectral import aitken, solve_spectrum

    s = cfg["spectral"]
    ladder = _grid_ladder(cfg)
    results = [solve_spectrum(op, spec, k_sub=s["k_sub"], tol=s["tol"], fitting=s["fitting"]) for spec in ladder]
    lams = [r.lambda1 for r in results]
    changes = [abs(lams[k + 1] - lams[k]) for k in range(len(lams) - 1)]
    study = {
        "values": lams,
        "changes": changes,
        "extrapolated": aitken(lams) if len(lams) >= 3 else None,
        "converged": bool(changes) and changes[-1] <= s["rich_tol"] * abs(lams[-1]),
    }
    return results[-1], study


def _write_spectrum_artifacts(out: Path, res, chash: str) -> None:
    pts = res.grid.points()
    d = res.grid.d
    xcols = [f"x{i + 1}" for i in range(d)]
    write_csv(out / "eigenfunctions.csv", xcols + ["v1", "v1_star"],
              np.column_stack([pts, res.v1, res.v1_star]), chash)
    eig = [[res.lambda1, 0.0]] + [[z.real, z.imag] for z in res.sub_eigs]
    write_csv(out / "eigenvalues.csv", ["re", "im"], np.array(eig), chash)
    for i, ax in enumerate(res.grid.axes):
        write_csv(out / f"grid_x{i + 1}.csv", ["node"], ax.reshape(-1, 1), chash)


def _write_qsd_artifacts(out: Path, res, chash: str) -> dict:
    d = res.grid.d
    pts = res.grid.points()
    mesh = np.meshgrid(*[za[1:-1] for za in res.z_axes], indexing="ij")
    zpts = np.column_stack([m.ravel() for m in mesh])
    write_csv(out / "qsd_x.csv", [f"x{i + 1}" for i in range(d)] + ["density"], np.column_stack([pts, res.qsd_x]), chash)
    write_csv(out / "qsd_z.csv", [f"z{i + 1}" for i in range(d)] + ["density"], np.column_stack([zpts, res.qsd_z]), chash)
    marg = {}
    if d > 1:
        dens = res.qsd_z.reshape(res.grid.shape)
        w = [_trap_weights(za)[1:-1] for za in res.z_axes]
        for i in range(d):
            m = dens
            for j in reversed(range(d)):
                if j != i:
                    m = np.tensordot(m, w[j], axes=([j], [0]))
            fname = f"marginal_z{i + 1}.csv"
            write_csv(out / fname, [f"z{i + 1}", "density"], np.column_stack([res.z_axes[i][1:-1], m]), chash)
            marg[f"z{i + 1}"] = fname
    return marg


def _trap_weights(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x)
    w[:-1] += np.diff(x) / 2
    w[1:] += np.diff(x) / 2
    return w


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("QSDLAB_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError as exc:
        raise ConfigError("QSDLAB_THREADS must be an integer") from exc


def run_simulation(cfg: dict, model, threads: int):
    from .montecarlo import conditioned_series, simulate_paths, survival_rate_fit

    mc = cfg["montecarlo"]
    init = mc["init"] if mc["init"] is not None else [1.0] * model.d
    if len(init) != model.d:
        raise ConfigError(f"montecarlo.init must have {model.d} entries")
    ens = simulate_paths(model, init, dt=mc["dt"], t_final=mc["t_final"], n_particles=mc["n_particles"],
                         seed=mc["seed"], scheme=mc["scheme"], checkpoints=mc["checkpoints"],
                         block_size=mc["block_size"], threads=threads, fleming_viot=mc["fleming_viot"])
    return ens, conditioned_series, survival_rate_fit


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_check(cfg, out, ctx):
    model = _model(cfg)
    rep = run_checks(cfg, model)
    ctx["stages"]["check"] = rep
    ctx["verdicts"]["checks_pass"] = rep["passed"]
    for name, r in rep["checks"].items():
        status = "pass" if r["passed"] else "FAIL"
        print(f"{name}: {status}")
        for w in r["witnesses"]:
            if w["margin"] < 0:
                print(f"    {w['condition']}: margin {w['margin']:.4g}")
    if not rep["passed"]:
        raise ScientificFailure("one or more assumption checks failed")


def cmd_transform(cfg, out, ctx):
    from .transform import boundary_constant_check

    model = _model(cfg)
    op, cert = build_certified(cfg, model)
    for i, tab in enumerate(op.xi_tables):
        write_csv(out / f"xi_table_{i + 1}.csv", ["z", "x"], np.column_stack([tab.u**2, tab.x]), ctx["hash"])
    write_json(out / "certificate.json", cert.to_dict(), ctx["hash"])
    ctx["stages"]["transform"] = {
        "certificate": {k: v for k, v in cert.to_dict().items() if k != "search_log"},
        "alpha": {"delta0": op.alpha_config.delta0, "R0": op.alpha_config.R0},
        "x_extent": op.x_extent.tolist(),
        "boundary_constant": boundary_constant_check(op),
    }
    print(f"beta0 = {cert.beta0:.6g}, M = {cert.M:.6g}, C* = {cert.C_star:.6g}, min margin = {cert.min_margin:.3g}")
    return op


def _spectrum_pipeline(cfg, out, ctx):
    from .spectral import build_grid

    model = _model(cfg)
    for spec in _grid_ladder(cfg):
        build_grid(spec, model.d)
    if not ctx["force"]:
        rep = run_checks(cfg, model)
        if not rep["passed"]:
            ctx["stages"]["check"] = rep
            raise ScientificFailure("model fails the assumption checks; rerun with --force to proceed")
    op, cert = build_certified(cfg, model)
    write_json(out / "certificate.json", cert.to_dict(), ctx["hash"])
    res, study = run_spectrum(cfg, model, op)
    return model, op, res, study


def cmd_spectrum(cfg, out, ctx):
    from .validation import observable, qsd_moment

    model, op, res, study = _spectrum_pipeline(cfg, out, ctx)
    _write_spectrum_artifacts(out, res, ctx["hash"])
    moments = {name: qsd_moment(res, observable(name, model.d)) for name in cfg["montecarlo"]["observables"]}
    ctx["stages"]["spectrum"] = {**res.summary(), "refinement": study, "beta0": op.beta, "qsd_moments": moments}
    print(f"lambda1 = {res.lambda1:.10g}, gap = {res.gap:.6g}, residual = {res.residuals['forward']:.2e}")


def cmd_qsd(cfg, out, ctx):
    from .validation import observable, qsd_moment

    model, op, res, study = _spectrum_pipeline(cfg, out, ctx)
    marg = _write_qsd_artifacts(out, res, ctx["hash"])
    moments = {name: qsd_moment(res, observable(name, model.d)) for name in cfg["montecarlo"]["observables"]}
    ctx["stages"]["qsd"] = {
        "lambda1": res.lambda1,
        "normalization": res.normalization,
        "mass_x": float(res.grid.weights() @ res.qsd_x),
        "mass_x_raw": res.diagnostics["mass_x_raw"],
        "mass_z_raw": res.diagnostics["mass_z_raw"],
        "min_density": float(res.qsd_x.min()),
        "marginals": marg,
        "qsd_moments": moments,
    }
    print(f"QSD assembled: raw z-mass {res.diagnostics['mass_z_raw']:.8f}, lambda1 = {res.lambda1:.10g}")


def cmd_simulate(cfg, out, ctx):
    from .validation import observable

    model = _model(cfg)
    ens, series, rate_fit = run_simulation(cfg, model, ctx["threads"])
    mc = cfg["montecarlo"]
    write_csv(out / "survival.csv", ["t", "survival", "survivors"],
              np.column_stack([ens.checkpoint_times, ens.survival(), ens.survivors()]), ctx["hash"])
    obs_report = {}
    for name in mc["observables"]:
        t, m, h = series(ens, observable(name, model.d))
        fname = "conditioned_" + "".join(ch if ch.isalnum() else "_" for ch in name) + ".csv"
        write_csv(out / fname, ["t", "mean", "half_width"], np.column_stack([t, m, h]), ctx["hash"])
        obs_report[name] = {"file": fname, "t": t.tolist(), "mean": m.tolist(), "half_width": h.tolist()}
    stage = {"metadata": {"n_particles": ens.n_particles, "dt": ens.dt, "scheme": ens.scheme, "seed": ens.seed,
                          **{k: v for k, v in ens.metadata.items() if k != "fv_events"}},
             "observables": obs_report}
    try:
        fit = rate_fit(ens, tuple(mc["window"]) if mc["window"] else None)
        stage["survival_rate"] = fit.to_dict()
        print(f"survival rate = {fit.rate:.6g} +/- {fit.stderr:.2g} on {fit.window}")
    except QSDLabError as exc:
        stage["survival_rate"] = {"error": str(exc)}
        print(f"survival rate fit unavailable: {exc}")
    write_json(out / "ensemble.json", stage["metadata"], ctx["hash"])
    ctx["stages"]["simulate"] = stage


def _load_report(base: Path, command: str) -> dict:
    path = base / command / "report.json"
    if not path.exists():
        raise ConfigError(f"missing {command} artifacts at {path}; run `qsdlab {command}` first")
    return json.loads(path.read_text(encoding="utf-8"))


def cmd_validate(cfg, out, ctx):
    from .validation import gap_rate_check, stationarity_test, stochastic_representation_probe, observable

    base = out.parent
    spec_rep = _load_report(base, "spectrum")
    sim_rep = _load_report(base, "simulate")
    v = cfg["validate"]
    verdicts = {}
    lam = spec_rep["stages"]["spectrum"]["lambda1"]
    fit = sim_rep["stages"]["simulate"].get("survival_rate", {})
    if "rate" in fit:
        rel = abs(fit["rate"] - lam) / lam
        tol = max(v["lambda_rel_tol"], 2 * fit["stderr"] / lam)
        verdicts["lambda1_agreement"] = {"spectral": lam, "mc_rate": fit["rate"], "relative_error": rel,
                                         "tolerance": tol, "pass": bool(rel <= tol)}
    else:
        verdicts["lambda1_agreement"] = {"pass": False, "message": fit.get("error", "no rate fit")}
    need_inline = bool(v["probe_x"]) or v["stationarity_particles"] > 0 or v["gap_window"] is not None
    if need_inline:
        model, op, res, _ = _spectrum_pipeline(cfg, out, ctx)
        mc = cfg["montecarlo"]
        if v["probe_x"]:
            name = mc["observables"][-1]
            verdicts["stochastic_representation"] = stochastic_representation_probe(
                op, res, model, observable(name, model.d), v["probe_x"], v["probe_times"],
                n_particles=v["probe_particles"], dt=mc["dt"], seed=mc["seed"])
        if v["gap_window"] is not None:
            init = mc["init"] if mc["init"] is not None else [1.0] * model.d
            g = gap_rate_check(res, model, init, obs=mc["observables"][-1], n_particles=mc["n_particles"],
                               dt=mc["dt"], t_final=mc["t_final"], window=tuple(v["gap_window"]),
                               rel_tol=v["gap_rel_tol"], seed=mc["seed"], checkpoints=mc["checkpoints"])
            verdicts["gap_rate"] = g
        if v["stationarity_particles"] > 0:
            verdicts["stationarity"] = stationarity_test(res, model, mc["observables"],
                                                         n_particles=v["stationarity_particles"],
                                                         dt=mc["dt"], seed=mc["seed"])
    ctx["stages"]["validate"] = verdicts
    for name, item in verdicts.items():
        status = "pass" if item["pass"] else "FAIL"
        extra = " (noise floor reached)" if item.get("outcome") == "noise_floor" else ""
        print(f"{name}: {status}{extra}")
        ctx["verdicts"][name] = item["pass"]
    if not all(item["pass"] for item in verdicts.values()):
        raise ScientificFailure("one or more validation verdicts failed")


def cmd_report(cfg, out, ctx):
    base = out.parent
    found = {}
    for command in COMMANDS:
        if command == "report":
            continue
        path = base / command / "report.json"
        if path.exists():
            found[command] = json.loads(path.read_text(encoding="utf-8"))
    if not found:
        raise ConfigError(f"no command reports under {base}")
    summary = {}
    for command, rep in found.items():
        summary[command] = {"exit_code": rep.get("exit_code"), "verdicts": rep.get("verdicts", {}),
                            "config_sha256": rep.get("config_sha256"), "wall_time": rep.get("wall_time")}
        print(f"{command}: exit {rep.get('exit_code')}  " + ", ".join(
            f"{k}={'pass' if val else 'FAIL'}" for k, val in rep.get("verdicts", {}).items()))
    ctx["stages"]["report"] = summary


HANDLERS = {
    "check": cmd_check,
    "transform": cmd_transform,
    "spectrum": cmd_spectrum,
    "qsd": cmd_qsd,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsdlab", description="Quasi-stationary distributions of absorbed diffusions.")
    p.add_argument("--version", action="version", version=f"qsdlab {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path, help="UTF-8 JSON run configuration")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (fallback: QSDLAB_THREADS)")
    p.add_argument("--force", action="store_true", help="proceed even if assumption checks fail")
    p.add_argument("--dry-run", action="store_true", help="print the resolved plan and exit")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        cfg, raw = load_config(args.config)
        threads = _threads(args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    chash = config_hash(raw)
    base = args.out if args.out is not None else Path(cfg["output"]["dir"])
    out = base / args.command
    if args.dry_run:
        plan = {"command": args.command, "config_sha256": chash, "output": str(out), "threads": threads,
                "force": args.force, "resolved_config": cfg}
        if args.command in ("spectrum", "qsd"):
            plan["grid_ladder"] = [dataclasses.asdict(s) for s in _grid_ladder(cfg)]
        print(json.dumps(plan, indent=2, default=str))
        return 0
    ctx = {"hash": chash, "threads": threads, "force": args.force, "stages": {}, "verdicts": {}}
    start = time.perf_counter()
    code = 0
    error = None
    try:
        HANDLERS[args.command](cfg, out, ctx)
    except ScientificFailure as exc:
        code, error = 1, str(exc)
    except (ConfigError, GridError) as exc:
        code, error = 2, str(exc)
    except QSDLabError as exc:
        code, error = 1, f"{type(exc).__name__}: {exc}"
    report = {
        "command": args.command,
        "exit_code": code,
        "wall_time": time.perf_counter() - start,
        "stages": ctx["stages"],
        "verdicts": ctx["verdicts"],
        "version": __version__,
    }
    if error:
        report["error"] = error
        print(f"error: {error}", file=sys.stderr)
    if code != 2 or args.command not in ("validate", "report"):
        write_json(out / "report.json", report, chash)
    return code


if __name__ == "__main__":
    sys.exit(main())
