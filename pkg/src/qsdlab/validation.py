"""Cross-checks between the grid solver and Monte Carlo estimates."""

from __future__ import annotations

import math
import re
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NoiseFloorError
from .models import DiffusionModel
from .montecarlo import (
    conditioned_expectation,
    convergence_rate_fit,
    grid_density_sampler,
    simulate_paths,
)
from .spectral import SpectralResult, discretize, semigroup_apply
from .transform import TransformedOperator

Array = np.ndarray

_OBS = re.compile(r"^(one|sum|z(\d+)(\^2)?|exp\(-z(\d+)\))$")


def observable(name: str, d: int) -> Callable[[Array], Array]:
    """Named test function of the state: ``one``, ``sum``, ``z1``, ``z1^2``, ``exp(-z1)``.

    Coordinates are 1-based in names.
    """
    m = _OBS.match(name.replace(" ", ""))
    if not m:
        raise ConfigError(f"unknown observable {name!r}")
    if name == "one":
        return lambda z: np.ones(np.atleast_2d(z).shape[0])
    if name == "sum":
        return lambda z: np.atleast_2d(z).sum(axis=1)
    idx = int(m.group(2) or m.group(4)) - 1
    if not 0 <= idx < d:
        raise ConfigError(f"observable {name!r} refers to a missing coordinate")
    if m.group(4):
        return lambda z: np.exp(-np.atleast_2d(z)[:, idx])
    if m.group(3):
        return lambda z: np.atleast_2d(z)[:, idx] ** 2
    return lambda z: np.atleast_2d(z)[:, idx]


def qsd_moment(res: SpectralResult, f: Callable[[Array], Array]) -> float:
    """``int f dnu`` under the ``z``-density by the trapezoid rule on the image grid."""
    mesh = np.meshgrid(*[za[1:-1] for za in res.z_axes], indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    w = np.ones(1)
    for za in res.z_axes:
        tw = np.zeros_like(za)
        dz = np.diff(za)
        tw[:-1] += dz / 2
        tw[1:] += dz / 2
        w = np.multiply.outer(w, tw[1:-1]).ravel()
    return float(np.sum(w * res.qsd_z * f(pts)))


def stochastic_representation_probe(
    t: TransformedOperator,
    res: SpectralResult,
    model: DiffusionModel,
    f: Callable[[Array], Array],
    probe_x: Sequence[float],
    times: Sequence[float],
    n_particles: int = 20_000,
    dt: float = 1e-3,
    sg_dt: float = 1e-3,
    seed: int = 0,
) -> dict:
    """Compare the adjoint semigroup with the conjugated Monte Carlo functional.

    The semigroup starts from ``exp(-Q/2 - beta0 U) f`` on the grid; at each
    probe node and time its value is compared with
    ``exp(-Q/2 - beta0 U) E^x[f(X_t) 1{t < S}]`` estimated from paths started
    at ``xi^{-1}(x)``. Only ``d = 1`` is supported.
    """
    if t.d != 1:
        raise ConfigError("stochastic representation probe is implemented for d = 1")
    grid = res.grid
    adj = discretize(t, grid, "adjoint")
    co = adj.coefficients
    conj = np.exp(-co["Q"] / 2 - t.beta * co["U"])
    f_tilde = conj * f(co["z"])
    times = sorted(float(s) for s in times)
    traj = semigroup_apply(adj, f_tilde, max(times), dt=sg_dt, scheme="crank-nicolson", record=times)
    nodes = grid.interior_axes[0]
    rows = []
    for k, xp in enumerate(probe_x):
        j = int(np.argmin(np.abs(nodes - xp)))
        z0 = co["z"][j]
        ens = simulate_paths(model, z0, dt=dt, t_final=max(times), n_particles=n_particles,
                             seed=seed + 101 * k, checkpoints=times)
        for s in times:
            ci_idx = ens.checkpoint_index(s)
            alive = ens.snapshots[ci_idx]
            vals = np.zeros(n_particles)
            vals[: alive.shape[0]] = f(alive)
            mc = float(vals.mean())
            half = 1.96 * float(vals.std(ddof=1)) / math.sqrt(n_particles)
            u = float(traj[s].values[j])
            target = conj[j] * mc
            rows.append({
                "x": float(nodes[j]), "z": float(z0[0]), "t": s,
                "semigroup": u, "mc_conjugated": float(target), "half_width": float(conj[j] * half),
                "deviation_in_ci": float(abs(u - target) / max(conj[j] * half, 1e-300)),
                "pass": bool(abs(u - target) <= conj[j] * half),
            })
    return {"rows": rows, "pass": all(r["pass"] for r in rows)}


def stationarity_test(
    res: SpectralResult,
    model: DiffusionModel,
    observables: Sequence[str],
    n_particles: int = 100_000,
    dt: float = 1e-3,
    seed: int = 0,
    n_times: int = 11,
) -> dict:
    """Start from samples of the computed QSD and track conditioned means up to ``3/lambda1``."""
    sampler = grid_density_sampler(res.z_axes, res.qsd_z)
    t_max = 3.0 / res.lambda1
    times = np.linspace(0.0, t_max, n_times)
    ens = simulate_paths(model, sampler, dt=dt, t_final=t_max, n_particles=n_particles, seed=seed,
                         checkpoints=times)
    out = {"t_max": t_max, "observables": {}}
    ok = True
    for name in observables:
        f = observable(name, model.d)
        m0, h0 = conditioned_expectation(ens, f, ens.checkpoint_times[0])
        series = []
        for s in ens.checkpoint_times:
            m, h = conditioned_expectation(ens, f, s)
            passed = abs(m - m0) <= 2 * max(h, h0)
            ok &= passed
            series.append({"t": float(s), "mean": m, "half_width": h, "pass": bool(passed)})
        out["observables"][name] = {"initial": m0, "qsd_moment": qsd_moment(res, f), "series": series}
    out["pass"] = bool(ok)
    return out


def gap_rate_check(
    res: SpectralResult,
    model: DiffusionModel,
    init,
    obs: str = "z1",
    n_particles: int = 100_000,
    dt: float = 1e-3,
    t_final: float = 6.0,
    window: tuple[float, float] | None = (1.0, 6.0),
    rel_tol: float = 0.15,
    seed: int = 0,
    checkpoints: int = 61,
) -> dict:
    """Fit the decay of ``|E[f | t < T] - int f dnu1|`` and compare with ``lambda2 - lambda1``."""
    f = observable(obs, model.d)
    target = qsd_moment(res, f)
    ens = simulate_paths(model, init, dt=dt, t_final=t_final, n_particles=n_particles, seed=seed,
                         checkpoints=checkpoints)
    report = {"observable": obs, "qsd_target": target, "spectral_gap": res.gap, "rel_tol": rel_tol}
    try:
        fit = convergence_rate_fit(ens, f, target, window)
    except NoiseFloorError as exc:
        report.update({"outcome": "noise_floor", "pass": True, "message": str(exc),
                       "times": np.asarray(exc.times).tolist(),
                       "distances": np.asarray(exc.distances).tolist(),
                       "half_widths": np.asarray(exc.half_widths).tolist()})
        return report
    rel = abs(fit.rate - res.gap) / res.gap
    report.update({"outcome": "rate", "fit": fit.to_dict(), "relative_error": rel, "pass": bool(rel <= rel_tol)})
    return report
