"""Monte Carlo simulation of absorbed paths and conditioned estimators.

Particles are split into fixed-size blocks. Block ``k`` draws from
``Philox(SeedSequence(seed).spawn(...)[k])``, so an ensemble is a pure
function of ``(seed, n_particles, block_size)`` regardless of how many worker
threads process the blocks.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NoiseFloorError, SimulationError
from .models import DiffusionModel
from .transform import TransformedOperator, build_transform

Array = np.ndarray

ABS_EPS = 1e-10
DEFAULT_DT = 1e-3
DEFAULT_BLOCK = 8192
SCHEMES = ("euler-full-truncation", "transformed-X")


@dataclass
class EnsembleResult:
    """Absorption times plus survivor snapshots at checkpoint times.

    ``absorption_times`` holds ``inf`` for particles alive at ``t_final``.
    ``snapshots[k]`` are the states of the particles ``snapshot_ids[k]`` alive
    at ``checkpoint_times[k]``.
    """

    n_particles: int
    dt: float
    scheme: str
    seed: int
    t_final: float
    absorption_times: Array
    checkpoint_times: Array
    snapshots: list
    snapshot_ids: list
    metadata: dict = field(default_factory=dict)

    def survivors(self) -> Array:
        return np.array([s.shape[0] for s in self.snapshots])

    def survival(self, times: Array | None = None) -> Array:
        """Fraction of particles not absorbed by each time."""
        if times is None:
            return self.survivors() / self.n_particles
        at = np.sort(self.absorption_times)
        times = np.asarray(times, dtype=float)
        return 1.0 - np.searchsorted(at, times, side="right") / self.n_particles

    def checkpoint_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.checkpoint_times - t)))
        if not math.isclose(self.checkpoint_times[k], t, rel_tol=1e-9, abs_tol=1e-12):
            raise SimulationError(f"no checkpoint at t={t:g}")
        return k


@dataclass(frozen=True)
class RateFit:
    rate: float
    window: tuple[float, float]
    stderr: float
    r_squared: float
    n_points: int = 0

    def to_dict(self) -> dict:
        return {"rate": self.rate, "window": list(self.window), "stderr": self.stderr,
                "r_squared": self.r_squared, "n_points": self.n_points}


# ---------------------------------------------------------------------------
# Path simulation
# ---------------------------------------------------------------------------


def _initial_states(init, d: int, n: int, rng: np.random.Generator) -> Array:
    if callable(init):
        z = np.asarray(init(rng, n), dtype=float).reshape(n, d)
    else:
        arr = np.asarray(init, dtype=float)
        if arr.ndim <= 1:
            z = np.broadcast_to(arr.reshape(1, d), (n, d)).copy()
        else:
            if arr.shape[0] != n or arr.shape[1] != d:
                raise SimulationError("explicit initial states must have shape (n_particles, d)")
            z = arr.copy()
    if not np.all(z > 0) or not np.all(np.isfinite(z)):
        raise SimulationError("initial states must lie strictly inside the orthant")
    return z


def _block_euler(model, z, times_steps, n_steps, dt, rng, abs_eps, offset, fv_events=None):
    n, d = z.shape
    ids = np.arange(n)
    t_abs = np.full(n, np.inf)
    snaps, snap_ids = [], []
    sq = math.sqrt(dt)
    ck = 0
    for step in range(n_steps + 1):
        while ck < len(times_steps) and times_steps[ck] == step:
            snaps.append(z.copy())
            snap_ids.append(ids + offset)
            ck += 1
        if step == n_steps or z.shape[0] == 0:
            continue
        zp = np.maximum(z, 0.0)
        noise = rng.standard_normal(z.shape)
        z = z + model.drift(zp) * dt + np.sqrt(np.maximum(model.diffusion(zp), 0.0)) * noise * sq
        if not np.all(np.isfinite(z)):
            bad = int(ids[np.flatnonzero(~np.all(np.isfinite(z), axis=1))[0]]) + offset
            raise SimulationError(f"non-finite state for particle {bad} at step {step + 1}")
        dead = np.any(z <= abs_eps, axis=1)
        if np.any(dead):
            if fv_events is not None:
                # absorption times are not tracked per particle in this mode
                count = int(dead.sum())
                alive_idx = np.flatnonzero(~dead)
                if alive_idx.size == 0:
                    raise SimulationError("Fleming-Viot ensemble went extinct")
                z[dead] = z[rng.choice(alive_idx, size=count)]
                fv_events.append(((step + 1) * dt, count))
            else:
                t_abs[ids[dead]] = (step + 1) * dt
                z = z[~dead]
                ids = ids[~dead]
    return t_abs, snaps, snap_ids


def _block_transformed(top: TransformedOperator, z, times_steps, n_steps, dt, rng, abs_eps, offset):
    n, d = z.shape
    ids = np.arange(n)
    t_abs = np.full(n, np.inf)
    x = top.xi(z)
    x_eps = top.xi(np.full((1, d), abs_eps)).ravel()
    x_max = top.x_extent
    snaps, snap_ids = [], []
    ck = 0
    substeps = 0
    for step in range(n_steps + 1):
        while ck < len(times_steps) and times_steps[ck] == step:
            snaps.append(top.xi_inverse(x) if x.shape[0] else np.empty((0, d)))
            snap_ids.append(ids + offset)
            ck += 1
        if step == n_steps or x.shape[0] == 0:
            continue
        rem = np.full(x.shape[0], dt)
        live = np.ones(x.shape[0], dtype=bool)
        while True:
            act = np.flatnonzero(live & (rem > 0))
            if act.size == 0:
                break
            xa = x[act]
            drift = top.x_drift(xa)
            cap = np.min(xa / (2 * np.maximum(np.abs(drift), 1e-300)), axis=1)
            h = np.minimum(rem[act], cap)
            h = np.maximum(h, 1e-14)
            xa = xa + drift * h[:, None] + rng.standard_normal(xa.shape) * np.sqrt(h)[:, None]
            rem[act] -= h
            substeps += act.size
            hit = np.any(xa <= x_eps, axis=1)
            if np.any(xa > x_max):
                raise SimulationError("transformed path left the xi table extent; raise z_max")
            xa[hit] = np.maximum(xa[hit], x_eps)
            x[act] = xa
            live[act[hit]] = False
        dead = ~live
        if np.any(dead):
            t_abs[ids[dead]] = (step + 1) * dt
            x = x[live]
            ids = ids[live]
    return t_abs, snaps, snap_ids, substeps


def simulate_paths(
    model: DiffusionModel,
    init,
    dt: float = DEFAULT_DT,
    t_final: float = 10.0,
    n_particles: int = 10_000,
    seed: int = 0,
    scheme: str = "euler-full-truncation",
    checkpoints: Sequence[float] | int = 101,
    block_size: int = DEFAULT_BLOCK,
    threads: int = 1,
    transform: TransformedOperator | None = None,
    fleming_viot: bool = False,
    abs_eps: float = ABS_EPS,
) -> EnsembleResult:
    """Simulate ``n_particles`` absorbed paths up to ``t_final``.

    ``init`` is a point, an ``(n_particles, d)`` array, or a callable
    ``(rng, n) -> (n, d)`` evaluated once with a dedicated stream.
    ``checkpoints`` is either a count of evenly spaced times on
    ``[0, t_final]`` or an explicit list; times are rounded to the step grid.
    With ``fleming_viot=True`` every absorbed particle is replaced by a copy of
    a uniformly chosen survivor (single block, biased at finite ``n``).
    """
    if scheme not in SCHEMES:
        raise SimulationError(f"scheme must be one of {SCHEMES}")
    if not 0 < dt <= 1e-2:
        raise SimulationError("dt must lie in (0, 1e-2]")
    if t_final < 0:
        raise SimulationError("t_final must be non-negative")
    if n_particles < 1:
        raise SimulationError("n_particles must be positive")
    n_steps = int(round(t_final / dt))
    if isinstance(checkpoints, (int, np.integer)):
        ck_steps = np.unique(np.round(np.linspace(0, n_steps, int(checkpoints))).astype(int))
    else:
        ck_steps = np.unique(np.round(np.asarray(checkpoints, dtype=float) / dt).astype(int))
        if np.any(ck_steps < 0) or np.any(ck_steps > n_steps):
            raise SimulationError("checkpoints must lie in [0, t_final]")
    ss = np.random.SeedSequence(seed)
    init_ss, block_root = ss.spawn(2)
    z0 = _initial_states(init, model.d, n_particles, np.random.Generator(np.random.Philox(init_ss)))
    if fleming_viot:
        if scheme != "euler-full-truncation":
            raise SimulationError("Fleming-Viot mode uses the full-truncation scheme")
        block_size = n_particles
    n_blocks = math.ceil(n_particles / block_size)
    streams = block_root.spawn(n_blocks)
    top = None
    if scheme == "transformed-X":
        top = transform if transform is not None else build_transform(model)
    fv_events: list | None = [] if fleming_viot else None

    def run(k: int):
        lo, hi = k * block_size, min(n_particles, (k + 1) * block_size)
        rng = np.random.Generator(np.random.Philox(streams[k]))
        if top is None:
            return _block_euler(model, z0[lo:hi].copy(), ck_steps, n_steps, dt, rng, abs_eps, lo,
                                fv_events) + (0,)
        return _block_transformed(top, z0[lo:hi].copy(), ck_steps, n_steps, dt, rng, abs_eps, lo)

    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(n_blocks)))
    else:
        parts = [run(k) for k in range(n_blocks)]
    t_abs = np.concatenate([p[0] for p in parts])
    snaps = [np.concatenate([p[1][c] for p in parts]) for c in range(len(ck_steps))]
    sids = [np.concatenate([p[2][c] for p in parts]) for c in range(len(ck_steps))]
    meta = {
        "block_size": block_size,
        "n_blocks": n_blocks,
        "abs_eps": abs_eps,
        "fleming_viot": bool(fleming_viot),
        "substeps": int(sum(p[3] for p in parts)),
    }
    if fleming_viot:
        meta["note"] = "Fleming-Viot resampling: conditioned estimates biased at finite n"
        meta["fv_events"] = fv_events
    return EnsembleResult(
        n_particles=n_particles, dt=dt, scheme=scheme, seed=seed, t_final=n_steps * dt,
        absorption_times=t_abs, checkpoint_times=ck_steps * dt, snapshots=snaps,
        snapshot_ids=sids, metadata=meta,
    )


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def conditioned_expectation(ens: EnsembleResult, f: Callable[[Array], Array], t: float) -> tuple[float, float]:
    """Mean of ``f`` over survivors at checkpoint ``t`` and its 95% half-width."""
    k = ens.checkpoint_index(t)
    z = ens.snapshots[k]
    n = z.shape[0]
    if n == 0:
        raise SimulationError(f"no survivors at t={t:g}")
    if n < 30:
        warnings.warn(f"only {n} survivors at t={t:g}; the interval is unreliable", RuntimeWarning, stacklevel=2)
    vals = np.asarray(f(z), dtype=float).reshape(n)
    mean = float(vals.mean())
    half = 1.96 * float(vals.std(ddof=1)) / math.sqrt(n) if n > 1 else math.inf
    return mean, half


def conditioned_series(ens: EnsembleResult, f: Callable[[Array], Array]) -> tuple[Array, Array, Array]:
    """Conditioned means and half-widths at every checkpoint with survivors."""
    ts, ms, hs = [], [], []
    for t, z in zip(ens.checkpoint_times, ens.snapshots):
        if z.shape[0] < 2:
            continue
        vals = np.asarray(f(z), dtype=float).reshape(-1)
        ts.append(t)
        ms.append(vals.mean())
        hs.append(1.96 * vals.std(ddof=1) / math.sqrt(vals.size))
    return np.array(ts), np.array(ms), np.array(hs)


def _ols(t: Array, y: Array) -> tuple[float, float, float]:
    A = np.column_stack([t, np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    fit = A @ coef
    resid = y - fit
    n = t.size
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    sxx = float(((t - t.mean()) ** 2).sum())
    stderr = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 and sxx > 0 else math.inf
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), stderr, r2


def default_survival_window(ens: EnsembleResult, min_survivors: int = 1000) -> tuple[float, float]:
    s = ens.survival()
    n = ens.survivors()
    half = np.flatnonzero(s <= 0.5)
    t_min = ens.checkpoint_times[half[0]] if half.size else ens.checkpoint_times[0]
    ok = np.flatnonzero(n >= min_survivors)
    t_max = ens.checkpoint_times[ok[-1]] if ok.size else ens.checkpoint_times[0]
    return float(t_min), float(t_max)


def survival_rate_fit(ens: EnsembleResult, window: tuple[float, float] | None = None) -> RateFit:
    """Least-squares slope of log survival against time; ``rate = -slope``."""
    if window is None:
        window = default_survival_window(ens)
    t0, t1 = window
    t = ens.checkpoint_times
    sel = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    if not t1 > t0 or sel.sum() == 0:
        raise SimulationError(f"empty fit window {window}")
    if sel.sum() < 5:
        raise SimulationError(f"only {int(sel.sum())} checkpoints in window {window}; need 5")
    s = ens.survival()[sel]
    if np.any(s <= 0):
        raise SimulationError("survival reaches zero inside the fit window")
    slope, se, r2 = _ols(t[sel], np.log(s))
    return RateFit(-slope, (float(t0), float(t1)), se, r2, int(sel.sum()))


def convergence_rate_fit(
    ens: EnsembleResult,
    f: Callable[[Array], Array],
    qsd_target: float,
    window: tuple[float, float] | None = None,
    min_points: int = 4,
) -> RateFit:
    """Decay rate of ``|E[f(Z_t) | t < T] - qsd_target|``.

    Only the leading run of checkpoints whose distance exceeds twice the 95%
    half-width enters the fit; if fewer than ``min_points`` qualify a
    :class:`NoiseFloorError` carrying the series is raised.
    """
    t, m, h = conditioned_series(ens, f)
    if window is not None:
        sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
        t, m, h = t[sel], m[sel], h[sel]
    dist = np.abs(m - qsd_target)
    resolved = dist > 2 * h
    k = 0
    while k < resolved.size and resolved[k]:
        k += 1
    if k < min_points:
        raise NoiseFloorError(
            f"distance resolved at only {k} leading checkpoints; signal at the noise floor",
            times=t, distances=dist, half_widths=h,
        )
    slope, se, r2 = _ols(t[:k], np.log(dist[:k]))
    return RateFit(-slope, (float(t[0]), float(t[k - 1])), se, r2, k)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def _entry_times(model, z0, R, dt, horizon, rng, abs_eps):
    """Per-path first time inside the open box ``(0, R)^d`` or absorbed; ``inf`` if neither."""
    z = z0.copy()
    n = z.shape[0]
    out = np.full(n, np.inf)
    idx = np.arange(n)
    inside = np.all(z < R, axis=1)
    out[inside] = 0.0
    z, idx = z[~inside], idx[~inside]
    sq = math.sqrt(dt)
    for step in range(int(round(horizon / dt))):
        if z.shape[0] == 0:
            break
        zp = np.maximum(z, 0.0)
        z = z + model.drift(zp) * dt + np.sqrt(np.maximum(model.diffusion(zp), 0.0)) * rng.standard_normal(z.shape) * sq
        done = np.all(z < R, axis=1) | np.any(z <= abs_eps, axis=1)
        out[idx[done]] = (step + 1) * dt
        z, idx = z[~done], idx[~done]
    return out


def coming_down_diagnostic(
    model: DiffusionModel,
    R: float,
    lam: float,
    starts: Sequence[Sequence[float]],
    n: int = 2000,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    horizon: float = 50.0,
    abs_eps: float = ABS_EPS,
) -> dict:
    """Estimate ``E[exp(lam S_R)]`` per start, ``S_R`` the box-entry or absorption time.

    A start already inside the box gives ``S_R = 0`` and the estimate 1; it is
    flagged rather than rejected.
    """
    if not lam > 0:
        raise SimulationError("lam must be positive")
    streams = np.random.SeedSequence(seed).spawn(len(starts))
    rows = []
    for k, s in enumerate(starts):
        s = np.asarray(s, dtype=float).reshape(model.d)
        if np.any(s <= 0):
            raise SimulationError("starts must lie strictly inside the orthant")
        inside = bool(np.all(s < R))
        if inside:
            rows.append({"start": s.tolist(), "inside_box": True, "estimate": 1.0, "half_width": 0.0,
                         "finished_fraction": 1.0})
            continue
        rng = np.random.Generator(np.random.Philox(streams[k]))
        S = _entry_times(model, np.tile(s, (n, 1)), R, dt, horizon, rng, abs_eps)
        fin = np.isfinite(S)
        vals = np.exp(lam * np.where(fin, S, horizon))
        rows.append({
            "start": s.tolist(),
            "inside_box": False,
            "estimate": float(vals.mean()),
            "half_width": float(1.96 * vals.std(ddof=1) / math.sqrt(n)),
            "mean_entry_time": float(np.mean(S[fin])) if fin.any() else math.inf,
            "finished_fraction": float(fin.mean()),
        })
    est = np.array([r["estimate"] for r in rows])
    outside = [r for r in rows if not r["inside_box"]]
    oe = np.array([r["estimate"] for r in outside]) if outside else est
    return {
        "R": R,
        "lam": lam,
        "rows": rows,
        "max_over_min": float(oe.max() / oe.min()),
        "bounded_within_2x": bool(oe.max() / oe.min() <= 2.0),
        "increasing": bool(np.all(np.diff(oe) > 0)),
        "horizon_ok": bool(all(r["finished_fraction"] >= 0.99 for r in rows)),
    }


def absorption_check(
    model: DiffusionModel,
    starts: Sequence[Sequence[float]],
    horizon: float,
    n: int = 2000,
    dt: float = DEFAULT_DT,
    seed: int = 0,
) -> dict:
    """Fraction of paths absorbed by ``horizon`` for each start."""
    rows = []
    for k, s in enumerate(starts):
        if horizon <= 0:
            frac = 0.0
        else:
            ens = simulate_paths(model, s, dt=dt, t_final=horizon, n_particles=n, seed=seed + k, checkpoints=2)
            frac = float(np.mean(np.isfinite(ens.absorption_times)))
        rows.append({"start": list(map(float, np.atleast_1d(s))), "absorbed_fraction": frac, "flag": frac < 0.99})
    return {"horizon": horizon, "rows": rows, "all_absorbed": not any(r["flag"] for r in rows)}


def grid_density_sampler(z_axes: Sequence[Array], density: Array) -> Callable[[np.random.Generator, int], Array]:
    """Sampler for a nodal density on the interior of a tensor grid.

    A node is drawn with probability proportional to density times its
    trapezoid weight, then the point is spread uniformly over the node's
    dual cell.
    """
    interior = [np.asarray(a, dtype=float)[1:-1] for a in z_axes]
    lows, highs, wts = [], [], []
    for a in z_axes:
        a = np.asarray(a, dtype=float)
        mid = 0.5 * (a[1:] + a[:-1])
        lows.append(mid[:-1])
        highs.append(mid[1:])
        wts.append(mid[1:] - mid[:-1])
    w = np.ones(1)
    for wi in wts:
        w = np.multiply.outer(w, wi).ravel()
    p = np.maximum(np.asarray(density, dtype=float), 0.0) * w
    p = p / p.sum()
    shape = tuple(x.size for x in interior)

    def sample(rng: np.random.Generator, n: int) -> Array:
        flat = rng.choice(p.size, size=n, p=p)
        idx = np.unravel_index(flat, shape)
        u = rng.random((n, len(shape)))
        cols = [lows[i][idx[i]] + u[:, i] * (highs[i][idx[i]] - lows[i][idx[i]]) for i in range(len(shape))]
        return np.column_stack(cols)

    return sample
