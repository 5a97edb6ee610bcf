"""Absorbed diffusion models on the closed orthant and sampled assumption checks.

A model is the SDE

    dZ^i = b_i(Z) dt + sqrt(a_i(Z^i)) dW^i,   i = 1..d,

absorbed on the union of the coordinate facets. The checkers in this module
sample the standing hypotheses on finite point sets; limit statements are
certified by trend tests and are labelled ``HEURISTIC`` in the reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from .errors import ModelError

Array = np.ndarray

FACET_TOL = 1e-12
FD_REL_STEP = 1e-6
F_RECOVERY_FLOOR = 1e-6
STRICT_EPS = 1e-12
TREND_TOL = 0.05
INTEGRAL_EXPONENT_TOL = 0.1
ENVELOPE_SAFETY = 0.9

ZOO_IDS = (
    "feller_linear",
    "lotka_volterra",
    "holling",
    "regular_holling",
    "beddington_deangelis",
    "crowley_martin",
)


# ---------------------------------------------------------------------------
# Model types
# ---------------------------------------------------------------------------


def _fd_first(fun: Callable[[Array], Array], s: Array) -> Array:
    h = FD_REL_STEP * np.maximum(1.0, np.abs(s))
    central = s >= h
    out = np.empty_like(s)
    sc = s[central]
    hc = h[central]
    out[central] = (fun(sc + hc) - fun(sc - hc)) / (2 * hc)
    so = s[~central]
    ho = h[~central]
    # one-sided second-order stencil; the diffusion may be undefined below 0
    out[~central] = (-3 * fun(so) + 4 * fun(so + ho) - fun(so + 2 * ho)) / (2 * ho)
    return out


@dataclass(frozen=True)
class CoordinateDiffusion:
    """Scalar diffusion coefficient ``a_i`` with optional analytic derivatives.

    Missing derivatives fall back to central differences with step
    ``1e-6 * max(1, |s|)`` (one-sided next to 0).
    """

    a: Callable[[Array], Array]
    da: Callable[[Array], Array] | None = None
    d2a: Callable[[Array], Array] | None = None
    label: str = "custom"

    def value(self, s: Array) -> Array:
        return np.asarray(self.a(np.asarray(s, dtype=float)), dtype=float)

    def first(self, s: Array) -> Array:
        s = np.asarray(s, dtype=float)
        if self.da is not None:
            return np.broadcast_to(np.asarray(self.da(s), dtype=float), s.shape).copy()
        return _fd_first(self.value, np.atleast_1d(s)).reshape(s.shape)

    def second(self, s: Array) -> Array:
        s = np.asarray(s, dtype=float)
        if self.d2a is not None:
            return np.broadcast_to(np.asarray(self.d2a(s), dtype=float), s.shape).copy()
        return _fd_first(self.first, np.atleast_1d(s)).reshape(s.shape)


def linear_diffusion(gamma: float) -> CoordinateDiffusion:
    """``a(s) = gamma * s`` (demographic noise)."""
    g = float(gamma)
    return CoordinateDiffusion(
        a=lambda s: g * s,
        da=lambda s: np.full_like(s, g, dtype=float),
        d2a=lambda s: np.zeros_like(s, dtype=float),
        label=f"linear({g:g})",
    )


@dataclass(frozen=True)
class DiffusionModel:
    """Orthant SDE with diagonal, coordinate-separable noise.

    Parameters
    ----------
    d : int
        Dimension.
    a : tuple of CoordinateDiffusion
        One diffusion coefficient per coordinate.
    b : callable
        Drift field, maps ``(n, d)`` arrays to ``(n, d)`` arrays.
    db_diag : callable, optional
        Diagonal of the drift Jacobian, ``(n, d) -> (n, d)``. Central
        differences are used when absent.
    f, df_diag : callable, optional
        Per-capita growth rates with ``b_i = z_i f_i`` and the diagonal of
        their Jacobian. Zoo models provide both.
    zoo_id : str, optional
    params : mapping
        Named parameters, kept for reporting and corollary checks.
    """

    d: int
    a: tuple[CoordinateDiffusion, ...]
    b: Callable[[Array], Array]
    db_diag: Callable[[Array], Array] | None = None
    f: Callable[[Array], Array] | None = None
    df_diag: Callable[[Array], Array] | None = None
    zoo_id: str | None = None
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ModelError("dimension must be >= 1")
        if len(self.a) != self.d:
            raise ModelError(f"expected {self.d} diffusion coefficients, got {len(self.a)}")

    def _pts(self, z) -> Array:
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(1, -1) if self.d > 1 or z.size == 1 else z.reshape(-1, 1)
        if z.shape[-1] != self.d:
            raise ModelError(f"points must have {self.d} coordinates, got shape {z.shape}")
        return z

    def drift(self, z) -> Array:
        return np.asarray(self.b(self._pts(z)), dtype=float)

    def drift_diag_jacobian(self, z) -> Array:
        z = self._pts(z)
        if self.db_diag is not None:
            return np.asarray(self.db_diag(z), dtype=float)
        if self.f is not None and self.df_diag is not None:
            return self.f(z) + z * self.df_diag(z)
        out = np.empty_like(z)
        for i in range(self.d):
            h = FD_REL_STEP * np.maximum(1.0, np.abs(z[:, i]))
            zp = z.copy()
            zm = z.copy()
            zp[:, i] += h
            zm[:, i] -= h
            out[:, i] = (self.b(zp)[:, i] - self.b(zm)[:, i]) / (2 * h)
        return out

    def diffusion(self, z) -> Array:
        z = self._pts(z)
        return np.column_stack([c.value(z[:, i]) for i, c in enumerate(self.a)])

    def diffusion_d1(self, z) -> Array:
        z = self._pts(z)
        return np.column_stack([c.first(z[:, i]) for i, c in enumerate(self.a)])

    def diffusion_d2(self, z) -> Array:
        z = self._pts(z)
        return np.column_stack([c.second(z[:, i]) for i, c in enumerate(self.a)])

    def growth(self, z) -> Array:
        """Per-capita rates ``f_i``; recovered as ``b_i / z_i`` when not given."""
        z = self._pts(z)
        if self.f is not None:
            return np.asarray(self.f(z), dtype=float)
        if np.any(z < F_RECOVERY_FLOOR):
            raise ModelError(
                f"f_i = b_i/z_i is not evaluable below z_i = {F_RECOVERY_FLOOR:g}; "
                "supply f explicitly or move samples off the facets"
            )
        return self.drift(z) / z

    def growth_diag_jacobian(self, z) -> Array:
        z = self._pts(z)
        if self.df_diag is not None:
            return np.asarray(self.df_diag(z), dtype=float)
        # d/dz_i (b_i/z_i) = (db_i - f_i) / z_i
        return (self.drift_diag_jacobian(z) - self.growth(z)) / z


class LyapunovSpec(NamedTuple):
    """Lyapunov function ``V`` with derivatives, minorant and exponents.

    ``grad`` and ``hess_diag`` map ``(n, d)`` arrays to ``(n, d)`` arrays.
    """

    V: Callable[[Array], Array]
    grad: Callable[[Array], Array]
    hess_diag: Callable[[Array], Array] | None
    tildeV: Callable[[Array], Array] | None = None
    gamma: float | None = None
    m: float | None = None


@dataclass(frozen=True)
class PolynomialEnvelope:
    """Constants of the polynomial growth envelope for ``f_i``.

    The strict threshold on ``delta`` when ``n == m`` is a compatibility
    condition and is reported by :func:`check_assumption_A`, not enforced here.
    """

    m: float
    n: float
    C1: float
    C2: float
    C3: float
    C4: float
    R: float
    delta: float = 0.0

    def __post_init__(self):
        if self.m < 0:
            raise ModelError("envelope degree m must be >= 0")
        if self.n < 0:
            raise ModelError("envelope degree n must be >= 0")
        for name in ("C1", "C2", "C3", "C4", "R"):
            if not getattr(self, name) > 0:
                raise ModelError(f"envelope constant {name} must be positive")
        if self.delta < 0:
            raise ModelError("envelope delta must be >= 0")


class Witness(NamedTuple):
    condition: str
    point: tuple | None
    margin: float


@dataclass(frozen=True)
class CheckReport:
    """Outcome of a sampled check; passes iff every margin is non-negative."""

    witnesses: tuple[Witness, ...] = ()
    notes: str = ""

    @property
    def passed(self) -> bool:
        return all(w.margin >= 0 for w in self.witnesses)

    def failures(self) -> list[Witness]:
        return [w for w in self.witnesses if not w.margin >= 0]

    def witness(self, condition: str) -> Witness:
        for w in self.witnesses:
            if w.condition == condition:
                return w
        raise KeyError(condition)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "witnesses": [
                {
                    "condition": w.condition,
                    "point": None if w.point is None else [float(v) for v in w.point],
                    "margin": float(w.margin),
                }
                for w in self.witnesses
            ],
            "notes": self.notes,
        }


# ---------------------------------------------------------------------------
# Model zoo
# ---------------------------------------------------------------------------


def _vec(params: Mapping, key: str, d: int | None = None) -> Array:
    if key not in params:
        raise ModelError(f"missing parameter {key!r}")
    v = np.atleast_1d(np.asarray(params[key], dtype=float))
    if d is not None:
        if v.size == 1 and d > 1:
            v = np.full(d, v[0])
        if v.size != d:
            raise ModelError(f"parameter {key!r} must have length {d}")
    return v


def _infer_dim(params: Mapping) -> int:
    if "d" in params:
        return int(params["d"])
    if "gamma" not in params:
        raise ModelError("missing parameter 'gamma'")
    return int(np.atleast_1d(params["gamma"]).size)


def _holling_h(s: Array, k: int) -> Array:
    sk = s**k
    return sk / (1 + sk)


def _holling_dh(s: Array, k: int) -> Array:
    return k * s ** (k - 1) / (1 + s**k) ** 2


def zoo_instantiate(zoo_id: str, params: Mapping[str, Any]) -> DiffusionModel:
    """Build a model ``dZ^i = Z^i f_i(Z) dt + sqrt(gamma_i Z^i) dW^i`` from the zoo.

    Families: ``feller_linear`` (``f_i = r_i``), ``lotka_volterra``,
    ``holling`` (type II/III, ``k`` in {1, 2}), ``regular_holling``,
    ``beddington_deangelis`` and ``crowley_martin`` (``d = 2`` only).
    """
    if zoo_id not in ZOO_IDS:
        raise ModelError(f"unknown zoo_id {zoo_id!r}; expected one of {ZOO_IDS}")
    params = dict(params)
    d = 2 if zoo_id == "crowley_martin" and "gamma" not in params and "d" not in params else _infer_dim(params)
    if zoo_id == "crowley_martin" and d != 2:
        raise ModelError("crowley_martin is defined for d = 2 only")
    gamma = _vec(params, "gamma", d)
    if np.any(gamma <= 0):
        raise ModelError("all gamma_i must be positive")

    if zoo_id == "feller_linear":
        r = _vec(params, "r", d)

        def f(z):
            return np.broadcast_to(r, z.shape).copy()

        def df(z):
            return np.zeros_like(z)

    elif zoo_id == "lotka_volterra":
        r = _vec(params, "r", d)
        c = np.asarray(params.get("c"), dtype=float).reshape(d, d) if "c" in params else None
        if c is None:
            raise ModelError("missing parameter 'c'")
        if np.any(np.diag(c) <= 0):
            raise ModelError("lotka_volterra requires c_ii > 0")

        def f(z):
            return r - z @ c.T

        def df(z):
            return np.broadcast_to(-np.diag(c), z.shape).copy()

    elif zoo_id in ("holling", "regular_holling"):
        r = _vec(params, "r", d)
        if "c" not in params:
            raise ModelError("missing parameter 'c'")
        c = np.asarray(params["c"], dtype=float).reshape(d, d)
        k = int(params.get("k", 1))
        if k not in (1, 2):
            raise ModelError("Holling exponent k must be 1 or 2")
        if np.any(np.diag(c) <= 0):
            raise ModelError(f"{zoo_id} requires c_ii > 0")
        cd = np.diag(c)
        c_off = c - np.diag(cd)
        if zoo_id == "holling":

            def f(z):
                return r - _holling_h(z, k) @ c.T

            def df(z):
                return -cd * _holling_dh(z, k)

        else:

            def f(z):
                return r - cd * z - _holling_h(z, k) @ c_off.T

            def df(z):
                return np.broadcast_to(-cd, z.shape).copy()

    elif zoo_id == "beddington_deangelis":
        r = _vec(params, "r", d)
        if "c" not in params:
            raise ModelError("missing parameter 'c'")
        c = np.asarray(params["c"], dtype=float).reshape(d, d)
        if np.any(np.diag(c) <= 0):
            raise ModelError("beddington_deangelis requires c_ii > 0")
        cd = np.diag(c)
        c_off = c - np.diag(cd)

        def f(z):
            denom = 1 + z.sum(axis=1, keepdims=True)
            return r - cd * z - (z @ c_off.T) / denom

        def df(z):
            denom = 1 + z.sum(axis=1, keepdims=True)
            return -cd + (z @ c_off.T) / denom**2

    else:  # crowley_martin
        r = _vec(params, "r", 2)
        for key in ("c11", "c22", "beta", "alpha"):
            if key not in params:
                raise ModelError(f"missing parameter {key!r}")
        c11, c22 = float(params["c11"]), float(params["c22"])
        beta, alpha = float(params["beta"]), float(params["alpha"])
        alpha2 = float(params.get("alpha2", 0.0))
        alpha3 = float(params.get("alpha3", 0.0))
        if c11 <= 0 or c22 <= 0:
            raise ModelError("crowley_martin requires c11, c22 > 0")
        if beta <= 0:
            raise ModelError("crowley_martin requires beta > 0")
        if min(alpha, alpha2, alpha3) < 0:
            raise ModelError("crowley_martin interaction constants must be non-negative")

        def _den(z):
            return beta + alpha * z[:, 0] + alpha2 * z[:, 1] + alpha3 * z[:, 0] * z[:, 1]

        def f(z):
            D = _den(z)
            z1, z2 = z[:, 0], z[:, 1]
            return np.column_stack(
                [r[0] - c11 * z1 - z2 * z1 / D, -r[1] - c22 * z2 + z1 * z1 / D]
            )

        def df(z):
            D = _den(z)
            z1, z2 = z[:, 0], z[:, 1]
            return np.column_stack(
                [
                    -c11 - z2 * (beta + alpha2 * z2) / D**2,
                    -c22 - z1 * z1 * (alpha2 + alpha3 * z1) / D**2,
                ]
            )

    def b(z):
        return z * f(z)

    def db(z):
        return f(z) + z * df(z)

    return DiffusionModel(
        d=d,
        a=tuple(linear_diffusion(g) for g in gamma),
        b=b,
        db_diag=db,
        f=f,
        df_diag=df,
        zoo_id=zoo_id,
        params=params,
    )


def zoo_envelope(model: DiffusionModel) -> PolynomialEnvelope:
    """Envelope constants for a zoo model, following the corollary proofs.

    ``C3`` carries a 0.9 safety factor so the upper bound holds beyond a
    finite ``R``; the corollary conditions themselves are evaluated sharply in
    :func:`check_assumption_A`.
    """
    if model.zoo_id is None:
        raise ModelError("zoo_envelope needs a zoo model")
    p = model.params
    d = model.d
    theta = ENVELOPE_SAFETY
    tiny = 1e-12
    zid = model.zoo_id
    if zid == "feller_linear":
        r = _vec(p, "r", d)
        C3 = theta * float(np.min(-r)) if np.all(r < 0) else tiny
        return PolynomialEnvelope(m=0, n=0, C1=max(float(np.max(np.abs(r))), 1.0),
                                  C2=max(float(np.max(r)), 0.0) + 1.0, C3=C3, C4=1.0, R=1.0)
    r = _vec(p, "r", d) if zid != "crowley_martin" else _vec(p, "r", 2)
    rpos = float(np.max(np.maximum(r, 0.0)))
    if zid == "crowley_martin":
        c11, c22 = float(p["c11"]), float(p["c22"])
        alpha = float(p["alpha"])
        cmin = min(c11, c22)
        delta = 1.0 / alpha if alpha > 0 else 1.0 / tiny
        C1 = max(float(np.max(np.abs(r))), c11, c22, 1.0 / float(p["beta"]))
        return PolynomialEnvelope(m=1, n=1, C1=C1, C2=rpos + 1.0, C3=theta * cmin,
                                  C4=max(c11, c22) + 1.0 / float(p["beta"]),
                                  R=max(1.0, 10 * rpos / cmin), delta=delta)
    c = np.asarray(p["c"], dtype=float).reshape(d, d)
    cd = np.diag(c)
    off = c[~np.eye(d, dtype=bool)]
    delta = max(0.0, -float(off.min())) if off.size else 0.0
    abs_row = np.abs(c).sum(axis=1)
    if zid == "lotka_volterra":
        return PolynomialEnvelope(m=1, n=1, C1=max(float(np.max(np.abs(r))), float(np.abs(c).max())),
                                  C2=rpos + 1.0, C3=theta * float(cd.min()), C4=float(cd.max()),
                                  R=max(1.0, 10 * rpos / float(cd.min())), delta=delta)
    if zid == "holling":
        k = int(p.get("k", 1))
        gap = float(np.min(cd - r))
        C3 = theta * gap if gap > 0 else tiny
        if gap > 0:
            R = max(1.0, (float(np.max(cd)) / ((1 - theta) * gap) - 1.0) ** (1.0 / k))
        else:
            R = 1.0
        return PolynomialEnvelope(m=0, n=0, C1=float(np.max(np.abs(r) + abs_row)),
                                  C2=rpos + 1.0, C3=C3, C4=float(np.max(cd)) * k, R=R, delta=delta)
    # regular_holling and beddington_deangelis: intraspecific term is linear
    return PolynomialEnvelope(m=1, n=0,
                              C1=max(float(np.max(np.abs(r) + abs_row - cd)), float(cd.max()), 1.0),
                              C2=rpos + 1.0, C3=theta * float(cd.min()),
                              C4=float(cd.max()) + float(np.abs(off).sum()) if off.size else float(cd.max()),
                              R=max(1.0, 10 * rpos / ((1 - theta) * float(cd.min()))), delta=delta)


def default_lyapunov(env: PolynomialEnvelope, d: int) -> LyapunovSpec:
    """``V(z) = |z|^(m+1)`` with minorant ``d^(-(m+1)/2) s^(m+1)``.

    ``gamma = m / (m + 1)`` is attached only for ``m > 0``.
    """
    m = float(env.m)
    p = m + 1.0
    cmin = float(d) ** (-p / 2.0)

    def V(z):
        return np.linalg.norm(np.atleast_2d(z), axis=1) ** p

    def grad(z):
        z = np.atleast_2d(z)
        r = np.linalg.norm(z, axis=1, keepdims=True)
        return p * r ** (m - 1) * z

    def hess_diag(z):
        z = np.atleast_2d(z)
        r = np.linalg.norm(z, axis=1, keepdims=True)
        return p * r ** (m - 1) + p * (m - 1) * r ** (m - 3) * z**2

    def tildeV(s):
        return cmin * np.asarray(s, dtype=float) ** p

    return LyapunovSpec(V=V, grad=grad, hess_diag=hess_diag, tildeV=tildeV,
                        gamma=(m / p) if m > 0 else None, m=m)


# ---------------------------------------------------------------------------
# Sampling plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingPlan:
    """Low-discrepancy sample sets for the checkers."""

    n_box: int = 10_000
    n_shell: int = 1_000
    box_min: float = 1e-6
    box_max: float = 1e3
    s_max: float = 1e3
    integral_s_max: float = 1e6
    radii: tuple[float, ...] = (10.0, 20.0, 40.0, 80.0, 160.0)
    seed: int = 0

    def _sobol(self, d: int, n: int, salt: int = 0) -> Array:
        eng = qmc.Sobol(d, scramble=True, seed=self.seed + 7919 * salt)
        m = max(1, math.ceil(math.log2(max(n, 2))))
        return eng.random_base2(m)[:n]

    def box(self, d: int) -> Array:
        """Points log-uniform in ``[box_min, box_max]^d``."""
        u = self._sobol(d, self.n_box)
        lo, hi = math.log(self.box_min), math.log(self.box_max)
        return np.exp(lo + (hi - lo) * u)

    def facet(self, d: int, i: int) -> Array:
        pts = self.box(d)[: max(1, self.n_box // 10)].copy()
        pts[:, i] = 0.0
        return pts

    def shell(self, d: int, radius: float) -> Array:
        """Points on ``{|z| = radius}`` in the open orthant."""
        if d == 1:
            return np.array([[radius]])
        u = self._sobol(d, self.n_shell, salt=1)
        from scipy.special import ndtri

        g = np.abs(ndtri(np.clip(u, 1e-12, 1 - 1e-12))) + 1e-9
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
        return radius * dirs

    def scalar(self) -> Array:
        near = np.geomspace(1e-12, 1e-3, 64)
        far = np.geomspace(1e-3, self.s_max, 256)
        return np.unique(np.concatenate([near, far]))


# ---------------------------------------------------------------------------
# Heuristic helpers
# ---------------------------------------------------------------------------


def _loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.maximum(np.abs(np.asarray(y, dtype=float)), 1e-300))
    if x.size < 2:
        return 0.0
    return float(np.polyfit(x, y, 1)[0])


def tail_exponent(g: Callable[[float], float], s_max: float, s0: float = 1.0) -> tuple[float, Array]:
    """Power-law exponent of decade increments of ``int_s0^s_max g``.

    Returns the slope of ``log(increment)`` against ``log(s)`` over the last
    three decades together with all increments. A slope ``>= 0`` means the
    integral keeps growing (logarithmic divergence gives exactly 0).
    """
    edges = [s0]
    while edges[-1] * 10 <= s_max * (1 + 1e-12):
        edges.append(edges[-1] * 10)
    if len(edges) < 3:
        raise ModelError("integral cutoff must span at least two decades")
    inc = np.array(
        [integrate.quad(g, lo, hi, limit=400, epsabs=0.0, epsrel=1e-10)[0] for lo, hi in zip(edges[:-1], edges[1:])]
    )
    tail = slice(max(0, inc.size - 3), inc.size)
    return _loglog_slope(np.asarray(edges[:-1])[tail], inc[tail]), inc


def _safe_eval(fun, *args, what=""):
    try:
        out = fun(*args)
    except Exception as exc:  # evaluation failure is reported with context
        raise ModelError(f"evaluation of {what} failed: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Checkers
# ---------------------------------------------------------------------------


def check_H1(model: DiffusionModel, samples: SamplingPlan | None = None) -> CheckReport:
    """Check the conditions on each diffusion coefficient ``a_i``."""
    plan = samples or SamplingPlan()
    if plan.s_max < 1e3:
        raise ModelError("H1 sampling requires s_max >= 1e3")
    s = plan.scalar()
    wit: list[Witness] = []
    notes = []
    for i, cd in enumerate(model.a):
        zero = np.zeros(1)
        a0 = float(_safe_eval(cd.value, zero, what=f"a_{i}(0)")[0])
        da0 = float(_safe_eval(cd.first, zero, what=f"a_{i}'(0)")[0])
        wit.append(Witness(f"H1.a0[{i}]", (0.0,), FACET_TOL - abs(a0)))
        wit.append(Witness(f"H1.da0[{i}]", (0.0,), da0 - STRICT_EPS))
        av = _safe_eval(cd.value, s, what=f"a_{i}")
        if not np.all(np.isfinite(av)):
            bad = s[~np.isfinite(av)][0]
            raise ModelError(f"a_{i} is not finite at s={bad:g}")
        k = int(np.argmin(av / s))
        wit.append(Witness(f"H1.positive[{i}]", (float(s[k]),), float(av[k] / s[k]) - STRICT_EPS))

        big = np.geomspace(10.0, plan.s_max, 24)
        g = cd.first(big) ** 2 / cd.value(big) + cd.second(big)
        slope = _loglog_slope(big[-8:], g[-8:]) if np.all(np.isfinite(g)) else np.inf
        wit.append(Witness(f"H1.limsup[{i}]", (float(big[-1]),), TREND_TOL - slope))

        expo, inc = tail_exponent(lambda t: 1.0 / math.sqrt(float(cd.value(np.array([t]))[0])), plan.s_max)
        wit.append(Witness(f"H1.divergence[{i}]", (plan.s_max,), expo + INTEGRAL_EXPONENT_TOL))
        notes.append(f"a_{i}: tail exponent of int ds/sqrt(a) = {expo:.3f} (HEURISTIC)")
    return CheckReport(tuple(wit), "; ".join(notes))


def check_H2(model: DiffusionModel, samples: SamplingPlan | None = None) -> CheckReport:
    """Check that ``b_i`` vanishes on the facet ``{z_i = 0}`` and is C^1 inside."""
    plan = samples or SamplingPlan()
    wit: list[Witness] = []
    for i in range(model.d):
        pts = plan.facet(model.d, i)
        bi = _safe_eval(model.drift, pts, what="b")[:, i]
        k = int(np.argmax(np.abs(bi)))
        wit.append(Witness(f"H2.facet[{i}]", tuple(pts[k]), FACET_TOL - float(abs(bi[k]))))
    inner = plan.box(model.d)
    jac = _safe_eval(model.drift_diag_jacobian, inner, what="db")
    ok = bool(np.all(np.isfinite(jac)))
    wit.append(Witness("H2.c1_interior", None, 0.0 if ok else -1.0))
    return CheckReport(tuple(wit), f"facet_tol={FACET_TOL:g}")


def _shell_terms(model: DiffusionModel, lyap: LyapunovSpec, z: Array) -> dict[str, Array]:
    a = model.diffusion(z)
    da = model.diffusion_d1(z)
    b = model.drift(z)
    db = model.drift_diag_jacobian(z)
    gV = lyap.grad(z)
    if lyap.hess_diag is not None:
        hV = lyap.hess_diag(z)
    else:
        hV = _fd_hess_diag(lyap.grad, z)
    return dict(a=a, da=da, b=b, db=db, V=lyap.V(z), gV=gV, hV=hV, bV=np.sum(b * gV, axis=1))


def _fd_hess_diag(grad, z: Array) -> Array:
    out = np.empty_like(z)
    for i in range(z.shape[1]):
        h = FD_REL_STEP * np.maximum(1.0, np.abs(z[:, i]))
        zp, zm = z.copy(), z.copy()
        zp[:, i] += h
        zm[:, i] -= h
        out[:, i] = (grad(zp)[:, i] - grad(zm)[:, i]) / (2 * h)
    return out


def _check_schedule(schedule: Sequence[float]) -> Array:
    radii = np.asarray(schedule, dtype=float)
    if radii.size < 4 or np.any(np.diff(radii) <= 0):
        raise ModelError("radius schedule must be increasing with at least 4 radii")
    return radii


def check_H3(
    model: DiffusionModel,
    lyap: LyapunovSpec,
    schedule: Sequence[float] | None = None,
    samples: SamplingPlan | None = None,
    integral: bool = True,
) -> CheckReport:
    """Sample the four Lyapunov conditions on spherical shells.

    The limits in items (1) and (3) and the boundedness in item (4) are
    judged from power-law trends across the radius schedule; item (2) from
    decade increments of the improper integral at ``beta in {0.01, 1}``.
    """
    plan = samples or SamplingPlan()
    radii = _check_schedule(schedule if schedule is not None else plan.radii)
    if integral and lyap.tildeV is None:
        raise ModelError("check_H3 item (2) needs a minorant tildeV")
    minV, maxbV, ratio3, ratio4 = [], [], [], []
    pts_max = []
    for R in radii:
        z = plan.shell(model.d, R)
        t = _shell_terms(model, lyap, z)
        minV.append(float(t["V"].min()))
        k = int(np.argmax(t["bV"]))
        maxbV.append(float(t["bV"][k]))
        pts_max.append(tuple(z[k]))
        with np.errstate(divide="ignore", invalid="ignore"):
            num3 = np.sum(
                np.abs(t["db"]) + np.abs(t["da"] * t["b"]) / t["a"] + np.abs(t["da"] * t["gV"]) + np.abs(t["a"] * t["hV"]),
                axis=1,
            )
            r3 = num3 / np.abs(t["bV"])
            num4 = np.sum(t["a"] * t["gV"] ** 2 + t["b"] ** 2 / t["a"], axis=1)
            r4 = np.where(t["bV"] < 0, num4 / -t["bV"], np.inf)
        ratio3.append(float(np.max(r3)))
        ratio4.append(float(np.max(r4)))
    wit: list[Witness] = []
    for k in range(len(radii) - 1):
        wit.append(Witness(f"H3.1.V_growth[{radii[k + 1]:g}]", None, minV[k + 1] - minV[k]))
        wit.append(Witness(f"H3.1.drift_decrease[{radii[k + 1]:g}]", pts_max[k + 1], maxbV[k] - maxbV[k + 1]))
    wit.append(Witness("H3.1.drift_negative", pts_max[-1], -maxbV[-1]))
    s3 = _loglog_slope(radii, ratio3) if np.all(np.isfinite(ratio3)) else np.inf
    wit.append(Witness("H3.3.ratio_to_zero", None, -TREND_TOL - s3))
    if np.all(np.isfinite(ratio4)):
        s4 = _loglog_slope(radii, ratio4)
        C4 = max(ratio4)
    else:
        s4, C4 = np.inf, np.inf
    wit.append(Witness("H3.4.bounded_ratio", None, TREND_TOL - s4))
    notes = [f"(3) ratio slope {s3:.3f}", f"(4) fitted C = {C4:.6g}, slope {s4:.3f}"]
    if integral:
        for i, cd in enumerate(model.a):
            for beta in (0.01, 1.0):
                def g(s, cd=cd, beta=beta):
                    sv = np.array([s])
                    return float(np.exp(-beta * lyap.tildeV(sv))[0] / cd.value(sv)[0])

                expo, inc = tail_exponent(g, plan.integral_s_max)
                total = float(np.sum(np.abs(inc)))
                if abs(inc[-1]) <= 1e-12 * total or total == 0.0:
                    margin = 1.0  # tail below quadrature resolution
                else:
                    margin = -INTEGRAL_EXPONENT_TOL - expo
                wit.append(Witness(f"H3.2.integral[{i},beta={beta:g}]", None, margin))
        notes.append("(2) sampled beta in {0.01, 1} only")
    notes.append("limits judged by trend tests (HEURISTIC)")
    return CheckReport(tuple(wit), "; ".join(notes))


def check_H4(
    model: DiffusionModel,
    lyap: LyapunovSpec,
    schedule: Sequence[float] | None = None,
    samples: SamplingPlan | None = None,
    R_star: float = 0.0,
) -> CheckReport:
    """Sample the strong-dissipativity conditions outside ``B_{R_star}``."""
    if lyap.gamma is None:
        raise ModelError("check_H4 requires lyap.gamma")
    plan = samples or SamplingPlan()
    radii = np.asarray(schedule if schedule is not None else plan.radii, dtype=float)
    radii = radii[radii > R_star]
    if radii.size == 0:
        return CheckReport((), "vacuous: no sampled radius outside B_R*")
    g = float(lyap.gamma)
    decay, cratio, worst = [], [], []
    for R in radii:
        z = plan.shell(model.d, R)
        t = _shell_terms(model, lyap, z)
        V = t["V"]
        decay.append(float(np.max(V ** (-g - 2) * np.sum(t["a"] * t["gV"] ** 2, axis=1))))
        gen = 0.5 * np.sum(t["a"] * t["hV"], axis=1) + t["bV"]
        r = -gen / V ** (g + 1)
        k = int(np.argmin(r))
        cratio.append(float(r[k]))
        worst.append(tuple(z[k]))
    wit = []
    if radii.size >= 2:
        wit.append(Witness("H4.decay", None, -TREND_TOL - _loglog_slope(radii, decay)))
        wit.append(Witness("H4.rate_trend", None, _loglog_slope(radii, np.maximum(cratio, 1e-300)) + TREND_TOL))
    k = int(np.argmin(cratio))
    wit.append(Witness("H4.generator_bound", worst[k], cratio[k] - STRICT_EPS))
    return CheckReport(tuple(wit), f"fitted C = {min(cratio):.6g}; trend tests HEURISTIC")


def corollary_witnesses(model: DiffusionModel) -> list[Witness]:
    """Sharp parameter conditions of the corollaries for zoo families."""
    p = model.params
    d = model.d
    zid = model.zoo_id
    out: list[Witness] = []
    if zid in ("lotka_volterra", "holling"):
        c = np.asarray(p["c"], dtype=float).reshape(d, d)
        cd = np.diag(c)
        off = c[~np.eye(d, dtype=bool)]
        if zid == "lotka_volterra":
            rhs = float(cd.min()) / (d - 1) if d > 1 else np.inf
            lhs = -float(off.min()) if off.size else -np.inf
            margin = rhs - lhs - STRICT_EPS if d > 1 else float(cd.min())
            out.append(Witness("corollary.e_LV", None, margin))
        else:
            r = _vec(p, "r", d)
            gap = cd - r
            out.append(Witness("corollary.holling_cii_gt_ri", None, float(gap.min()) - STRICT_EPS))
            if d > 1:
                out.append(Witness("corollary.holling_offdiag", None,
                                   float(gap.min()) / (d - 1) + float(off.min()) - STRICT_EPS))
    elif zid in ("regular_holling", "beddington_deangelis"):
        c = np.asarray(p["c"], dtype=float).reshape(d, d)
        out.append(Witness(f"corollary.{zid}", None, float(np.diag(c).min())))
    elif zid == "crowley_martin":
        c11, c22, alpha = float(p["c11"]), float(p["c22"]), float(p["alpha"])
        out.append(Witness("corollary.crowley_martin_alpha", None,
                           alpha - 2.0 / (3.0 * min(2 * c11, c22)) - STRICT_EPS))
    return out


def check_assumption_A(
    model: DiffusionModel,
    env: PolynomialEnvelope,
    samples: SamplingPlan | None = None,
) -> CheckReport:
    """Check the polynomial envelope on ``f_i``, its delta threshold, and the
    induced drift bound ``sum z_i f_i dV/dz_i <= -C5 |z|^(2m+1)``.

    For zoo models the matching corollary inequality is added as a witness.
    Crowley-Martin is verified through the drift bound directly, so its
    envelope items are reported in the notes only.
    """
    if env.n > env.m:
        raise ModelError("envelope requires n <= m")
    plan = samples or SamplingPlan()
    d = model.d
    m, n = float(env.m), float(env.n)
    z = plan.box(d)
    if model.f is None and np.any(z < F_RECOVERY_FLOOR):
        raise ModelError(f"facet-adjacent samples below {F_RECOVERY_FLOOR:g} with no explicit f")
    f = _safe_eval(model.growth, z, what="f")
    df = _safe_eval(model.growth_diag_jacobian, z, what="df")
    sum_m = np.sum(z**m, axis=1)
    scale = 1.0 + sum_m
    wit: list[Witness] = []
    info: list[Witness] = []
    direct_only = model.zoo_id == "crowley_martin"
    for i in range(d):
        lower = (f[:, i] + env.C1 * scale) / scale
        k = int(np.argmin(lower))
        (info if direct_only else wit).append(Witness(f"A.lower[{i}]", tuple(z[k]), float(lower[k])))
        others = np.delete(z, i, axis=1)
        cross = env.delta * np.sum(others**n, axis=1) if d > 1 else 0.0
        inside = z[:, i] <= env.R
        bound = np.where(inside, env.C2, -env.C3 * z[:, i] ** m) + cross
        upper = (bound - f[:, i]) / scale
        k = int(np.argmin(upper))
        (info if direct_only else wit).append(Witness(f"A.upper[{i}]", tuple(z[k]), float(upper[k])))
        outside = np.any(z >= env.R, axis=1)
        if np.any(outside):
            rn = np.linalg.norm(z[outside], axis=1)
            lim = env.C4 * rn ** (m - 1)
            dm = (lim - np.abs(df[outside, i])) / (1.0 + lim)
            k = int(np.argmin(dm))
            (info if direct_only else wit).append(Witness(f"A.deriv[{i}]", tuple(z[outside][k]), float(dm[k])))
    if n == m and d > 1:
        w = Witness("A.delta_threshold", None, env.C3 / (d - 1) - env.delta - STRICT_EPS)
        (info if direct_only else wit).append(w)

    # drift bound with V = |z|^(m+1) on shells
    lyap = default_lyapunov(env, d)
    ratios, worst = [], []
    for R in plan.radii:
        zz = plan.shell(d, R)
        val = np.sum(zz * model.growth(zz) * lyap.grad(zz), axis=1)
        r = -val / np.linalg.norm(zz, axis=1) ** (2 * m + 1)
        k = int(np.argmin(r))
        ratios.append(float(r[k]))
        worst.append(tuple(zz[k]))
    k = int(np.argmin(ratios))
    wit.append(Witness("A.drift_bound", worst[k], ratios[k] - STRICT_EPS))
    wit.extend(corollary_witnesses(model))
    notes = [f"fitted C5 = {min(ratios):.6g}"]
    if info:
        notes.append(
            "informational (not counted): "
            + ", ".join(f"{w.condition} margin={w.margin:.4g}" for w in info)
        )
    return CheckReport(tuple(wit), "; ".join(notes))
