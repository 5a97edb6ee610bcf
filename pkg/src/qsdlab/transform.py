"""Lamperti-type change of variables and Liouville conjugation.

Each coordinate is mapped by ``xi_i(z) = int_0^z ds / sqrt(a_i(s))`` so that the
noise becomes unit Brownian motion, ``dX = (p - q) dt + dW``. Conjugating the
Fokker-Planck operator of ``X`` by ``exp(-Q/2 - beta U)`` moves the boundary
singularity of ``q`` into a zeroth-order term ``e_beta``; the search in
:func:`certify_beta0` certifies a coercivity bound for that term on samples.

All derived quantities are evaluated through closed forms in the original
variable ``z = xi^{-1}(x)``:

* ``dU/dx_i = dV/dz_i sqrt(a_i)``
* ``d2U/dx_i^2 = d2V/dz_i^2 a_i + dV/dz_i a_i' / 2``
* ``p . grad U = b . grad V``
* ``p_i q_i = b_i a_i' / (4 a_i)``
* ``dp_i/dx_i = db_i/dz_i - b_i a_i' / (2 a_i)``
* ``q_i^2 - q_i' = 3 a_i'^2 / (16 a_i) - a_i'' / 4``
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline
from scipy.stats import qmc

from .errors import (
    AlphaRegionError,
    CertificateError,
    OutOfExtentError,
    SingularPointError,
    TransformError,
)
from .models import (
    CoordinateDiffusion,
    DiffusionModel,
    LyapunovSpec,
    _fd_hess_diag,
    default_lyapunov,
    zoo_envelope,
)

Array = np.ndarray

Q_FLOOR = 1e-8
DEFAULT_Z_MAX = 1e4
DEFAULT_NODES = 4096
U_MIN = 1e-9
BOUNDARY_CONSTANT = 0.75

_GL16 = np.polynomial.legendre.leggauss(16)
_GL8 = np.polynomial.legendre.leggauss(8)


# ---------------------------------------------------------------------------
# Coordinate tables
# ---------------------------------------------------------------------------


def _integrand(cd: CoordinateDiffusion, u: Array, slope0: float) -> Array:
    """``2u / sqrt(a(u^2))``, the integrand of xi after substituting ``s = u^2``."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    zero = u == 0
    out[zero] = 2.0 / math.sqrt(slope0)
    uz = u[~zero]
    av = cd.value(uz * uz)
    if np.any(~(av > 0)):
        bad = float((uz * uz)[~(av > 0)][0])
        raise TransformError(f"a(s) <= 0 at s={bad:g}; xi would not be monotone")
    out[~zero] = 2.0 * uz / np.sqrt(av)
    return out


def _gauss(cd, lo: Array, hi: Array, slope0: float, rule) -> Array:
    nodes, weights = rule
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    pts = mid[:, None] + half[:, None] * nodes[None, :]
    vals = _integrand(cd, pts.ravel(), slope0).reshape(pts.shape)
    return half * (vals @ weights)


@dataclass(frozen=True)
class XiTable:
    """Monotone cubic table for ``xi`` in the variable ``u = sqrt(z)``.

    Nodes are geometric in ``u`` (hence in ``z``), clustering at the
    square-root cusp of ``xi`` at 0. Slopes are exact, so the Hermite cubic
    interpolates both values and derivatives.
    """

    u: Array
    x: Array
    slope: Array
    slope0: float
    spline: CubicHermiteSpline = field(repr=False)

    @property
    def z_max(self) -> float:
        return float(self.u[-1] ** 2)

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    @classmethod
    def build(cls, cd: CoordinateDiffusion, z_max: float = DEFAULT_Z_MAX, nodes: int = DEFAULT_NODES) -> "XiTable":
        if nodes < 16:
            raise TransformError("xi table needs at least 16 nodes")
        if not z_max > U_MIN**2:
            raise TransformError("z_max must be positive")
        slope0 = float(cd.first(np.zeros(1))[0])
        if not slope0 > 0:
            raise TransformError(
                f"a'(0) = {slope0:g} <= 0: the integral of 1/sqrt(a) does not converge at 0"
            )
        u = np.concatenate([[0.0], np.geomspace(U_MIN, math.sqrt(z_max), nodes - 1)])
        lo, hi = u[:-1], u[1:]
        fine = _gauss(cd, lo, hi, slope0, _GL16)
        coarse = _gauss(cd, lo, hi, slope0, _GL8)
        bad = np.abs(fine - coarse) > 1e-13 * np.maximum(np.abs(fine), 1e-300) + 1e-300
        for k in np.flatnonzero(bad):
            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                try:
                    fine[k] = integrate.quad(
                        lambda t: float(_integrand(cd, np.array([t]), slope0)[0]),
                        lo[k], hi[k], epsabs=0.0, epsrel=1e-13, limit=200,
                    )[0]
                except integrate.IntegrationWarning as exc:
                    raise TransformError(
                        f"quadrature for xi did not converge on [{lo[k]**2:g}, {hi[k]**2:g}]: {exc}"
                    ) from exc
        x = np.concatenate([[0.0], np.cumsum(fine)])
        slope = _integrand(cd, u, slope0)
        if np.any(np.diff(x) <= 0) or np.any(slope <= 0):
            raise TransformError("xi table is not strictly increasing")
        secant = np.diff(x) / np.diff(u)
        fc = (slope[:-1] / secant) ** 2 + (slope[1:] / secant) ** 2
        if np.any(fc > 9.0):
            raise TransformError("xi table violates the monotone-cubic condition; add nodes")
        return cls(u=u, x=x, slope=slope, slope0=slope0, spline=CubicHermiteSpline(u, x, slope))

    def forward(self, z: Array) -> Array:
        z = np.asarray(z, dtype=float)
        if np.any(z < 0) or np.any(z > self.z_max):
            raise OutOfExtentError(f"z outside table extent [0, {self.z_max:g}]")
        return self.spline(np.sqrt(z))

    def derivative(self, z: Array) -> Array:
        """``dxi/dz = 1/sqrt(a(z))`` read from the table."""
        z = np.asarray(z, dtype=float)
        u = np.sqrt(z)
        return self.spline(u, 1) / (2 * u)

    def inverse(self, x: Array) -> Array:
        """Solve ``spline(u) = x`` by bracketed Newton on the local cubic; return ``u^2``."""
        x = np.asarray(x, dtype=float)
        shape = x.shape
        x = x.ravel()
        if np.any(x < 0) or np.any(x > self.x_max):
            raise OutOfExtentError(f"x outside table extent [0, {self.x_max:g}]")
        k = np.clip(np.searchsorted(self.x, x, side="right") - 1, 0, self.x.size - 2)
        c = self.spline.c[:, k]
        h = self.u[k + 1] - self.u[k]
        target = x - self.x[k]
        # linear first guess, then safeguarded Newton within [0, h]
        s = np.clip(target / np.maximum(self.x[k + 1] - self.x[k], 1e-300) * h, 0.0, h)
        lo = np.zeros_like(s)
        hi = h.copy()
        for _ in range(60):
            val = ((c[0] * s + c[1]) * s + c[2]) * s + c[3] - self.x[k] - target
            der = (3 * c[0] * s + 2 * c[1]) * s + c[2]
            lo = np.where(val < 0, s, lo)
            hi = np.where(val > 0, s, hi)
            step = val / der
            s_new = s - step
            outside = (s_new <= lo) | (s_new >= hi)
            s_new = np.where(outside, 0.5 * (lo + hi), s_new)
            if np.all(np.abs(s_new - s) <= 4e-16 * (self.u[k] + h)):
                s = s_new
                break
            s = s_new
        u = self.u[k] + s
        return (u * u).reshape(shape)


# ---------------------------------------------------------------------------
# Operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlphaConfig:
    """Region parameters of the weight: collar width ``delta0`` and box size ``R0``.

    ``R0=None`` asks :func:`build_transform` to pick it from shell samples.
    """

    delta0: float = 0.1
    R0: float | None = None

    def __post_init__(self):
        if not 0 < self.delta0 < 1:
            raise TransformError("delta0 must lie in (0, 1)")
        if self.R0 is not None and not self.R0 > 0:
            raise TransformError("R0 must be positive")


@dataclass(frozen=True)
class LiouvilleCertificate:
    """Sampled certificate of ``e_{beta0,N} + M >= C_star * alpha`` for all ``N >= 1``."""

    beta0: float
    M: float
    C_star: float
    sample_count: int
    min_margin: float
    search_log: tuple = ()
    revalidation_margin: float | None = None

    def to_dict(self) -> dict:
        return {
            "beta0": self.beta0,
            "M": self.M,
            "C_star": self.C_star,
            "sample_count": self.sample_count,
            "min_margin": self.min_margin,
            "revalidation_margin": self.revalidation_margin,
            "search_log": list(self.search_log),
        }


class TransformedOperator:
    """Coefficients of the conjugated operator ``L_beta`` in the ``x`` variable.

    Points are ``(n, d)`` arrays; 1D inputs are read as a single point when
    ``d > 1`` and as a batch of scalars when ``d == 1``.
    """

    def __init__(
        self,
        model: DiffusionModel,
        lyap: LyapunovSpec | None,
        tables: Sequence[XiTable],
        alpha_config: AlphaConfig | None = None,
        beta: float = 1.0,
    ):
        if len(tables) != model.d:
            raise TransformError("one xi table per coordinate is required")
        self.model = model
        self.lyap = lyap
        self.xi_tables = tuple(tables)
        self.alpha_config = alpha_config or AlphaConfig()
        self._beta = float(beta)
        self.certificate: LiouvilleCertificate | None = None
        one = np.ones(1)
        self._log_a_at_one = np.array(
            [math.log(float(cd.value(t.inverse(one))[0])) for cd, t in zip(model.a, tables)]
        )

    # -- basic maps ---------------------------------------------------------

    @property
    def d(self) -> int:
        return self.model.d

    @property
    def beta(self) -> float:
        return self._beta

    @property
    def x_extent(self) -> Array:
        return np.array([t.x_max for t in self.xi_tables])

    @property
    def z_extent(self) -> Array:
        return np.array([t.z_max for t in self.xi_tables])

    def _pts(self, p) -> Array:
        p = np.asarray(p, dtype=float)
        if p.ndim == 0:
            p = p.reshape(1, 1)
        elif p.ndim == 1:
            p = p.reshape(1, -1) if self.d > 1 else p.reshape(-1, 1)
        if p.shape[1] != self.d:
            raise TransformError(f"points must have {self.d} coordinates")
        return p

    def xi(self, z) -> Array:
        z = self._pts(z)
        return np.column_stack([t.forward(z[:, i]) for i, t in enumerate(self.xi_tables)])

    def xi_inverse(self, x) -> Array:
        x = self._pts(x)
        return np.column_stack([t.inverse(x[:, i]) for i, t in enumerate(self.xi_tables)])

    def _state(self, x) -> dict:
        x = self._pts(x)
        if np.any(x < Q_FLOOR):
            raise SingularPointError(f"coordinate below q_floor = {Q_FLOOR:g}")
        z = self.xi_inverse(x)
        m = self.model
        return dict(x=x, z=z, a=m.diffusion(z), da=m.diffusion_d1(z), d2a=m.diffusion_d2(z))

    def _need_lyap(self) -> LyapunovSpec:
        if self.lyap is None:
            raise TransformError("this quantity needs a Lyapunov function")
        return self.lyap

    def _potential_terms(self, st: dict) -> None:
        if "gV" in st:
            return
        lyap = self._need_lyap()
        z = st["z"]
        st["V"] = lyap.V(z)
        st["gV"] = lyap.grad(z)
        st["hV"] = lyap.hess_diag(z) if lyap.hess_diag is not None else _fd_hess_diag(lyap.grad, z)

    # -- coefficient fields -------------------------------------------------

    def drift_p(self, x) -> Array:
        st = self._state(x)
        return self.model.drift(st["z"]) / np.sqrt(st["a"])

    def killing_q(self, x) -> Array:
        st = self._state(x)
        return st["da"] / (4 * np.sqrt(st["a"]))

    def x_drift(self, x) -> Array:
        """Drift ``p - q`` of the transformed process."""
        st = self._state(x)
        sa = np.sqrt(st["a"])
        return self.model.drift(st["z"]) / sa - st["da"] / (4 * sa)

    def potential_U(self, x) -> Array:
        st = self._state(x)
        return self._need_lyap().V(st["z"])

    def grad_U(self, x) -> Array:
        st = self._state(x)
        self._potential_terms(st)
        return st["gV"] * np.sqrt(st["a"])

    def log_density_Q(self, x) -> Array:
        """``Q(x) = (1/2) sum_i [ln a_i(xi_i^{-1}(x_i)) - ln a_i(xi_i^{-1}(1))]``."""
        st = self._state(x)
        return 0.5 * np.sum(np.log(st["a"]) - self._log_a_at_one, axis=1)

    def q2_minus_dq(self, x) -> Array:
        """Per-coordinate ``q_i^2 - q_i'``."""
        st = self._state(x)
        return 3 * st["da"] ** 2 / (16 * st["a"]) - st["d2a"] / 4

    def _e_terms(self, st: dict) -> dict:
        self._potential_terms(st)
        z, a, da = st["z"], st["a"], st["da"]
        b = self.model.drift(z)
        db = self.model.drift_diag_jacobian(z)
        gV, hV = st["gV"], st["hV"]
        return dict(
            lapU=np.sum(hV * a + 0.5 * gV * da, axis=1),
            gradU2=np.sum(gV**2 * a, axis=1),
            p_gradU=np.sum(b * gV, axis=1),
            sing=0.5 * np.sum(3 * da**2 / (16 * a) - st["d2a"] / 4, axis=1),
            p_q=np.sum(b * da / (4 * a), axis=1),
            div_p=np.sum(db - b * da / (2 * a), axis=1),
            bV=np.sum(b * gV, axis=1),
        )

    @staticmethod
    def _combine(t: dict, beta: float, N: float) -> Array:
        invN = 0.0 if math.isinf(N) else 1.0 / N
        return (
            (invN - 0.5) * beta * t["lapU"]
            - 0.5 * beta**2 * t["gradU2"]
            - beta * t["p_gradU"]
            + t["sing"]
            - t["p_q"]
            + invN * t["div_p"]
        )

    def zeroth_order_e(self, beta: float, N: float, x) -> Array:
        """``e_{beta,N}``; ``N = inf`` drops the ``(1/N)(div p + beta lap U)`` part."""
        if not beta > 0:
            raise TransformError("beta must be positive")
        if not N >= 1:
            raise TransformError("N must be >= 1")
        return self._combine(self._e_terms(self._state(x)), float(beta), float(N))

    def operator_coefficients(self, x, beta: float | None = None) -> dict:
        """Everything the grid solver needs at the points ``x``.

        Returns the first-order coefficient ``c = p + beta grad U``, the
        zeroth-order term ``e_beta``, and the conjugation exponents ``Q``, ``U``.
        """
        beta = self._beta if beta is None else float(beta)
        st = self._state(x)
        t = self._e_terms(st)
        sa = np.sqrt(st["a"])
        p = self.model.drift(st["z"]) / sa
        return dict(
            z=st["z"],
            c=p + beta * st["gV"] * sa,
            e=self._combine(t, beta, 1.0),
            Q=0.5 * np.sum(np.log(st["a"]) - self._log_a_at_one, axis=1),
            U=st["V"],
            sqrt_a=sa,
        )

    # -- weight ------------------------------------------------------------

    def _minus_bV(self, st: dict) -> Array:
        self._potential_terms(st)
        return -np.sum(self.model.drift(st["z"]) * st["gV"], axis=1)

    def weight_alpha(self, x) -> Array:
        """Four-branch weight built from the collar ``Gamma_delta0`` and box ``B_R0``."""
        st = self._state(x)
        x = st["x"]
        cfg = self.alpha_config
        R0 = cfg.R0 if cfg.R0 is not None else math.inf
        collar = np.any(x <= cfg.delta0, axis=1)
        in_box = np.all(x < R0, axis=1)
        sing = np.sum(np.maximum(1.0 / x**2, 1.0), axis=1)
        out = np.ones(x.shape[0])
        out[collar & in_box] = sing[collar & in_box]
        far = ~in_box
        if np.any(far):
            sub = {k: v[far] for k, v in st.items()}
            conf = self._minus_bV(sub)
            if np.any(conf <= 0):
                k = int(np.argmin(conf))
                raise AlphaRegionError(
                    f"-(b.grad V) = {conf[k]:.3g} <= 0 at x = {x[far][k]} beyond R0 = {R0:g}; "
                    "increase R0"
                )
            out[far] = np.where(collar[far], sing[far] + conf, conf)
        return out

    # -- certificate ---------------------------------------------------------

    def certificate_margins(self, x, beta: float, M: float, C_star: float) -> Array:
        """``(min_N e_{beta,N} + M - C_star alpha) / alpha`` at each point."""
        st = self._state(x)
        t = self._e_terms(st)
        g = np.minimum(self._combine(t, beta, 1.0), self._combine(t, beta, math.inf))
        alpha = self.weight_alpha(st["x"])
        return (g + M - C_star * alpha) / alpha

    def _set_certificate(self, cert: LiouvilleCertificate) -> None:
        self._beta = cert.beta0
        self.certificate = cert


def _auto_R0(op: TransformedOperator, n_shell: int = 256, n_radii: int = 40, seed: int = 0) -> float:
    """Smallest box radius beyond which every shell sample has ``-(b.grad V) > 0``, doubled."""
    if op.lyap is None:
        return math.inf
    d = op.d
    x_top = float(op.x_extent.min())
    radii = np.geomspace(0.25, 0.98 * x_top, n_radii)
    rng = np.random.default_rng(seed)
    ok = []
    for R in radii:
        if d == 1:
            pts = np.array([[R]])
        else:
            pts = np.exp(rng.uniform(math.log(1e-4), math.log(R), size=(n_shell, d)))
            face = rng.integers(0, d, size=n_shell)
            pts[np.arange(n_shell), face] = R
        st = op._state(pts)
        ok.append(bool(np.all(op._minus_bV(st) > 0)))
    ok = np.array(ok)
    for k in range(radii.size):
        if ok[k:].all():
            return float(min(2 * radii[k], x_top))
    return math.inf


def build_transform(
    model: DiffusionModel,
    lyap: LyapunovSpec | None = None,
    z_max: float | Sequence[float] = DEFAULT_Z_MAX,
    nodes: int = DEFAULT_NODES,
    alpha_config: AlphaConfig | None = None,
) -> TransformedOperator:
    """Tabulate ``xi_i`` and its inverse for every coordinate.

    ``beta`` starts at 1 until :func:`certify_beta0` replaces it. When
    ``alpha_config.R0`` is ``None`` it is chosen by :func:`_auto_R0`. Zoo
    models without an explicit ``lyap`` get ``V = |z|^{m+1}`` from their
    polynomial envelope.
    """
    if lyap is None and model.zoo_id is not None:
        lyap = default_lyapunov(zoo_envelope(model), model.d)
    zm = np.broadcast_to(np.asarray(z_max, dtype=float), (model.d,))
    tables = [XiTable.build(cd, float(zm[i]), nodes) for i, cd in enumerate(model.a)]
    cfg = alpha_config or AlphaConfig()
    op = TransformedOperator(model, lyap, tables, cfg)
    if cfg.R0 is None:
        op.alpha_config = AlphaConfig(cfg.delta0, _auto_R0(op))
    return op


def default_ladder() -> Array:
    return 2.0 ** np.linspace(-6, 6, 25)


def certification_sample(op: TransformedOperator, n: int, seed: int, x_min: float = 1e-4) -> Array:
    """Sobol points log-uniform in ``[x_min, 0.98 x_extent_i]`` per coordinate."""
    eng = qmc.Sobol(op.d, scramble=True, seed=seed)
    u = eng.random_base2(max(1, math.ceil(math.log2(n))))[:n]
    lo = math.log(x_min)
    hi = np.log(0.98 * op.x_extent)
    return np.exp(lo + (hi - lo) * u)


def _fit_M_C(g: Array, alpha: Array, margin_floor: float) -> tuple[float, float, float]:
    """Best ``(M, C_star, score)`` with ``C_star = (1 - floor) min((g + M)/alpha)``."""
    best = (math.nan, -math.inf, -math.inf)
    for M in np.geomspace(1e-3, 1e8, 221):
        C = (1.0 - margin_floor) * float(np.min((g + M) / alpha))
        score = C / (1.0 + M)
        if C > 0 and score > best[2]:
            best = (float(M), C, score)
    return best


def certify_beta0(
    op: TransformedOperator,
    n_samples: int = 10_000,
    seed: int = 0,
    ladder: Sequence[float] | None = None,
    margin_floor: float = 0.1,
    revalidate: int = 100_000,
    max_rounds: int = 3,
) -> LiouvilleCertificate:
    """Search the ``beta`` ladder for a certified ``(beta0, M, C_star)``.

    For each ``beta`` the bound is fitted on ``min(e_{beta,1}, e_{beta,inf})``;
    affinity in ``1/N`` extends it to every ``N >= 1``. ``C_star`` keeps a
    relative slack of ``margin_floor``. The winner maximizes
    ``C_star / (1 + M)``; it is then re-checked on ``revalidate`` fresh points
    and the search is reopened with any violators (up to ``max_rounds``).
    Sets ``op.beta`` to ``beta0`` on success.
    """
    ladder = default_ladder() if ladder is None else np.asarray(ladder, dtype=float)
    x = certification_sample(op, n_samples, seed)
    alpha = op.weight_alpha(x)
    log: list[dict] = []
    for rnd in range(max_rounds + 1):
        st = op._state(x)
        t = op._e_terms(st)
        best = None
        for beta in ladder:
            g = np.minimum(op._combine(t, beta, 1.0), op._combine(t, beta, math.inf))
            M, C, score = _fit_M_C(g, alpha, margin_floor)
            ok = C > 0
            log.append({"round": rnd, "beta": float(beta), "M": M if ok else None,
                        "C_star": C if ok else None, "score": score if ok else None, "certified": ok,
                        "worst_ratio": float(np.min((g + 1e8) / alpha)) if not ok else None})
            if ok and (best is None or score > best[3]):
                best = (float(beta), M, C, score, g)
        if best is None:
            g = np.minimum(op._combine(t, ladder[0], 1.0), op._combine(t, ladder[0], math.inf))
            worst = np.argsort((g + 1e8) / alpha)[:10]
            raise CertificateError(
                "no beta on the ladder certifies e_{beta,N} + M >= C* alpha",
                best=max((r for r in log if r["worst_ratio"] is not None), key=lambda r: r["worst_ratio"]),
                violations=x[worst],
            )
        beta0, M, C, _, g = best
        min_margin = float(np.min((g + M - C * alpha) / alpha))
        cert = LiouvilleCertificate(beta0, M, C, int(x.shape[0]), min_margin, tuple(log))
        if not revalidate:
            op._set_certificate(cert)
            return cert
        fresh = certification_sample(op, revalidate, seed + 1000 + rnd)
        marg = op.certificate_margins(fresh, beta0, M, C)
        worst = float(marg.min())
        if worst >= -1e-8:
            cert = LiouvilleCertificate(beta0, M, C, int(x.shape[0]), min_margin, tuple(log), worst)
            op._set_certificate(cert)
            return cert
        bad = fresh[marg < -1e-8]
        x = np.vstack([x, bad])
        alpha = op.weight_alpha(x)
    raise CertificateError(
        f"certificate failed revalidation after {max_rounds} rounds (worst margin {worst:.3g})",
        best={"beta0": beta0, "M": M, "C_star": C}, violations=bad[:10],
    )


def boundary_constant_check(op: TransformedOperator, xs: Sequence[float] = (1e-2, 1e-3, 1e-4)) -> dict:
    """Evaluate ``x^2 (q_i^2 - q_i')`` near 0 and compare with the limit 3/4."""
    xs = np.asarray(xs, dtype=float)
    report = {"target": BOUNDARY_CONSTANT, "x": xs.tolist(), "coordinates": []}
    for i, (cd, tab) in enumerate(zip(op.model.a, op.xi_tables)):
        z = tab.inverse(xs)
        a, da, d2a = cd.value(z), cd.first(z), cd.second(z)
        vals = xs**2 * (3 * da**2 / (16 * a) - d2a / 4)
        err = np.abs(vals - BOUNDARY_CONSTANT)
        report["coordinates"].append({
            "index": i,
            "values": vals.tolist(),
            "abs_error": err.tolist(),
            "monotone_trend": bool(np.all(np.diff(err) <= 1e-12)),
            "converged": bool(err[-1] <= 1e-2),
        })
    return report
