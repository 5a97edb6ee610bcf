"""Finite-difference eigen-solver for the conjugated operator in ``x``.

The operator ``L = (1/2) Lap - c . grad - e`` with ``c = p + beta0 grad U`` is
discretized on a tensor grid that is geometric near the absorbing facets and
uniform further out, with homogeneous Dirichlet data on the truncated
boundary. On each axis

* ``D2 = W^{-1} S`` is the standard non-uniform three-point Laplacian,
* ``D1 = W^{-1} K`` with ``K`` antisymmetric, i.e. ``(u_{i+1} - u_{i-1}) / (x_{i+1} - x_{i-1})``,

where ``W`` holds the trapezoid weights. The divergence-form adjoint
``(1/2) D2 rho w + D1 (c w) - e w`` is then exactly ``W^{-1} A^T W``, so the
forward and adjoint problems share their spectrum to rounding error. Both
stencils are second-order under refinements that keep the grid a smooth map
image (ratio ``r -> sqrt(r)`` when the node count doubles).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla

from .errors import GridError, SpectralError
from .transform import Q_FLOOR, TransformedOperator

Array = np.ndarray

NODE_BUDGET = 4_000_000
DEFAULT_TOL = 1e-8
RICH_TOL = 1e-2
PECLET_SWITCH = 2.0


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Truncation and grading parameters shared by all coordinates."""

    delta_cut: float = 1e-3
    R_cut: float = 20.0
    nodes: int = 512
    ratio: float = 1.1

    def refined(self) -> "GridSpec":
        """Double the node count and take the square root of the grading ratio."""
        return GridSpec(self.delta_cut, self.R_cut, 2 * self.nodes - 1, math.sqrt(self.ratio))


def graded_axis(delta_cut: float, R_cut: float, nodes: int, ratio: float) -> Array:
    """Nodes ``delta_cut = x_0 < ... < x_{n-1} = R_cut``.

    Spacing grows geometrically (``x_{k+1} = ratio x_k``) and switches to the
    uniform spacing of the remaining nodes at the first node where that
    spacing is at most ``ratio`` times the last geometric one, so no step
    grows by more than ``ratio``.
    """
    n = int(nodes)
    best = 0
    for k in range(1, n - 2):
        xk = delta_cut * ratio**k
        if xk >= R_cut:
            break
        best = k
        uniform = (R_cut - xk) / (n - 1 - k)
        if uniform <= ratio * (xk - xk / ratio):
            break
    geo = delta_cut * ratio ** np.arange(best + 1)
    uni = np.linspace(geo[-1], R_cut, n - best)
    x = np.concatenate([geo, uni[1:]])
    h = np.diff(x)
    if np.max(h[1:] / h[:-1]) > ratio * (1 + 1e-9):
        raise GridError(f"{n} nodes cannot grade from {delta_cut:g} to {R_cut:g} at ratio {ratio:g}")
    return x


def _trapezoid_weights(x: Array) -> Array:
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


@dataclass(frozen=True)
class Grid:
    """Tensor grid with Dirichlet boundary nodes at ``delta_cut`` and ``R_cut``.

    Unknowns live on interior nodes and are flattened in C order (last
    coordinate fastest).
    """

    d: int
    axes: tuple[Array, ...]
    spec: GridSpec
    boundary: str = "dirichlet"

    @property
    def interior_axes(self) -> tuple[Array, ...]:
        return tuple(a[1:-1] for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size - 2 for a in self.axes)

    @property
    def n_interior(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_total(self) -> int:
        return int(np.prod([a.size for a in self.axes]))

    def axis_weights(self) -> tuple[Array, ...]:
        return tuple(_trapezoid_weights(a)[1:-1] for a in self.axes)

    def weights(self) -> Array:
        w = np.ones(1)
        for wi in self.axis_weights():
            w = np.multiply.outer(w, wi).ravel()
        return w

    def points(self) -> Array:
        mesh = np.meshgrid(*self.interior_axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])


def build_grid(spec: GridSpec, d: int, node_budget: int = NODE_BUDGET) -> Grid:
    if d >= 4:
        raise GridError("tensor grids are not supported for d >= 4; use the Monte Carlo path")
    if not 0 < spec.delta_cut <= 1e-2:
        raise GridError("delta_cut must lie in (0, 1e-2]")
    if spec.delta_cut < Q_FLOOR:
        raise GridError(f"delta_cut below q_floor = {Q_FLOOR:g}")
    if spec.R_cut < 10:
        raise GridError("R_cut must be >= 10")
    if spec.nodes < 64:
        raise GridError("at least 64 nodes per coordinate are required")
    if not 1.02 <= spec.ratio <= 1.5:
        # refined ladders take square roots of the ratio; allow them down to 1 + 1e-6
        if not (1.0 < spec.ratio < 1.02 and spec.nodes > 64):
            raise GridError("grading ratio must lie in [1.02, 1.5]")
    total = spec.nodes**d
    if total > node_budget:
        raise GridError(f"grid needs {total} nodes, budget is {node_budget}")
    axis = graded_axis(spec.delta_cut, spec.R_cut, spec.nodes, spec.ratio)
    return Grid(d=d, axes=tuple(axis.copy() for _ in range(d)), spec=spec)


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------


def _axis_stencils(x: Array) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Interior ``D2`` and ``D1`` on one axis with Dirichlet ends eliminated."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    n = hm.size
    lo2 = 2.0 / (hm * (hm + hp))
    di2 = -2.0 / (hm * hp)
    up2 = 2.0 / (hp * (hm + hp))
    D2 = sp.diags([lo2[1:], di2, up2[:-1]], [-1, 0, 1], shape=(n, n), format="csr")
    inv = 1.0 / (hm + hp)
    D1 = sp.diags([-inv[1:], inv[:-1]], [-1, 1], shape=(n, n), format="csr")
    return D2, D1


def _kron_axis(mat: sp.spmatrix, i: int, shape: Sequence[int]) -> sp.csr_matrix:
    out = sp.identity(1, format="csr")
    for j, nj in enumerate(shape):
        out = sp.kron(out, mat if j == i else sp.identity(nj, format="csr"), format="csr")
    return out


@dataclass
class DiscretizedOperator:
    """Sparse matrix of ``L_beta0`` (forward) or its adjoint on interior nodes."""

    grid: Grid
    matrix: sp.csr_matrix
    flavor: str
    transform: TransformedOperator
    beta0: float
    coefficients: dict = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def discretize(
    t: TransformedOperator,
    grid: Grid,
    flavor: str = "forward",
    fitting: bool = True,
    require_certificate: bool = True,
) -> DiscretizedOperator:
    """Assemble the forward operator or the divergence-form adjoint.

    ``fitting`` enables Il'in exponential fitting (effective diffusion
    ``Pe coth Pe``) on axes and nodes where the cell Peclet number
    ``|c_i| (h_- + h_+)/2`` exceeds 2.
    """
    if flavor not in ("forward", "adjoint"):
        raise SpectralError("flavor must be 'forward' or 'adjoint'")
    if require_certificate and t.certificate is None:
        raise SpectralError("transform has no certificate; run certify_beta0 first")
    if grid.d != t.d:
        raise SpectralError("grid dimension does not match the model")
    x = grid.points()
    if np.any(x > t.x_extent):
        raise GridError(f"R_cut exceeds the xi table extent {t.x_extent.min():g}")
    co = t.operator_coefficients(x)
    c, e = co["c"], co["e"]
    shape = grid.shape
    W = grid.weights()
    mats = []
    rho_all = np.ones_like(c)
    for i, ax in enumerate(grid.axes):
        D2, D1 = _axis_stencils(ax)
        K2 = _kron_axis(D2, i, shape)
        K1 = _kron_axis(D1, i, shape)
        cell = (ax[2:] - ax[:-2]) / 2
        h = np.broadcast_to(
            cell.reshape([-1 if j == i else 1 for j in range(grid.d)]), shape
        ).ravel()
        pe = np.abs(c[:, i]) * h
        rho = np.ones_like(pe)
        if fitting:
            hot = pe > PECLET_SWITCH
            rho[hot] = pe[hot] / np.tanh(pe[hot])
        rho_all[:, i] = rho
        mats.append((K2, K1, rho, c[:, i]))
    if flavor == "forward":
        A = sum(0.5 * sp.diags(rho) @ K2 - sp.diags(ci) @ K1 for K2, K1, rho, ci in mats)
    else:
        A = sum(0.5 * K2 @ sp.diags(rho) + K1 @ sp.diags(ci) for K2, K1, rho, ci in mats)
    A = (A - sp.diags(e)).tocsr()
    A.sort_indices()
    co["rho"] = rho_all
    diag = {"fitted_nodes": int(np.sum(np.any(rho_all > 1, axis=1))), "nnz": int(A.nnz)}
    return DiscretizedOperator(grid, A, flavor, t, t.beta, co, diag)


def adjoint_consistency(fwd: DiscretizedOperator, adj: DiscretizedOperator) -> dict:
    """Relative Frobenius distances ``|A* - A^T|`` and ``|A* - W^{-1} A^T W|``."""
    W = fwd.grid.weights()
    A, As = fwd.matrix, adj.matrix
    ref = spla.norm(A)
    sim = sp.diags(1 / W) @ A.T @ sp.diags(W)
    return {
        "transpose_discrepancy": float(spla.norm(As - A.T) / ref),
        "similarity_discrepancy": float(spla.norm(As - sim) / ref),
    }


# ---------------------------------------------------------------------------
# Eigen-solvers
# ---------------------------------------------------------------------------


def _lu(M: sp.spmatrix):
    try:
        return spla.splu(M.tocsc())
    except RuntimeError as exc:  # singular factor
        raise SpectralError(f"sparse factorization failed: {exc}") from exc


def _residual(A: sp.spmatrix, lam, v: Array) -> float:
    return float(np.linalg.norm(-(A @ v) - lam * v) / np.linalg.norm(v))


def principal_eigen(op: DiscretizedOperator, tol: float = DEFAULT_TOL, maxiter: int = 50) -> tuple[float, Array, float]:
    """Eigenvalue of ``-A`` with smallest real part and its positive eigenvector.

    Shift-invert Arnoldi at 0 supplies the first approximation; inverse
    iteration with the converged shift polishes it until the residual
    ``||(-A - lambda1) v|| / ||v||`` is at most ``tol``.
    Returns ``(lambda1, v, residual)`` with ``max v = 1``.
    """
    if tol < 1e-12:
        raise SpectralError("tol must be >= 1e-12")
    A = op.matrix
    n = A.shape[0]
    lu = _lu(-A)
    opinv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    k = min(3, n - 2)
    try:
        vals, vecs = spla.eigs(-A, k=k, sigma=0.0, OPinv=opinv, which="LM", tol=1e-12, v0=np.ones(n))
    except spla.ArpackNoConvergence as exc:
        raise SpectralError(f"shift-invert iteration stagnated: {exc}") from exc
    j = int(np.argmin(vals.real))
    lam = float(vals[j].real)
    v = np.abs(vecs[:, j].real)
    # polish: inverse iteration on a slightly shifted operator keeps the solve well posed
    shift = lam * (1 - 1e-6) if lam != 0 else -1e-8
    lu2 = _lu(-A - shift * sp.identity(n, format="csc"))
    res = _residual(A, lam, v)
    for _ in range(maxiter):
        if res <= tol:
            break
        w = lu2.solve(v)
        v = w / np.linalg.norm(w)
        lam = float(v @ (-(A @ v)) / (v @ v))
        res = _residual(A, lam, v)
    if res > tol:
        raise SpectralError(f"eigen-residual {res:.3g} above tol {tol:.3g} after {maxiter} polishing steps")
    if abs(v.max()) < abs(v.min()):
        v = -v
    v = v / v.max()
    if np.any(v <= 0):
        raise SpectralError(
            f"principal eigenvector has {int(np.sum(v <= 0))} non-positive entries; refine the grid"
        )
    return lam, v, res


def _start_vector(n: int) -> Array:
    # fixed Arnoldi start so repeated solves are bit-identical
    return np.random.default_rng(0).standard_normal(n)


def subdominant_spectrum(op: DiscretizedOperator, k: int = 4, lambda1: float | None = None) -> tuple[list[complex], list[float]]:
    """``k`` eigenvalues of ``-A`` with smallest real part beyond ``lambda1``.

    Conjugate partners are always returned together, so the list may hold
    ``k + 1`` values. Also returns the relative residual of each value.
    """
    A = op.matrix
    n = A.shape[0]
    m = k + 4
    if m >= n - 1:
        raise SpectralError(f"k={k} exceeds the Krylov capacity of a {n}-node operator")
    lu = _lu(-A)
    opinv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    try:
        vals, vecs = spla.eigs(-A, k=m, sigma=0.0, OPinv=opinv, which="LM", tol=1e-12,
                               ncv=min(n - 1, max(2 * m + 1, 30)), v0=_start_vector(n))
    except spla.ArpackNoConvergence as exc:
        raise SpectralError(f"subdominant iteration did not converge: {exc}") from exc
    order = np.argsort(vals.real, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    if lambda1 is None:
        lambda1 = float(vals[0].real)
    scale = max(1.0, abs(lambda1))
    keep = vals.real > lambda1 + 1e-9 * scale
    vals, vecs = vals[keep], vecs[:, keep]
    out: list[complex] = []
    res: list[float] = []
    for lam, v in zip(vals, vecs.T):
        if len(out) >= k and not any(abs(lam - np.conj(o)) < 1e-8 * scale and abs(lam.imag) > 0 for o in out):
            break
        if abs(lam.imag) <= 1e-8 * scale:
            lam = complex(lam.real, 0.0)
        out.append(complex(lam))
        res.append(float(np.linalg.norm(-(A @ v) - lam * v) / np.linalg.norm(v)))
    # complete conjugate pairs
    for lam in list(out):
        if lam.imag != 0 and not any(abs(o - lam.conjugate()) < 1e-8 * scale for o in out):
            out.append(lam.conjugate())
            res.append(res[out.index(lam)])
    if not out:
        raise SpectralError("no eigenvalue beyond lambda1 was found")
    return out, res


# ---------------------------------------------------------------------------
# QSD assembly and time stepping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QSDAssembly:
    qsd_x: Array
    qsd_z: Array
    z_axes: tuple[Array, ...]
    normalization: float
    mass_x_raw: float
    mass_z_raw: float


def _tensor(vals: Sequence[Array]) -> Array:
    out = np.ones(1)
    for v in vals:
        out = np.multiply.outer(out, v).ravel()
    return out


def assemble_qsd(t: TransformedOperator, v1: Array, grid: Grid, coefficients: dict | None = None) -> QSDAssembly:
    """QSD densities in ``x`` and ``z`` from the forward eigenvector.

    ``qsd_x = v1 exp(-Q/2 - beta0 U)`` normalized by the trapezoid rule; the
    ``z`` density is ``qsd_x(xi(z)) prod_i a_i(z_i)^(-1/2)`` on the image
    nodes, normalized by the trapezoid rule in ``z``.
    """
    if np.any(v1 <= 0):
        raise SpectralError("v1 must be strictly positive")
    co = coefficients if coefficients is not None else t.operator_coefficients(grid.points())
    conj = np.exp(-co["Q"] / 2 - t.beta * co["U"])
    dens = v1 * conj
    W = grid.weights()
    norm = float(W @ dens)
    qsd_x = dens / norm
    mass_x = float(W @ qsd_x)
    z_axes = tuple(t.xi_tables[i].inverse(ax) for i, ax in enumerate(grid.axes))
    inv_sqrt_a = np.prod(1.0 / co["sqrt_a"], axis=1)
    qz = qsd_x * inv_sqrt_a
    Wz = _tensor([_trapezoid_weights(za)[1:-1] for za in z_axes])
    mass_z = float(Wz @ qz)
    return QSDAssembly(qsd_x / mass_x, qz / mass_z, z_axes, norm, mass_x, mass_z)


@dataclass(frozen=True)
class SemigroupResult:
    values: Array
    steps: int
    scheme: str
    dt: float


def semigroup_apply(
    op: DiscretizedOperator,
    f_tilde: Array,
    t_final: float,
    dt: float = 1e-2,
    scheme: str = "crank-nicolson",
    record: Sequence[float] = (),
) -> SemigroupResult | dict:
    """Integrate ``du/dt = A u`` from ``u(0) = f_tilde`` to ``t_final``.

    Crank-Nicolson starts with four implicit-Euler half steps (Rannacher
    smoothing). When ``record`` lists intermediate times, a mapping from each
    recorded time to a :class:`SemigroupResult` is returned instead.
    """
    if not dt > 0:
        raise SpectralError("dt must be positive")
    if t_final < 0:
        raise SpectralError("t_final must be non-negative")
    scheme = scheme.lower().replace("_", "-")
    if scheme not in ("implicit-euler", "crank-nicolson"):
        raise SpectralError("scheme must be implicit-Euler or Crank-Nicolson")
    A = op.matrix.tocsc()
    n = A.shape[0]
    I = sp.identity(n, format="csc")
    targets = sorted(set([float(t_final), *map(float, record)]))
    u = np.asarray(f_tilde, dtype=float).copy()
    now = 0.0
    steps = 0
    out: dict[float, SemigroupResult] = {}
    cache: dict[tuple, object] = {}

    def solver(kind: str, h: float):
        key = (kind, round(h, 15))
        if key not in cache:
            M = I - h * A if kind == "ie" else I - 0.5 * h * A
            cache[key] = _lu(M)
        return cache[key]

    startup = 4 if scheme == "crank-nicolson" else 0
    for tgt in targets:
        while now < tgt - 1e-14 * max(1.0, tgt):
            h = min(dt, tgt - now)
            if startup > 0:
                hh = h / 2
                lu = solver("ie", hh)
                u = lu.solve(u)
                u = lu.solve(u)
                startup -= 2
            elif scheme == "implicit-euler":
                u = solver("ie", h).solve(u)
            else:
                u = solver("cn", h).solve(u + 0.5 * h * (A @ u))
            now += h
            steps += 1
        out[tgt] = SemigroupResult(u.copy(), steps, scheme, dt)
    if record:
        return out
    return out[float(t_final)]


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralResult:
    lambda1: float
    sub_eigs: tuple[complex, ...]
    v1: Array
    v1_star: Array
    qsd_x: Array
    qsd_z: Array
    z_axes: tuple[Array, ...]
    gap: float
    residuals: dict
    normalization: float
    grid: Grid
    lambda1_adjoint: float
    diagnostics: dict

    def summary(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "lambda1_adjoint": self.lambda1_adjoint,
            "gap": self.gap,
            "sub_eigs": [[z.real, z.imag] for z in self.sub_eigs],
            "residuals": self.residuals,
            "normalization": self.normalization,
            "grid": {"d": self.grid.d, "nodes": self.grid.spec.nodes, "delta_cut": self.grid.spec.delta_cut,
                     "R_cut": self.grid.spec.R_cut, "ratio": self.grid.spec.ratio},
            "diagnostics": self.diagnostics,
        }


def solve_spectrum(
    t: TransformedOperator,
    spec: GridSpec,
    k_sub: int = 4,
    tol: float = DEFAULT_TOL,
    fitting: bool = True,
) -> SpectralResult:
    """Principal pair (forward and adjoint), subdominant values and the QSD."""
    grid = build_grid(spec, t.d)
    fwd = discretize(t, grid, "forward", fitting=fitting)
    adj = discretize(t, grid, "adjoint", fitting=fitting)
    lam, v1, r1 = principal_eigen(fwd, tol)
    lam_s, v1s, r1s = principal_eigen(adj, tol)
    sub, rsub = subdominant_spectrum(fwd, k_sub, lam) if k_sub > 0 else ([], [])
    qa = assemble_qsd(t, v1, grid, fwd.coefficients)
    W = grid.weights()
    conj = np.exp(-fwd.coefficients["Q"] / 2 - t.beta * fwd.coefficients["U"])
    target = float(W @ (v1 * conj))
    v1s = v1s * (target / float(W @ (v1 * v1s)))
    gap = (min(z.real for z in sub) - lam) if sub else math.nan
    diagnostics = dict(fwd.diagnostics)
    diagnostics.update(adjoint_consistency(fwd, adj))
    diagnostics["mass_x_raw"] = qa.mass_x_raw
    diagnostics["mass_z_raw"] = qa.mass_z_raw
    return SpectralResult(
        lambda1=lam,
        sub_eigs=tuple(sub),
        v1=v1,
        v1_star=v1s,
        qsd_x=qa.qsd_x,
        qsd_z=qa.qsd_z,
        z_axes=qa.z_axes,
        gap=gap,
        residuals={"forward": r1, "adjoint": r1s, "subdominant": rsub},
        normalization=qa.normalization,
        grid=grid,
        lambda1_adjoint=lam_s,
        diagnostics=diagnostics,
    )


def aitken(values: Sequence[float]) -> float:
    """Aitken delta-squared extrapolation of the last three values."""
    a, b, c = values[-3:]
    den = (c - b) - (b - a)
    if den == 0:
        return float(c)
    return float(c - (c - b) ** 2 / den)


def refinement_study(
    t: TransformedOperator,
    ladder: Sequence[GridSpec],
    quantity: Callable[[SpectralResult], float] | str = "lambda1",
    rich_tol: float = RICH_TOL,
    **solve_kw,
) -> dict:
    """Recompute a scalar along a grid ladder and extrapolate."""
    if isinstance(quantity, str):
        name = quantity
        quantity = {"lambda1": lambda r: r.lambda1, "gap": lambda r: r.gap}[name]
    else:
        name = getattr(quantity, "__name__", "custom")
    values = []
    for spec in ladder:
        values.append(float(quantity(solve_spectrum(t, spec, **solve_kw))))
    changes = [abs(values[k + 1] - values[k]) for k in range(len(values) - 1)]
    converged = bool(changes) and changes[-1] <= rich_tol * abs(values[-1])
    report = {
        "quantity": name,
        "values": values,
        "changes": changes,
        "monotone_changes": bool(all(changes[k + 1] <= changes[k] for k in range(len(changes) - 1))),
        "extrapolated": aitken(values) if len(values) >= 3 else None,
        "converged": converged,
        "rich_tol": rich_tol,
    }
    return report


def fokker_planck_x(t: TransformedOperator, x: Array, v: Array) -> Array:
    """Apply ``(1/2) v'' - ((p - q) v)'`` on a 1D interior grid.

    Built directly from the drift of ``X`` with the second-order non-uniform
    stencils, independently of the conjugated operator. ``v`` holds values at
    all nodes of ``x``; the result is returned on ``x[1:-1]``.
    """
    x = np.asarray(x, dtype=float)
    drift = t.x_drift(x).ravel()
    flux = drift * v
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    d2 = 2 * (hp * v[:-2] - (hm + hp) * v[1:-1] + hm * v[2:]) / (hm * hp * (hm + hp))
    d1 = (-hp**2 * flux[:-2] + (hp**2 - hm**2) * flux[1:-1] + hm**2 * flux[2:]) / (hm * hp * (hm + hp))
    return 0.5 * d2 - d1
