from __future__ import annotations

import numpy as np
import pytest
from conftest import FELLER, LV2, certified

from qsdlab.errors import GridError, SpectralError
from qsdlab.models import zoo_instantiate
from qsdlab.spectral import (
    GridSpec,
    adjoint_consistency,
    aitken,
    build_grid,
    discretize,
    graded_axis,
    principal_eigen,
    refinement_study,
    semigroup_apply,
    solve_spectrum,
)
from qsdlab.transform import build_transform

FELLER_GRID = GridSpec(delta_cut=1e-3, R_cut=30.0, nodes=512, ratio=1.1)


@pytest.fixture(scope="module")
def feller_result(feller_op):
    return solve_spectrum(feller_op, FELLER_GRID, k_sub=4)


def test_graded_axis_shape():
    ax = graded_axis(1e-3, 20.0, 256, 1.1)
    h = np.diff(ax)
    assert ax[0] == 1e-3 and ax[-1] == pytest.approx(20.0) and ax.size == 256
    assert ax[1] == pytest.approx(1.1e-3)
    assert np.all(h > 0)
    ratios = h[1:] / h[:-1]
    assert ratios.max() <= 1.1 + 1e-9


@pytest.mark.parametrize(
    "spec, d",
    [
        (GridSpec(nodes=16), 1),
        (GridSpec(delta_cut=0.5), 1),
        (GridSpec(R_cut=5.0), 1),
        (GridSpec(ratio=2.0), 1),
        (GridSpec(nodes=64), 4),
        (GridSpec(nodes=2048), 2),
        (GridSpec(nodes=64, ratio=1.02, R_cut=10.0), 1),
    ],
)
def test_grid_validation(spec, d):
    with pytest.raises(GridError):
        build_grid(spec, d)


def test_refined_spec():
    s = FELLER_GRID.refined()
    assert s.nodes == 1023 and s.ratio == pytest.approx(np.sqrt(1.1))


def test_discretize_requires_certificate():
    op = build_transform(zoo_instantiate(*FELLER))
    with pytest.raises(SpectralError):
        discretize(op, build_grid(GridSpec(nodes=64, ratio=1.3), 1))


def test_adjoint_is_weighted_transpose(feller_op):
    grid = build_grid(GridSpec(nodes=128, R_cut=20.0), 1)
    fwd = discretize(feller_op, grid, "forward")
    adj = discretize(feller_op, grid, "adjoint")
    assert adjoint_consistency(fwd, adj)["similarity_discrepancy"] < 1e-13


def test_feller_principal_pair(feller_result):
    res = feller_result
    assert res.lambda1 == pytest.approx(1.0, abs=1e-3)
    assert res.lambda1_adjoint == pytest.approx(res.lambda1, rel=1e-9)
    assert res.residuals["forward"] < 1e-8
    assert np.all(res.v1 > 0) and res.v1.max() == pytest.approx(1.0)


def test_feller_subdominant_ladder(feller_result):
    # eigen-ansatz: lambda_n = n for r = -1, gamma = 2
    vals = sorted(z.real for z in feller_result.sub_eigs)
    assert np.allclose(vals, [2, 3, 4, 5], rtol=5e-3)
    assert feller_result.gap == pytest.approx(1.0, rel=5e-3)


def test_feller_qsd_is_exponential(feller_result):
    res = feller_result
    z = res.z_axes[0][1:-1]
    w = np.zeros_like(res.z_axes[0])
    dz = np.diff(res.z_axes[0])
    w[:-1] += dz / 2
    w[1:] += dz / 2
    l1 = float(np.sum(w[1:-1] * np.abs(res.qsd_z - np.exp(-z))))
    assert l1 < 0.02
    assert np.sum(w[1:-1] * res.qsd_z) == pytest.approx(1.0, abs=1e-12)


def test_eigenfunction_normalization(feller_result, feller_op):
    res = feller_result
    W = res.grid.weights()
    co = feller_op.operator_coefficients(res.grid.points())
    conj = np.exp(-co["Q"] / 2 - feller_op.beta * co["U"])
    assert W @ (res.v1 * res.v1_star) == pytest.approx(W @ (res.v1 * conj), rel=1e-12)


def test_refinement_converges(feller_op):
    ladder = [GridSpec(1e-3, 30.0, 128, 1.1), GridSpec(1e-3, 30.0, 255, 1.1**0.5),
              GridSpec(1e-3, 30.0, 509, 1.1**0.25)]
    rep = refinement_study(feller_op, ladder, k_sub=0)
    assert rep["converged"] and rep["monotone_changes"]
    assert abs(rep["extrapolated"] - 1.0) < abs(rep["values"][-1] - 1.0) + 1e-6


def test_aitken_geometric():
    vals = [1 + 0.5**k for k in range(3, 6)]
    assert aitken(vals) == pytest.approx(1.0, abs=1e-12)


def test_semigroup_on_principal_eigenvector(feller_op):
    grid = build_grid(GridSpec(nodes=256, R_cut=30.0), 1)
    adj = discretize(feller_op, grid, "adjoint")
    lam, v, _ = principal_eigen(adj)
    for scheme, tol in (("crank-nicolson", 1e-5), ("implicit-euler", 5e-3)):
        out = semigroup_apply(adj, v, 1.0, dt=1e-3, scheme=scheme)
        assert np.allclose(out.values, np.exp(-lam) * v, rtol=0, atol=tol)


def test_semigroup_records_times(feller_op):
    grid = build_grid(GridSpec(nodes=64, R_cut=20.0, ratio=1.3), 1)
    adj = discretize(feller_op, grid, "adjoint")
    out = semigroup_apply(adj, np.ones(grid.n_interior), 0.5, dt=0.01, record=[0.1, 0.25])
    assert sorted(out) == [0.1, 0.25, 0.5]
    assert out[0.5].steps == 50


@pytest.mark.slow
def test_lotka_volterra_2d_spectrum():
    op = certified(LV2, revalidate=0)
    res = solve_spectrum(op, GridSpec(1e-3, 10.0, 128, 1.1), k_sub=2)
    assert res.lambda1 > 0 and res.gap > 0
    assert np.all(res.qsd_x > 0)
