"""Subcritical Feller diffusion dZ = -Z dt + sqrt(2Z) dW.

The principal eigenvalue is 1, the next ones are 2, 3, ..., and the QSD is
the unit exponential. This script compares the grid solver with those values
and with the closed-form survival curve of the branching process.
"""

from __future__ import annotations

import numpy as np

from qsdlab.models import zoo_instantiate
from qsdlab.montecarlo import simulate_paths, survival_rate_fit
from qsdlab.spectral import GridSpec, solve_spectrum
from qsdlab.transform import build_transform, certify_beta0


def main() -> None:
    model = zoo_instantiate("feller_linear", {"r": -1.0, "gamma": 2.0})
    op = build_transform(model)
    cert = certify_beta0(op)
    print(f"certificate: beta0={cert.beta0:g}  M={cert.M:.3g}  C*={cert.C_star:.3g}")

    spec = GridSpec(delta_cut=1e-3, R_cut=30.0, nodes=256, ratio=1.1)
    for level in range(3):
        res = solve_spectrum(op, spec, k_sub=4)
        sub = sorted(z.real for z in res.sub_eigs)
        print(f"{spec.nodes:5d} nodes  lambda1={res.lambda1:.8f}  next={np.round(sub, 4).tolist()}")
        spec = spec.refined()

    z = res.z_axes[0][1:-1]
    for zq in (0.1, 1.0, 3.0):
        k = int(np.argmin(np.abs(z - zq)))
        print(f"  qsd_z({z[k]:.3f}) = {res.qsd_z[k]:.5f}   exp(-z) = {np.exp(-z[k]):.5f}")

    ens = simulate_paths(model, [1.0], dt=1e-3, t_final=6.0, n_particles=20_000, seed=0, checkpoints=61)
    t = ens.checkpoint_times[::10]
    exact = 1 - np.exp(-1 / np.expm1(np.maximum(t, 1e-12)))
    for ti, s, e in zip(t, ens.survival()[::10], exact):
        print(f"  t={ti:4.1f}  MC survival={s:.4f}  closed form={e:.4f}")
    print("survival rate on the default window:", survival_rate_fit(ens))


if __name__ == "__main__":
    main()
