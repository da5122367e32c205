"""
Non-negative kernel regression on a few atoms
=============================================

Codes a query on a small set of atoms, shows how the non-negativity
constraint drops redundant atoms, and how the entropy shift discounts
rarely used ones.
"""

import numpy as np

from nnkood import KernelSpec, ec_nnk_solve, gram, l2_normalize, nnk_solve

# two atoms at 60 degrees and a query close to the first one
K = np.array([[1.0, 0.5], [0.5, 1.0]])
print(nnk_solve(K, [0.8, 0.2]))   # second atom is redundant: theta = [0.8, 0]
print(nnk_solve(K, [0.8, 0.6]))   # both useful: theta = [2/3, 4/15]

# the reconstruction error 0.5 t'Kt - t'k is the OOD score: -0.5 is a perfect fit,
# 0 means no atom helped at all
rng = np.random.default_rng(0)
atoms = l2_normalize(rng.standard_normal((6, 4)))
for name, q in [("near atom 0", atoms[0] + 0.05 * rng.standard_normal(4)),
                ("random", rng.standard_normal(4))]:
    q = l2_normalize(q[None])[0]
    sims = gram(q[None], atoms, KernelSpec())[0]
    S = np.argsort(-sims)[:3]
    sol = nnk_solve(atoms[S] @ atoms[S].T, sims[S])
    print(f"{name:12s} atoms {S.tolist()} weights {np.round(sol.theta, 3)} error {sol.objective:.4f}")

# the entropy term shifts the linear part by lambda * log p; an atom that is
# rarely chosen (p = 0.01) loses weight against a popular duplicate
K2 = np.ones((2, 2)) + 1e-9 * np.eye(2)
for lam in (0.0, 0.02, 0.1):
    sol = ec_nnk_solve(K2, [0.9, 0.9], np.log([0.01, 0.99]), lam)
    print(f"lambda={lam:<5} theta={np.round(sol.theta, 4)}")
