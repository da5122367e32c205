"""
Shrinking the dictionary with the entropy penalty
=================================================

Start from 256 atoms and let the entropy term concentrate assignments;
atoms nobody selects are removed. Detection quality barely moves while
the dictionary shrinks to a handful of atoms.
"""

from nnkood import TrainConfig, auroc, fit, generate_synthetic, score

ds = generate_synthetic(3, 1, 100, 8, 6.0, 1.0, seed=1, n_train=500, n_test_id=300, n_test_ood=300)

for lam in (0.0, 0.01, 0.05, 0.1):
    model = fit("ec_nnk", ds.train_id, config=TrainConfig(m_init=256, lam=lam, seed=1))
    n = model.payload["atoms"].shape[0]
    a = auroc(score(model, ds.test), ds.test_is_ood)
    print(f"lambda={lam:<5} atoms={n:4d}  AUROC={a:.4f}")

# the per-epoch trace shows when atoms disappear; the last two epochs run
# without the penalty to polish the surviving atoms
from nnkood import train_nnk_means
d = train_nnk_means(ds.train_id, TrainConfig(m_init=256, lam=0.05, seed=1))
for t in d.trace:
    print(t)
