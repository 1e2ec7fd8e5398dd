# Trees and tree wavelets on a matrix with hidden block structure.
import numpy as np

from eows.hwt import (basis_cost, best_basis_2d, ghwt_analyze, haar_basis_2d, inverse_2d, layout_of,
                      tensor_analyze, transform_2d)
from eows.treegeo import PartitionTree, questionnaire

rng = np.random.default_rng(1)

# Walsh functions on a binary tree of 8 leaves: tag = number of sign changes
lay = layout_of(PartitionTree.uniform(8))
W = lay.operator(0) * np.sqrt(8)
for slot in np.argsort(lay.tags[0]):
    print(lay.tags[0][slot], np.round(W[slot]).astype(int))

# a 2x3 block matrix with shuffled rows and columns
rows, cols = rng.permutation(40), rng.permutation(36)
blocks = rng.standard_normal((2, 3)) * 3
m = np.empty((40, 36))
m[np.ix_(rows, cols)] = np.kron(blocks, np.ones((20, 12)))
m += 0.1 * rng.standard_normal(m.shape)

tr, tc = questionnaire(m, 3)
print("row tree depth", tr.depth, "balance", tr.balance())
print("first row split recovers the blocks:",
      {frozenset(f.members) for f in tr.levels[1]} == {frozenset(rows[:20]), frozenset(rows[20:])})

# 1-D: energy per level of the GHWT dictionary for the first column
d = ghwt_analyze(m[:, 0], tr)
print("l1 norm by level", [round(float(np.abs(c).sum()), 2) for c in d.coeffs])

# 2-D best basis against the Haar tiling
table = tensor_analyze(m, tr, tc)
best = best_basis_2d(table, ell=1.0)
haar = haar_basis_2d(layout_of(tr), layout_of(tc))
print("best basis cost", round(best.cost, 2), "haar cost", round(basis_cost(transform_2d(m, haar)), 2),
      "family", best.family)
cm = transform_2d(m, best)
print("round trip error", np.max(np.abs(inverse_2d(cm) - m)))
big = np.sort(np.abs(cm.flat()))[::-1]
print("coefficients holding 99% of the energy:", int(np.searchsorted(np.cumsum(big ** 2) / cm.energy(), 0.99)) + 1,
      "of", big.size)
