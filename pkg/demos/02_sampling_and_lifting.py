"""Dimensionality reduction: variance-ordered sub-sampling and block liftings.

High-dimensional searches are tamed two ways: batches of a few coordinates at
a time (sub-sampling), and coarse grids whose variables each own a block of
pixels (hierarchical lifting).  Variance ordering prioritizes high-contrast
regions, which empirically carry the most loss sensitivity.
"""

import numpy as np

from dfoattack import InputTensor, apply_lifting, generate_lifting, neighborhood_variance
from dfoattack.lifting import HierarchySchedule, block_variance_order, random_lifting
from dfoattack.sampling import descending_order, generate_sampling_matrix

# A 6x6 image with a bright 2x2 patch: the patch edges are high-contrast.
arr = np.zeros((6, 6, 1))
arr[2:4, 2:4, 0] = 1.0
X = InputTensor.from_array(arr, lower=-0.5, upper=1.5)

variance = neighborhood_variance(X).reshape(6, 6)
print("neighborhood variance map (rounded):")
print(np.round(variance, 3))

order = descending_order(variance.ravel())
print("\nmost important pixels first:", order[:8], "...")

# Batches slice that order: batch j covers positions [j*b, (j+1)*b).
for j in range(3):
    sel = generate_sampling_matrix(X, X.n, 12, j, "variance")
    print(f"variance batch {j}: {sel.indices[:6]}... ({sel.size} coords)")

# Block liftings assign each pixel to one coarse variable.
L = generate_lifting(9, (6, 6, 1))
print(f"\nblock lifting: {L.coarse_dim} blocks on grid {L.grid}")
print("assignment:")
print(L.assignment.reshape(6, 6))

coarse = np.zeros(L.coarse_dim)
coarse[4] = 0.25  # perturb only the center block
lifted = apply_lifting(L, coarse)
print("\nlifting a single coarse variable perturbs its whole block:")
print(lifted.reshape(6, 6))

print("\nblock-level variance (ranks blocks by neighboring block contrast):")
print(np.round(block_variance_order(X, L), 4))

# Random liftings group arbitrary pixels instead of spatial blocks.
R = random_lifting(4, X.n, seed=1)
print("\nrandom lifting group sizes:", np.bincount(R.assignment))

# The hierarchy starts at 12 coarse variables and quadruples per level.
for n in (3072, 768, 108):
    print(f"schedule for n={n}:", HierarchySchedule.from_rule(n).levels)
