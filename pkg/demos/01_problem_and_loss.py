"""The attack problem: images, budgets, feasible boxes, and the target loss.

A targeted attack looks for an additive perturbation ``eta`` with
``||eta||_inf <= eps`` that keeps the image inside its pixel range and drives
the classifier's argmax to a chosen class.  This script walks through the
data model and the loss every attack in this package minimizes.
"""

import numpy as np

from dfoattack import (
    FunctionOracle,
    InputTensor,
    Perturbation,
    evaluate_loss,
    feasible_box,
    loss,
)

rng = np.random.default_rng(0)

# Images are flat vectors with explicit (height, width, channels) shape and
# pixel bounds; the (-1/2, 1/2) normalization is the default.
X = InputTensor.from_array(rng.uniform(-0.5, 0.5, size=(4, 4, 3)))
print(f"image: shape {X.shape}, n = {X.n}, pixels in [{X.lower}, {X.upper}]")

# The loss compares the target logit against everything else:
#   loss = logsumexp(logits[j != t]) - logits[t]
# Negative values mean the target class already wins the argmax.
print("\nloss([0, 0], t=0)      =", loss([0.0, 0.0], 0))
print("loss([2, 0], t=1)      =", loss([2.0, 0.0], 1))
print("loss([1, 1, 1], t=2)   =", loss([1.0, 1.0, 1.0], 2), "(= ln 2)")
print("loss([0, 0, 5], t=2)   =", loss([0.0, 0.0, 5.0], 2), "(target dominates)")

# The feasible box tells an attack how far each pixel may still move: the
# intersection of the remaining l-inf budget and the image bounds.
eps = 0.1
eta = Perturbation.zero(X.n, eps)
box = feasible_box(X, eta)
print(f"\nfresh perturbation, eps = {eps}:")
print("  widest step interval :", box.lower.min(), "..", box.upper.max())
print("  tightest (pixels near a bound):", box.lower.max(), "..", box.upper.min())

# Spend budget upward on one pixel and the box closes on that side.
spent = np.zeros(X.n)
spent[0] = min(eps, 0.5 - X.data[0])
box2 = feasible_box(X, Perturbation(values=spent, epsilon_inf=eps))
print(f"  after pushing pixel 0 up by {spent[0]:.3f}: interval "
      f"[{box2.lower[0]:.3f}, {box2.upper[0]:.3f}]")

# Oracles map image vectors to logits and count every evaluation.
weights = rng.normal(size=(3, X.n)) / np.sqrt(X.n)
oracle = FunctionOracle(lambda x: weights @ x)
value, predicted = evaluate_loss(oracle, X, eta, t=2)
print(f"\none oracle call: loss = {value:.4f}, predicted class = {predicted}, "
      f"query_count = {oracle.query_count}")
