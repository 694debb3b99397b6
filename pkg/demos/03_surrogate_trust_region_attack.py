"""The model-based attack: linear surrogates minimized inside trust regions.

Each batch interpolates a linear model of the loss through b + 1 oracle
samples, then repeatedly steps to the model minimizer inside the feasible box
cut with a trust region whose radius adapts to how well the model predicted
the actual loss change.  Batches sweep the current level's coordinates in
variance order; levels refine 12 -> 48 -> ... -> n.
"""

import numpy as np

from dfoattack import BobyqaConfig, bobyqa_attack
from dfoattack.core import FeasibleBox
from dfoattack.bobyqa import fit_linear_model, solve_trust_region_step
from dfoattack.targets import LinearSoftmaxModel, ModelOracle
from dfoattack.core import InputTensor

rng = np.random.default_rng(7)

# --- the two primitives ------------------------------------------------------

# Interpolation: with b + 1 points the linear model is unique.
points = np.array([[0.0, 0.0], [0.05, 0.0], [0.0, -0.02]])
losses = np.array([1.0, 1.004, 1.003])
model = fit_linear_model(points, losses)
print(f"fitted surrogate: intercept {model.intercept:.3f}, gradient {model.gradient}")

# The trust-region step is the exact box-constrained minimizer of that model.
box = FeasibleBox(lower=-0.1 * np.ones(2), upper=0.1 * np.ones(2))
step = solve_trust_region_step(model, box, radius=0.05)
print(f"trust-region step with radius 0.05: {step}")

# --- a full attack -----------------------------------------------------------

shape = (8, 8, 3)
n = 8 * 8 * 3
classes = 10
target_model = LinearSoftmaxModel(
    weights=rng.normal(size=(classes, n)) / np.sqrt(n),
    biases=0.1 * rng.normal(size=classes),
    shape=shape,
)
X = InputTensor.from_array(rng.uniform(-0.5, 0.5, size=shape))
clean_class = int(np.argmax(target_model.predict(X.data)))
target = (clean_class + 3) % classes
print(f"\nclean prediction: {clean_class}, attacking toward {target}")

oracle = ModelOracle(target_model)
config = BobyqaConfig(epsilon=0.1, max_queries=3000, batch_size=25, kappa=50)
result = bobyqa_attack(oracle, X, target, config, rng=0)

print(f"success: {result.success} after {result.queries} queries "
      f"(level {result.level}, final loss {result.final_loss:.4f})")
print(f"perturbation: ||eta||_inf = {np.abs(result.eta).max():.4f} <= {config.epsilon}")
adv_class = int(np.argmax(target_model.predict(X.data + result.eta)))
print(f"adversarial prediction: {adv_class}")
