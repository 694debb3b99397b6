"""All five attacks on the same instances, compared by query-budget CDFs.

The toolkit's headline output: for each attack, the cumulative fraction of
attacks that succeeded within q queries.  Vertex-restricted searches (square,
parsimonious) and the surrogate attack typically dominate at desk scale; the
genetic and Frank-Wolfe baselines spend more queries per unit of progress.
"""

import numpy as np

from dfoattack import (
    BaselineConfig,
    BobyqaConfig,
    bobyqa_attack,
    frank_wolfe_attack,
    gen_attack,
    parsimonious_attack,
    square_attack,
)
from dfoattack.harness import AttackRecord, compute_cdf
from dfoattack.targets import LinearSoftmaxModel, ModelOracle
from dfoattack.core import InputTensor

rng = np.random.default_rng(11)
shape, classes, eps, budget = (8, 8, 3), 10, 0.06, 2000
n = shape[0] * shape[1] * shape[2]

instances = []
for _ in range(6):
    model = LinearSoftmaxModel(
        weights=rng.normal(size=(classes, n)) / np.sqrt(n),
        biases=0.1 * rng.normal(size=classes),
        shape=shape,
    )
    X = InputTensor.from_array(rng.uniform(-0.5, 0.5, size=shape))
    clean = int(np.argmax(model.predict(X.data)))
    instances.append((model, X, (clean + 1) % classes))

runners = {
    "bobyqa": lambda o, X, t: bobyqa_attack(
        o, X, t, BobyqaConfig(epsilon=eps, max_queries=budget), rng=0
    ),
    "square": lambda o, X, t: square_attack(
        o, X, t, BaselineConfig(algorithm="square", epsilon=eps, max_queries=budget), rng=0
    ),
    "parsimonious": lambda o, X, t: parsimonious_attack(
        o, X, t, BaselineConfig(algorithm="parsimonious", epsilon=eps, max_queries=budget), rng=0
    ),
    "genattack": lambda o, X, t: gen_attack(
        o, X, t, BaselineConfig(algorithm="genattack", epsilon=eps, max_queries=budget), rng=0
    ),
    "frankwolfe": lambda o, X, t: frank_wolfe_attack(
        o, X, t, BaselineConfig(algorithm="frankwolfe", epsilon=eps, max_queries=budget), rng=0
    ),
}

grid = [50, 100, 250, 500, 1000, 2000]
print(f"{len(instances)} instances, eps = {eps}, budget = {budget} queries\n")
print(f"{'attack':<14}" + "".join(f"q<={q:<7}" for q in grid))
for name, run in runners.items():
    records = []
    for i, (model, X, t) in enumerate(instances):
        result = run(ModelOracle(model), X, t)
        records.append(AttackRecord(
            image_id=i, original_class=-1, target_class=t, epsilon=eps,
            success=result.success, queries=result.queries, wall_time=0.0,
            final_loss=result.final_loss, attack=name, seed=0,
        ))
    cdf = compute_cdf(records, grid, attack=name, epsilon=eps)
    print(f"{name:<14}" + "".join(f"{f:<9.2f}" for f in cdf.fraction))
