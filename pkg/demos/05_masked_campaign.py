"""Fixed-pixel-count defense: attacks restricted to the top-variance mask.

Only the k pixels with the highest neighborhood variance may be perturbed.
Attacks receive the masked coordinate view directly (squares shrink to single
pixels, block search runs on the finest grid, the surrogate attack drops its
hierarchy), and a MaskedOracle double-checks that no query ever leaks outside
the mask.  The campaign runs through the harness and emits records, CDF
curves, and SVG plots.
"""

from pathlib import Path

import numpy as np

from dfoattack.harness import ExperimentConfig, cdfs_from_records, emit_outputs, run_experiment
from dfoattack.targets import LinearSoftmaxModel, save_model, variance_mask
from dfoattack.core import InputTensor

rng = np.random.default_rng(3)
out_root = Path(__file__).parent / "output" / "masked_campaign"
out_root.mkdir(parents=True, exist_ok=True)

shape, classes, k = (16, 16, 3), 8, 100
n = shape[0] * shape[1] * shape[2]

model = LinearSoftmaxModel(
    weights=rng.normal(size=(classes, n)) / np.sqrt(n),
    biases=0.1 * rng.normal(size=classes),
    shape=shape,
)
model_path = out_root / "model.model"
save_model(model, model_path)

images = rng.uniform(-0.5, 0.5, size=(3, *shape))
images_path = out_root / "images.npz"
np.savez(images_path, images=images)

X0 = InputTensor.from_array(images[0])
mask = variance_mask(X0, k)
print(f"mask: {k} of {n} pixels; first few indices {mask[:8]}")

for attack in ("bobyqa", "square", "parsimonious"):
    config = ExperimentConfig(
        attack=attack,
        model_path=str(model_path),
        image_set=str(images_path),
        epsilons=(0.25,),
        max_queries=600,
        target_protocol="random-class",
        mask_top_k=k,
        seed=17,
    )
    records = run_experiment(config, records_path=out_root / f"{attack}.jsonl")
    cdfs = cdfs_from_records(records, [50, 100, 200, 400, 600])
    written = emit_outputs(records, cdfs, out_root / attack)
    wins = sum(r.success for r in records)
    print(f"{attack:<14} {wins}/{len(records)} succeeded; wrote "
          + ", ".join(p.name for p in written))

print(f"\noutputs under {out_root}")
