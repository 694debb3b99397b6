"""Experiment runner: attack campaigns, success-rate CDFs, and output files.

A campaign attacks every (image, target, epsilon) combination with its own
seeded random source and a fresh oracle, so runs are deterministic given the
config and reproducible under any degree of parallelism.  Results are stored
as JSON-lines records; the headline metric is the cumulative fraction of
attacks that succeeded within a given number of queries.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines import (
    BaselineConfig,
    frank_wolfe_attack,
    gen_attack,
    parsimonious_attack,
    square_attack,
)
from .bobyqa import BobyqaConfig, bobyqa_attack
from .core import ContractError, InputTensor
from .targets import MaskedOracle, ModelOracle, load_model, variance_mask

__all__ = [
    "ATTACKS",
    "ExperimentConfig",
    "AttackRecord",
    "SuccessCDF",
    "run_experiment",
    "run_single_attack",
    "compute_cdf",
    "cdfs_from_records",
    "emit_outputs",
    "load_image_set",
    "derive_seed",
]

TARGET_PROTOCOLS = ("all-other-classes", "random-class")


def _run_bobyqa(oracle, X, t, epsilon, max_queries, params, rng, mask):
    config = BobyqaConfig(epsilon=epsilon, max_queries=max_queries, **params)
    return bobyqa_attack(oracle, X, t, config, rng=rng, mask=mask)


def _baseline_runner(name, fn):
    def run(oracle, X, t, epsilon, max_queries, params, rng, mask):
        config = BaselineConfig(
            algorithm=name, epsilon=epsilon, max_queries=max_queries, **params
        )
        return fn(oracle, X, t, config, rng=rng, mask=mask)

    return run


ATTACKS = {
    "bobyqa": _run_bobyqa,
    "square": _baseline_runner("square", square_attack),
    "parsimonious": _baseline_runner("parsimonious", parsimonious_attack),
    "genattack": _baseline_runner("genattack", gen_attack),
    "frankwolfe": _baseline_runner("frankwolfe", frank_wolfe_attack),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a campaign needs; JSON-serializable, flags override fields."""

    attack: str
    model_path: str
    image_set: str
    epsilons: tuple[float, ...] = (0.1,)
    max_queries: int = 3000
    target_protocol: str = "all-other-classes"
    seed: int = 0
    parallelism: int = 1
    mask_top_k: int | None = None
    attack_params: dict = field(default_factory=dict)
    output_dir: str | None = None
    lower: float = -0.5
    upper: float = 0.5

    def __post_init__(self):
        if self.attack not in ATTACKS:
            raise ContractError(f"unknown attack {self.attack!r}, pick from {sorted(ATTACKS)}")
        if self.target_protocol not in TARGET_PROTOCOLS:
            raise ContractError(f"target protocol must be one of {TARGET_PROTOCOLS}")
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if not self.epsilons or any(e <= 0 for e in self.epsilons):
            raise ContractError("need at least one positive epsilon")
        if self.parallelism < 1:
            raise ContractError("parallelism must be >= 1")
        if self.max_queries < 0:
            raise ContractError("max_queries must be nonnegative")
        for path in (self.model_path, self.image_set):
            if not Path(path).exists():
                raise ContractError(f"referenced file does not exist: {path}")

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            data = json.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class AttackRecord:
    """One attack outcome; ``wall_time`` is the only nondeterministic field."""

    image_id: int
    original_class: int
    target_class: int
    epsilon: float
    success: bool
    queries: int
    wall_time: float
    final_loss: float | None
    attack: str
    seed: int
    status: str = "ok"

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "AttackRecord":
        return cls(**json.loads(line))


@dataclass(frozen=True)
class SuccessCDF:
    """Cumulative fraction of attacks that succeeded within q queries."""

    query_grid: tuple[int, ...]
    fraction: tuple[float, ...]
    attack: str | None = None
    epsilon: float | None = None

    def __post_init__(self):
        grid = tuple(int(q) for q in self.query_grid)
        frac = tuple(float(f) for f in self.fraction)
        object.__setattr__(self, "query_grid", grid)
        object.__setattr__(self, "fraction", frac)
        if len(grid) != len(frac):
            raise ContractError("grid and fraction lengths differ")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ContractError("query grid must be strictly increasing")
        if any(f < 0 or f > 1 for f in frac):
            raise ContractError("fractions must lie in [0, 1]")
        if any(b < a for a, b in zip(frac, frac[1:])):
            raise ContractError("a CDF must be non-decreasing")


def derive_seed(*parts) -> int:
    """Stable per-attack seed from campaign coordinates (order-independent runs)."""
    blob = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def load_image_set(path, lower: float = -0.5, upper: float = 0.5) -> list[InputTensor]:
    """Read an npz archive with an ``images`` array of shape (m, h, w[, c])."""
    with np.load(path) as archive:
        if "images" not in archive:
            raise ContractError(f"{path} has no 'images' array")
        images = np.asarray(archive["images"], dtype=float)
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4:
        raise ContractError(f"images must be (m, h, w, c), got shape {images.shape}")
    return [InputTensor.from_array(img, lower=lower, upper=upper) for img in images]


def run_single_attack(
    model, X: InputTensor, attack: str, target: int, epsilon: float,
    max_queries: int, seed: int, mask_top_k: int | None = None, attack_params=None,
    image_id: int = 0, original_class: int | None = None,
) -> AttackRecord:
    """One attack with its own oracle, seed, and bookkeeping verification."""
    oracle = ModelOracle(model)
    mask = None
    if mask_top_k is not None:
        mask = variance_mask(X, mask_top_k)
        oracle = MaskedOracle(ModelOracle(model), X, mask)
    if original_class is None:
        original_class = int(np.argmax(model.predict(X.data)))
    rng = np.random.default_rng(seed)
    runner = ATTACKS[attack]
    started = time.perf_counter()
    try:
        result = runner(oracle, X, target, epsilon, max_queries, attack_params or {}, rng, mask)
    except Exception as exc:
        return AttackRecord(
            image_id=image_id, original_class=original_class, target_class=target,
            epsilon=epsilon, success=False, queries=oracle.query_count,
            wall_time=time.perf_counter() - started, final_loss=None,
            attack=attack, seed=seed, status=f"error:{type(exc).__name__}: {exc}",
        )
    elapsed = time.perf_counter() - started

    status = "ok"
    success = result.success
    if success:
        # Bookkeeping verification, excluded from the query count: a success
        # claim must survive a direct re-evaluation.
        verified = int(np.argmax(model.predict(X.data + result.eta))) == target
        if not verified:
            success, status = False, "inconsistent"
    return AttackRecord(
        image_id=image_id, original_class=original_class, target_class=target,
        epsilon=epsilon, success=success, queries=result.queries,
        wall_time=elapsed, final_loss=result.final_loss,
        attack=attack, seed=seed, status=status,
    )


def _campaign_tasks(config: ExperimentConfig, model, images):
    """The (image, target, epsilon) grid with per-task seeds, in a fixed order."""
    tasks = []
    for image_id, X in enumerate(images):
        original = int(np.argmax(model.predict(X.data)))
        if config.target_protocol == "all-other-classes":
            targets = [cls for cls in range(model.num_classes) if cls != original]
        else:
            chooser = np.random.default_rng(derive_seed(config.seed, image_id, "target"))
            options = [cls for cls in range(model.num_classes) if cls != original]
            targets = [int(chooser.choice(options))]
        for epsilon in config.epsilons:
            for target in targets:
                seed = derive_seed(config.seed, image_id, target, config.attack, epsilon)
                tasks.append((image_id, X, original, target, epsilon, seed))
    return tasks


def run_experiment(config: ExperimentConfig, records_path=None) -> list[AttackRecord]:
    """Execute the campaign; records stream to ``records_path`` as they finish.

    Tasks are isolated (own oracle, own generator seeded from the campaign
    coordinates), so serial and parallel executions produce identical records
    up to wall-clock fields.  Oracle failures mark their record as errored and
    never abort the campaign.
    """
    model = load_model(config.model_path)
    images = load_image_set(config.image_set, lower=config.lower, upper=config.upper)
    tasks = _campaign_tasks(config, model, images)

    def run(task):
        image_id, X, original, target, epsilon, seed = task
        return run_single_attack(
            model, X, config.attack, target, epsilon, config.max_queries, seed,
            mask_top_k=config.mask_top_k, attack_params=config.attack_params,
            image_id=image_id, original_class=original,
        )

    sink = open(records_path, "w") if records_path is not None else None
    records = []

    def consume(outcomes):
        for record in outcomes:
            records.append(record)
            if sink is not None:
                sink.write(record.to_json() + "\n")
                sink.flush()

    try:
        if config.parallelism == 1:
            consume(map(run, tasks))
        else:
            # map yields in task order, so the record file is identical to a
            # serial run even though attacks finish out of order
            with ThreadPoolExecutor(max_workers=config.parallelism) as executor:
                consume(executor.map(run, tasks))
    finally:
        if sink is not None:
            sink.close()
    return records


def compute_cdf(records, query_grid, attack=None, epsilon=None) -> SuccessCDF:
    """Fraction of records that succeeded within each grid point.

    Failed records stay in the denominator at every q.
    """
    records = list(records)
    if not records:
        raise ContractError("cannot compute a CDF over zero records")
    grid = [int(q) for q in query_grid]
    total = len(records)
    fraction = [
        sum(1 for r in records if r.success and r.queries <= q) / total for q in grid
    ]
    return SuccessCDF(query_grid=grid, fraction=fraction, attack=attack, epsilon=epsilon)


def cdfs_from_records(records, query_grid) -> list[SuccessCDF]:
    """One CDF per (attack, epsilon) group found in the records."""
    groups = {}
    for record in records:
        groups.setdefault((record.attack, record.epsilon), []).append(record)
    return [
        compute_cdf(groups[key], query_grid, attack=key[0], epsilon=key[1])
        for key in sorted(groups)
    ]


# --- output files ------------------------------------------------------------

_CSV_HEADER = "queries,fraction,attack,epsilon"
_PALETTE = ("#1b6ca8", "#d1495b", "#46984d", "#8d5bb8", "#e3912d", "#3aa6a6")


def emit_outputs(records, cdfs, out_dir) -> list[Path]:
    """Write records (JSON-lines), CDFs (CSV), and one SVG plot per epsilon."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    records_path = out / "records.jsonl"
    with open(records_path, "w") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")
    written.append(records_path)

    csv_path = out / "cdfs.csv"
    with open(csv_path, "w") as fh:
        fh.write(_CSV_HEADER + "\n")
        for cdf in cdfs:
            for q, f in zip(cdf.query_grid, cdf.fraction):
                fh.write(f"{q},{f!r},{cdf.attack},{cdf.epsilon!r}\n")
    written.append(csv_path)

    for epsilon in sorted({c.epsilon for c in cdfs}):
        group = [c for c in cdfs if c.epsilon == epsilon]
        svg_path = out / f"cdf_eps_{epsilon:g}.svg"
        svg_path.write_text(render_cdf_svg(group, f"success rate, eps={epsilon:g}"))
        written.append(svg_path)
    return written


def parse_cdf_csv(path) -> list[SuccessCDF]:
    """Inverse of the CSV emitted above; exact float round-trip."""
    groups: dict[tuple, list] = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != _CSV_HEADER:
            raise ContractError(f"unexpected CSV header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            q, f, attack, epsilon = line.strip().split(",")
            groups.setdefault((attack, float(epsilon)), []).append((int(q), float(f)))
    cdfs = []
    for (attack, epsilon), points in sorted(groups.items()):
        grid, frac = zip(*points)
        cdfs.append(SuccessCDF(query_grid=grid, fraction=frac, attack=attack, epsilon=epsilon))
    return cdfs


def render_cdf_svg(cdfs, title: str, width: int = 640, height: int = 440) -> str:
    """Line plot of queries vs cumulative success fraction, one polyline per curve."""
    ml, mr, mt, mb = 60, 20, 40, 50
    plot_w, plot_h = width - ml - mr, height - mt - mb
    q_max = max(max(c.query_grid) for c in cdfs)
    q_min = min(min(c.query_grid) for c in cdfs)
    span = max(q_max - q_min, 1)

    def sx(q):
        return ml + (q - q_min) / span * plot_w

    def sy(f):
        return mt + (1.0 - f) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        # axes
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + plot_h}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt + plot_h}" x2="{ml + plot_w}" y2="{mt + plot_h}" stroke="black"/>',
        f'<text x="{ml + plot_w / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">queries</text>',
        f'<text x="16" y="{mt + plot_h / 2:.1f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {mt + plot_h / 2:.1f})">cumulative success fraction</text>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(tick)
        parts.append(f'<line x1="{ml - 4}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" stroke="black"/>')
        parts.append(
            f'<text x="{ml - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{tick:g}</text>'
        )
    for tick in np.linspace(q_min, q_max, 5):
        x = sx(tick)
        parts.append(
            f'<line x1="{x:.1f}" y1="{mt + plot_h}" x2="{x:.1f}" y2="{mt + plot_h + 4}" '
            f'stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{mt + plot_h + 16}" text-anchor="middle" '
            f'font-size="10">{tick:.0f}</text>'
        )
    for i, cdf in enumerate(sorted(cdfs, key=lambda c: str(c.attack))):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(q):.2f},{sy(f):.2f}" for q, f in zip(cdf.query_grid, cdf.fraction))
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'
        )
        parts.append(
            f'<text x="{ml + plot_w - 4}" y="{mt + 14 + 14 * i}" text-anchor="end" '
            f'font-size="11" fill="{color}">{cdf.attack}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
