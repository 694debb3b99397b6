"""Model-based DFO attack: linear surrogates minimized over trust regions.

The attack never sees gradients.  Each batch restricts the search to ``b``
coordinates of the current (possibly lifted) domain, interpolates a linear
model of the loss through ``b + 1`` oracle samples, and repeatedly steps to
the model minimizer inside the intersection of the feasible box and an
l-infinity trust region.  Batches sweep the domain in variance order; the
domain itself grows coarse-to-fine through the lifting hierarchy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    AttackProblem,
    AttackResult,
    ContractError,
    FeasibleBox,
    InputTensor,
    Perturbation,
    QueryOracle,
)
from .lifting import BlockLifting, block_variance_order, generate_lifting
from .sampling import (
    STRATEGIES,
    SelectionSet,
    descending_order,
    generate_sampling_matrix,
    neighborhood_variance,
    num_batches,
)

__all__ = [
    "LinearSurrogate",
    "InterpolationSet",
    "TrustRegionState",
    "BobyqaConfig",
    "BatchResult",
    "fit_linear_model",
    "solve_trust_region_step",
    "build_initial_model",
    "bobyqa_batch",
    "bobyqa_attack",
]

# Predicted reductions below this (relative to the incumbent loss scale) are
# treated as a flat model; the ratio test would divide by numerical noise.
_FLAT_TOL = 1e-14


@dataclass(frozen=True)
class LinearSurrogate:
    """Local model ``m(p) = intercept + gradient . p`` of the restricted loss."""

    intercept: float
    gradient: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gradient", np.asarray(self.gradient, dtype=float).ravel())

    def predict(self, p: np.ndarray) -> float:
        return float(self.intercept + self.gradient @ np.asarray(p, dtype=float))

    @property
    def is_flat(self) -> bool:
        return not np.any(self.gradient)


@dataclass
class InterpolationSet:
    """The ``b + 1`` sample locations and losses the surrogate interpolates."""

    points: np.ndarray
    losses: np.ndarray
    predictions: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.losses = np.asarray(self.losses, dtype=float).ravel()
        self.predictions = np.asarray(self.predictions, dtype=int).ravel()
        if self.points.shape[0] != self.losses.size:
            raise ContractError("one loss per sample point required")
        if not np.all(np.isfinite(self.losses)):
            raise ContractError("sample losses must be finite")

    @property
    def best_index(self) -> int:
        """Index of the minimal loss; ties resolve to the earliest sample."""
        return int(np.argmin(self.losses))

    @property
    def best_point(self) -> np.ndarray:
        return self.points[self.best_index]

    @property
    def best_loss(self) -> float:
        return float(self.losses[self.best_index])

    def replace_farthest(self, point: np.ndarray, loss_value: float, prediction: int) -> None:
        """Add a sample and drop the one farthest from the best point.

        The geometrically least important sample is taken to be the one at the
        largest Euclidean distance from the current best; the best point itself
        is never removed.  Keeps the set size fixed.
        """
        self.points = np.vstack([self.points, point])
        self.losses = np.append(self.losses, loss_value)
        self.predictions = np.append(self.predictions, prediction)
        best = self.best_index
        dist = np.sum((self.points - self.points[best]) ** 2, axis=1)
        dist[best] = -1.0
        drop = int(np.argmax(dist))
        keep = np.arange(self.losses.size) != drop
        self.points = self.points[keep]
        self.losses = self.losses[keep]
        self.predictions = self.predictions[keep]


@dataclass
class TrustRegionState:
    """Radius of the region where the surrogate is trusted, plus its update rule."""

    radius: float
    shrink: float = 0.5
    expand: float = 2.0
    rho_min: float = 0.1
    expand_threshold: float = 0.7
    max_radius: float = np.inf

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ContractError("shrink factor must lie in (0, 1)")
        if not self.expand > 1:
            raise ContractError("expand factor must exceed 1")
        if not 0 < self.rho_min < 1:
            raise ContractError("acceptance threshold must lie in (0, 1)")
        self.radius = min(float(self.radius), self.max_radius)
        if not self.radius > 0:
            raise ContractError("trust-region radius must be positive")

    def update(self, rho: float) -> None:
        if rho > self.expand_threshold:
            self.radius = min(self.radius * self.expand, self.max_radius)
        elif rho < self.rho_min:
            self.radius *= self.shrink


@dataclass(frozen=True)
class BobyqaConfig:
    """Knobs of the surrogate attack.

    ``batch_size`` coordinates are optimized per batch with at most ``kappa``
    queries each; levels start at ``initial_level`` coarse variables and grow
    by ``level_growth`` until the pixel count is reached.
    """

    epsilon: float = 0.1
    max_queries: int = 3000
    batch_size: int = 25
    kappa: int = 50
    initial_level: int = 12
    level_growth: int = 4
    strategy: str = "variance"
    initial_radius_factor: float = 0.5
    shrink: float = 0.5
    expand: float = 2.0
    rho_min: float = 0.1
    expand_threshold: float = 0.7

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ContractError("epsilon must be positive")
        if self.max_queries < 0:
            raise ContractError("max_queries must be nonnegative")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.kappa < self.batch_size + 1:
            raise ContractError("kappa must allow the b + 1 model-building queries")
        if self.initial_level < 1 or self.level_growth < 2:
            raise ContractError("need initial_level >= 1 and level_growth >= 2")
        if self.strategy not in STRATEGIES:
            raise ContractError(f"unknown strategy {self.strategy!r}")
        if not 0 < self.initial_radius_factor <= 1:
            raise ContractError("initial_radius_factor must lie in (0, 1]")

    def trust_region(self) -> TrustRegionState:
        return TrustRegionState(
            radius=self.initial_radius_factor * self.epsilon,
            shrink=self.shrink,
            expand=self.expand,
            rho_min=self.rho_min,
            expand_threshold=self.expand_threshold,
            max_radius=self.epsilon,
        )


@dataclass
class BatchResult:
    """Outcome of one batch: the sub-space step taken and its measured loss."""

    step: np.ndarray
    loss: float
    queries: int
    success: bool
    prediction: int


def fit_linear_model(points, losses) -> LinearSurrogate:
    """Interpolate ``m(p) = a + c . p`` through the sample set.

    With ``b + 1`` affinely independent points this is the unique interpolant;
    a rank-deficient system falls back to the minimum-norm least-squares fit
    and the surrogate is marked degenerate.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    losses = np.asarray(losses, dtype=float).ravel()
    q, b = points.shape
    if q != losses.size:
        raise ContractError("one loss per point required")
    if q != b + 1:
        raise ContractError(f"linear interpolation needs b + 1 = {b + 1} points, got {q}")
    system = np.hstack([np.ones((q, 1)), points])
    solution, _, rank, _ = np.linalg.lstsq(system, losses, rcond=None)
    return LinearSurrogate(
        intercept=float(solution[0]), gradient=solution[1:], degenerate=rank < b + 1
    )


def solve_trust_region_step(
    model: LinearSurrogate, box: FeasibleBox, radius: float
) -> np.ndarray:
    """Exact minimizer of the linear model over the box cut with the radius.

    The constraint set is ``max(lower_i, -radius) <= p_i <= min(upper_i, radius)``;
    a linear objective is minimized coordinate-wise at a bound whose side is the
    sign of the gradient (zero-gradient coordinates stay put).
    """
    if not radius > 0:
        raise ContractError("radius must be positive")
    lo = np.minimum(np.maximum(box.lower, -radius), 0.0)
    hi = np.maximum(np.minimum(box.upper, radius), 0.0)
    c = model.gradient
    return np.where(c > 0, lo, np.where(c < 0, hi, 0.0))


class _Subspace:
    """The restricted problem a batch works on: b pixel groups moved jointly.

    Coordinates are relative to the perturbation at batch start; group step
    bounds are the tightest pixel bounds over each group, so any point in the
    sub-space box lifts to a feasible perturbation.
    """

    def __init__(self, problem: AttackProblem, eta: np.ndarray, groups: list[np.ndarray]):
        self.problem = problem
        self.eta = eta
        self.groups = groups
        a, b = problem.step_bounds(eta)
        self.lower = np.array([a[g].max() for g in groups])
        self.upper = np.array([b[g].min() for g in groups])

    @property
    def dim(self) -> int:
        return len(self.groups)

    def lift(self, p: np.ndarray) -> np.ndarray:
        step = np.zeros(self.problem.n)
        for value, group in zip(p, self.groups):
            step[group] = value
        return step

    def evaluate(self, p: np.ndarray) -> tuple[float, int]:
        return self.problem.evaluate(self.eta + self.lift(p))

    def box(self) -> FeasibleBox:
        return FeasibleBox(lower=self.lower, upper=self.upper)


def _initial_steps(sub: _Subspace) -> np.ndarray:
    """Probe step per coordinate: a quarter of the shorter side of its feasible
    interval, signed toward the larger side; a one-sided interval probes into
    the open side, a fully pinned coordinate stays at zero."""
    steps = np.zeros(sub.dim)
    for i, (lo, hi) in enumerate(zip(sub.lower, sub.upper)):
        if hi == lo:
            continue
        direction = 1.0 if hi >= -lo else -1.0
        shorter = min(hi, -lo)
        magnitude = shorter / 4 if shorter > 0 else max(hi, -lo) / 4
        steps[i] = direction * magnitude
    return steps


def _build_initial(
    sub: _Subspace, center_loss: float, center_prediction: int, stop_on_success: bool
):
    """Sample the center plus b canonical probes and fit the first surrogate.

    Returns (set, model, success_result_or_None); costs exactly b queries
    unless a probe already hits the target and early stopping is requested.
    """
    b = sub.dim
    points = [np.zeros(b)]
    losses = [center_loss]
    preds = [center_prediction]
    sigmas = _initial_steps(sub)
    for i in range(b):
        p = np.zeros(b)
        p[i] = sigmas[i]
        value, pred = sub.evaluate(p)
        points.append(p)
        losses.append(value)
        preds.append(pred)
        if stop_on_success and pred == sub.problem.target:
            return None, None, BatchResult(
                step=p, loss=value, queries=i + 1, success=True, prediction=pred
            )
    iset = InterpolationSet(points=np.array(points), losses=losses, predictions=preds)
    return iset, fit_linear_model(iset.points, iset.losses), None


def build_initial_model(
    oracle: QueryOracle,
    X: InputTensor,
    eta: Perturbation,
    L: BlockLifting,
    S: SelectionSet,
    t: int,
    center_loss: float,
) -> tuple[InterpolationSet, LinearSurrogate]:
    """The b + 1 point initial model for a batch: cached center plus b probes
    along the canonical directions of the selected coordinates.  Costs exactly
    b oracle queries; the center is not re-queried."""
    problem = AttackProblem(oracle, X, t, eta.epsilon_inf)
    sub = _Subspace(problem, eta.values, [L.members[i] for i in S.indices])
    iset, model, _ = _build_initial(sub, center_loss, -1, stop_on_success=False)
    return iset, model


def _run_batch(
    sub: _Subspace,
    kappa: int,
    tr: TrustRegionState,
    center_loss: float,
    center_prediction: int,
) -> BatchResult:
    """Model-build plus kappa - b trust-region iterations on one sub-space."""
    problem = sub.problem
    start = problem.queries
    iset, model, early = _build_initial(sub, center_loss, center_prediction, True)
    if early is not None:
        return early

    box_lower, box_upper = sub.lower, sub.upper
    for _ in range(kappa - sub.dim):
        best = iset.best_index
        xk, fk = iset.points[best], iset.losses[best]
        # Box relative to the current best point, cut with the trust region.
        rel = FeasibleBox(
            lower=np.minimum(box_lower - xk, 0.0), upper=np.maximum(box_upper - xk, 0.0)
        )
        step = solve_trust_region_step(model, rel, tr.radius)
        predicted = -float(model.gradient @ step)
        if predicted <= _FLAT_TOL * max(1.0, abs(fk)):
            # Flat or degenerate model: probe the all-lower-bound vertex.
            step = rel.lower
            predicted = 0.0
        candidate = xk + step
        value, pred = sub.evaluate(candidate)
        if pred == problem.target:
            return BatchResult(
                step=candidate,
                loss=value,
                queries=problem.queries - start,
                success=True,
                prediction=pred,
            )
        if predicted > 0:
            tr.update((fk - value) / predicted)
        elif value >= fk:
            tr.radius *= tr.shrink
        iset.replace_farthest(candidate, value, pred)
        model = fit_linear_model(iset.points, iset.losses)

    best = iset.best_index
    return BatchResult(
        step=iset.points[best].copy(),
        loss=iset.best_loss,
        queries=problem.queries - start,
        success=False,
        prediction=int(iset.predictions[best]),
    )


def bobyqa_batch(
    oracle: QueryOracle,
    X: InputTensor,
    eta: Perturbation,
    L: BlockLifting,
    S: SelectionSet,
    t: int,
    kappa: int,
    tr: TrustRegionState,
    center_loss: float,
) -> BatchResult:
    """One complete batch over the coordinates selected by ``S``.

    Consumes exactly ``kappa`` queries unless an evaluation hits the target
    first; the returned step is relative to ``eta`` in the sub-space, and its
    loss is the measured (not modeled) value.
    """
    if kappa < S.size + 1:
        raise ContractError(f"kappa={kappa} cannot cover model building for b={S.size}")
    problem = AttackProblem(oracle, X, t, eta.epsilon_inf)
    sub = _Subspace(problem, eta.values, [L.members[i] for i in S.indices])
    return _run_batch(sub, kappa, tr, center_loss, -1)


def _vertex_probe(sub: _Subspace, center_loss: float, center_prediction: int) -> BatchResult:
    """Truncated-budget fallback: spend one query on the negative-corner vertex."""
    p = sub.lower.copy()
    value, pred = sub.evaluate(p)
    if pred == sub.problem.target or value < center_loss:
        return BatchResult(step=p, loss=value, queries=1,
                           success=pred == sub.problem.target, prediction=pred)
    return BatchResult(
        step=np.zeros(sub.dim), loss=center_loss, queries=1,
        success=False, prediction=center_prediction,
    )


def bobyqa_attack(
    oracle: QueryOracle,
    X: InputTensor,
    t: int,
    config: BobyqaConfig | None = None,
    rng: np.random.Generator | int | None = None,
    mask=None,
) -> AttackResult:
    """Full attack driver: hierarchy of liftings, variance-ordered batches.

    Per level, the domain is swept once in ``ceil(n_l / b)`` batches; the
    accumulated perturbation from earlier levels stays frozen while each batch
    optimizes a fresh sub-space perturbation.  With a ``mask``, the hierarchy
    collapses to the identity lifting restricted to the masked coordinates.
    Success is checked on every oracle reply; the initial classification of the
    clean image counts as one query and doubles as the first model center.
    """
    config = config or BobyqaConfig()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    problem = AttackProblem(oracle, X, t, config.epsilon, mask=mask)
    eta = np.zeros(problem.n)

    if config.max_queries <= 0:
        return problem.result(False, eta, np.inf, -1, level=0)

    current_loss, pred = problem.evaluate(eta)
    if pred == t:
        return problem.result(True, eta, current_loss, pred, level=0)
    current_pred = pred

    level = 1
    level_size = config.initial_level
    while problem.queries < config.max_queries:
        if mask is not None:
            lifting = None
            coarse = problem.domain.size
        else:
            lifting = generate_lifting(min(level_size, problem.n), X.shape)
            coarse = lifting.coarse_dim
        b_eff = min(config.batch_size, coarse)

        order = _sweep_order(problem, eta, lifting, coarse, config.strategy, rng)
        for j in range(num_batches(coarse, b_eff)):
            remaining = config.max_queries - problem.queries
            if remaining <= 0:
                break
            if order is None:
                S = generate_sampling_matrix(None, coarse, b_eff, j, "random", rng=rng)
            else:
                S = SelectionSet(indices=order[j * b_eff : (j + 1) * b_eff], batch_index=j)
            if mask is None:
                groups = [lifting.members[i] for i in S.indices]
            else:
                groups = [problem.domain[i : i + 1] for i in S.indices]

            sub = _Subspace(problem, eta, groups)
            kappa_eff = min(config.kappa, remaining)
            if kappa_eff < sub.dim + 1:
                outcome = _vertex_probe(sub, current_loss, current_pred)
            else:
                outcome = _run_batch(sub, kappa_eff, config.trust_region(),
                                     current_loss, current_pred)

            if np.any(outcome.step):
                eta = eta + sub.lift(outcome.step)
                problem.check_feasible(eta)
            current_loss, current_pred = outcome.loss, outcome.prediction
            if outcome.success:
                return problem.result(True, eta, current_loss, current_pred, level=level)

        if mask is None and coarse < problem.n:
            level_size = min(level_size * config.level_growth, problem.n)
            level += 1

    return problem.result(False, eta, current_loss, current_pred, level=level)


def _sweep_order(problem, eta, lifting, coarse, strategy, rng):
    """Coordinate ordering for one sweep; None means fresh-random batches."""
    if strategy == "random":
        return None
    if strategy == "ordered":
        return rng.permutation(coarse)
    perturbed = InputTensor(
        shape=problem.X.shape,
        data=problem.X.data + eta,
        lower=problem.X.lower,
        upper=problem.X.upper,
    )
    if lifting is None:
        variances = neighborhood_variance(perturbed)[problem.domain]
    else:
        variances = block_variance_order(perturbed, lifting)
    return descending_order(variances)
