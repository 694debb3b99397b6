"""Reference implementations of the four compared attacks.

Each attack is reimplemented at descriptive fidelity: the search principle is
faithful (vertex flipping, random squares, genetic search, momentum
Frank-Wolfe), while constants their authors pin only in code are set here as
overridable defaults.  All four share the same contract as the
surrogate attack: the first query classifies the clean image, every oracle
reply is checked for success, queries never leave the feasible set, and the
reported query count equals the oracle counter.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from .core import AttackProblem, AttackResult, ContractError, InputTensor, QueryOracle
from .lifting import generate_lifting

__all__ = [
    "ALGORITHMS",
    "BaselineConfig",
    "square_attack",
    "parsimonious_attack",
    "gen_attack",
    "frank_wolfe_attack",
]

ALGORITHMS = ("square", "parsimonious", "genattack", "frankwolfe")


@dataclass(frozen=True)
class BaselineConfig:
    """Shared budget plus per-algorithm constants (documented defaults)."""

    algorithm: str
    epsilon: float = 0.1
    max_queries: int = 3000
    # square: fraction of the image area a proposal square covers, halved each
    # time the consumed budget crosses a milestone fraction.
    square_initial_fraction: float = 0.1
    square_milestones: tuple[float, ...] = (0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8)
    # parsimonious: initial block grid is g x g per channel, refined 4x when a
    # full pass over the blocks accepts nothing.
    parsimonious_initial_grid: int = 2
    # genattack
    population: int = 6
    mutation_rate: float = 0.05
    # frank-wolfe
    momentum: float = 0.9
    num_directions: int = 25
    fd_step_fraction: float = 0.01
    step_scale: float = 1.0
    directions: str = "rademacher"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractError(f"unknown algorithm {self.algorithm!r}, pick from {ALGORITHMS}")
        if not self.epsilon > 0:
            raise ContractError("epsilon must be positive")
        if self.max_queries < 0:
            raise ContractError("max_queries must be nonnegative")
        if not 0 < self.square_initial_fraction <= 1:
            raise ContractError("square fraction must lie in (0, 1]")
        if self.parsimonious_initial_grid < 1:
            raise ContractError("initial block grid must be >= 1")
        if self.population < 1:
            raise ContractError("population must be >= 1")
        if not 0 <= self.mutation_rate <= 1:
            raise ContractError("mutation rate must lie in [0, 1]")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")
        if self.num_directions < 1:
            raise ContractError("need at least one gradient direction")
        if not 0 < self.fd_step_fraction <= 1:
            raise ContractError("finite-difference step fraction must lie in (0, 1]")
        if self.directions not in ("rademacher", "coordinate"):
            raise ContractError("directions must be 'rademacher' or 'coordinate'")


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _config(config, algorithm) -> BaselineConfig:
    if config is None:
        return BaselineConfig(algorithm=algorithm)
    if config.algorithm != algorithm:
        raise ContractError(f"config is for {config.algorithm!r}, attack is {algorithm!r}")
    return config


def square_attack(
    oracle: QueryOracle,
    X: InputTensor,
    t: int,
    config: BaselineConfig | None = None,
    rng=None,
    mask=None,
) -> AttackResult:
    """Randomized direct search on the vertices of the perturbation box.

    Starts from vertical stripes at the image-clipped vertices, then proposes
    one random square block per query, set to a random sign per channel, and
    accepts the proposal only when the loss strictly decreases.  The square
    side follows a decreasing fraction schedule; with a mask the squares are
    single masked pixels.
    """
    config = _config(config, "square")
    rng = _as_rng(rng)
    problem = AttackProblem(oracle, X, t, config.epsilon, mask=mask)
    h, w, c = X.shape
    eps = config.epsilon
    lo, hi = problem.eta_lower, problem.eta_upper

    eta = np.zeros(problem.n)
    if config.max_queries <= 0:
        return problem.result(False, eta, np.inf, -1)
    value, pred = problem.evaluate(eta)
    if pred == t:
        return problem.result(True, eta, value, pred)

    # Vertical stripe initialization: one sign per (column, channel).
    stripe_sign = rng.choice([-1.0, 1.0], size=(1, w, c))
    stripes = np.clip(np.broadcast_to(stripe_sign * eps, (h, w, c)).ravel(), lo, hi)
    eta[problem.domain] = stripes[problem.domain]
    if problem.queries >= config.max_queries:
        return problem.result(False, np.zeros(problem.n), value, pred)
    best_value, best_pred = problem.evaluate(eta)
    if best_pred == t:
        return problem.result(True, eta, best_value, best_pred)

    while problem.queries < config.max_queries:
        used = problem.queries / config.max_queries
        halvings = sum(m <= used for m in config.square_milestones)
        fraction = config.square_initial_fraction * 0.5**halvings
        candidate = eta.copy()
        if problem.masked:
            coord = rng.choice(problem.domain)
            sign = rng.choice([-1.0, 1.0])
            candidate[coord] = np.clip(sign * eps, lo[coord], hi[coord])
        else:
            side = int(round(sqrt(fraction * h * w)))
            side = max(1, min(side, h, w))
            r0 = rng.integers(0, h - side + 1)
            c0 = rng.integers(0, w - side + 1)
            block = candidate.reshape(h, w, c)
            block[r0 : r0 + side, c0 : c0 + side, :] = rng.choice([-1.0, 1.0], size=c) * eps
            candidate = np.clip(block.ravel(), lo, hi)
        value, pred = problem.evaluate(candidate)
        if pred == t:
            return problem.result(True, candidate, value, pred)
        if value < best_value:
            eta, best_value, best_pred = candidate, value, pred

    return problem.result(False, eta, best_value, best_pred)


def parsimonious_attack(
    oracle: QueryOracle,
    X: InputTensor,
    t: int,
    config: BaselineConfig | None = None,
    rng=None,
    mask=None,
) -> AttackResult:
    """Combinatorial search over vertices: start all-negative, flip blocks.

    The perturbation starts at the image-clipped all-negative vertex; passes
    over a coarse-to-fine block hierarchy flip one block at a time to the
    opposite vertex side, keeping a flip only when the loss strictly
    decreases.  A pass without progress refines the blocks fourfold; with a
    mask the search runs directly on the masked pixels (finest grid).
    """
    config = _config(config, "parsimonious")
    _as_rng(rng)  # accepted for interface symmetry; the search is deterministic
    problem = AttackProblem(oracle, X, t, config.epsilon, mask=mask)
    h, w, c = X.shape
    lo, hi = problem.eta_lower, problem.eta_upper

    if config.max_queries <= 0:
        return problem.result(False, np.zeros(problem.n), np.inf, -1)
    value, pred = problem.evaluate(np.zeros(problem.n))
    if pred == t:
        return problem.result(True, np.zeros(problem.n), value, pred)

    if problem.masked:
        blocks = [problem.domain[i : i + 1] for i in range(problem.domain.size)]
        level_size = problem.n  # already at the finest grid
    else:
        level_size = min(config.parsimonious_initial_grid**2 * c, problem.n)
        blocks = generate_lifting(level_size, X.shape).members

    # Current vertex side per pixel: -1 at the lower bound, +1 at the upper.
    side = -np.ones(problem.n)
    eta = np.zeros(problem.n)
    eta[problem.domain] = lo[problem.domain]
    if problem.queries >= config.max_queries:
        return problem.result(False, np.zeros(problem.n), value, pred)
    best_value, best_pred = problem.evaluate(eta)
    if best_pred == t:
        return problem.result(True, eta, best_value, best_pred)

    while problem.queries < config.max_queries:
        progress = False
        for block in blocks:
            if problem.queries >= config.max_queries:
                break
            flipped = -side[block[0]]
            candidate = eta.copy()
            candidate[block] = np.where(flipped > 0, hi[block], lo[block])
            value, pred = problem.evaluate(candidate)
            if pred == t:
                return problem.result(True, candidate, value, pred)
            if value < best_value:
                eta, best_value, best_pred = candidate, value, pred
                side[block] = flipped
                progress = True
        if not progress and not problem.masked and level_size < problem.n:
            level_size = min(level_size * 4, problem.n)
            blocks = generate_lifting(level_size, X.shape).members

    return problem.result(False, eta, best_value, best_pred)


def gen_attack(
    oracle: QueryOracle,
    X: InputTensor,
    t: int,
    config: BaselineConfig | None = None,
    rng=None,
    mask=None,
) -> AttackResult:
    """Genetic direct search: selection, uniform crossover, box mutation.

    A population of feasible perturbations evolves with fitness-proportional
    parent selection on the negative loss; the elite survives unchanged, other
    children mix two parents coordinate-wise and mutate by resampling inside
    the feasible interval.  The whole population is (re-)evaluated every
    generation, so every oracle call is counted.
    """
    config = _config(config, "genattack")
    rng = _as_rng(rng)
    problem = AttackProblem(oracle, X, t, config.epsilon, mask=mask)
    lo, hi = problem.eta_lower, problem.eta_upper
    domain = problem.domain

    if config.max_queries <= 0:
        return problem.result(False, np.zeros(problem.n), np.inf, -1)
    value, pred = problem.evaluate(np.zeros(problem.n))
    if pred == t:
        return problem.result(True, np.zeros(problem.n), value, pred)
    best_eta, best_value, best_pred = np.zeros(problem.n), value, pred

    off_domain = np.ones(problem.n, dtype=bool)
    off_domain[domain] = False

    def sample_individual() -> np.ndarray:
        ind = np.zeros(problem.n)
        ind[domain] = rng.uniform(lo[domain], hi[domain])
        return ind

    def evaluate_population(pop):
        nonlocal best_eta, best_value, best_pred
        values = []
        for ind in pop:
            if problem.queries >= config.max_queries:
                break
            value, pred = problem.evaluate(ind)
            if value < best_value:
                best_eta, best_value, best_pred = ind.copy(), value, pred
            values.append((value, pred))
            if pred == t:
                return values, True
        return values, False

    population = [sample_individual() for _ in range(config.population)]
    values, hit = evaluate_population(population)
    if hit:
        return problem.result(True, best_eta, best_value, best_pred)

    while problem.queries < config.max_queries and values:
        losses = np.array([v for v, _ in values])
        population = population[: losses.size]
        weights = np.exp(-(losses - losses.min()))
        probs = weights / weights.sum()
        elite = population[int(np.argmin(losses))].copy()
        children = [elite]
        for _ in range(config.population - 1):
            p1 = population[rng.choice(losses.size, p=probs)]
            p2 = population[rng.choice(losses.size, p=probs)]
            child = np.where(rng.random(problem.n) < 0.5, p1, p2)
            mutate = rng.random(problem.n) < config.mutation_rate
            mutate[off_domain] = False
            child[mutate] = rng.uniform(lo[mutate], hi[mutate])
            children.append(child)
        population = children
        values, hit = evaluate_population(population)
        if hit:
            return problem.result(True, best_eta, best_value, best_pred)

    return problem.result(False, best_eta, best_value, best_pred)


def frank_wolfe_attack(
    oracle: QueryOracle,
    X: InputTensor,
    t: int,
    config: BaselineConfig | None = None,
    rng=None,
    mask=None,
) -> AttackResult:
    """Zeroth-order Frank-Wolfe: finite-difference gradient with momentum.

    Each iteration estimates the gradient by symmetric differences along
    ``num_directions`` unit directions (2 queries each), folds it into a
    momentum average, steps a convex fraction ``1/sqrt(k+1)`` of the way to
    the vertex ``-eps * sign(momentum)`` (image-clipped), and spends one more
    query on the new iterate, for exactly ``2 * num_directions + 1`` queries
    per iteration.
    """
    config = _config(config, "frankwolfe")
    rng = _as_rng(rng)
    problem = AttackProblem(oracle, X, t, config.epsilon, mask=mask)
    lo, hi = problem.eta_lower, problem.eta_upper
    domain = problem.domain

    if config.max_queries <= 0:
        return problem.result(False, np.zeros(problem.n), np.inf, -1)
    value, pred = problem.evaluate(np.zeros(problem.n))
    if pred == t:
        return problem.result(True, np.zeros(problem.n), value, pred)

    eta = np.zeros(problem.n)
    current_value, current_pred = value, pred
    momentum = np.zeros(problem.n)
    fd_step = config.fd_step_fraction * config.epsilon
    per_iteration = 2 * config.num_directions + 1
    k = 0
    while problem.queries + per_iteration <= config.max_queries:
        grad = np.zeros(problem.n)
        for s in range(config.num_directions):
            if config.directions == "coordinate":
                u = np.zeros(problem.n)
                u[domain[(k * config.num_directions + s) % domain.size]] = 1.0
            else:
                u = np.zeros(problem.n)
                u[domain] = rng.choice([-1.0, 1.0], size=domain.size)
                u /= sqrt(domain.size)
            f_plus, pred = problem.evaluate(np.clip(eta + fd_step * u, lo, hi))
            if pred == t:
                return problem.result(True, np.clip(eta + fd_step * u, lo, hi), f_plus, pred)
            f_minus, pred = problem.evaluate(np.clip(eta - fd_step * u, lo, hi))
            if pred == t:
                return problem.result(True, np.clip(eta - fd_step * u, lo, hi), f_minus, pred)
            grad += (f_plus - f_minus) / (2 * fd_step) * u
        grad /= config.num_directions
        momentum = config.momentum * momentum + (1 - config.momentum) * grad

        vertex = np.where(momentum > 0, lo, np.where(momentum < 0, hi, 0.0))
        gamma = min(1.0, config.step_scale / sqrt(k + 1))
        eta = eta + gamma * (vertex - eta)
        current_value, current_pred = problem.evaluate(eta)
        if current_pred == t:
            return problem.result(True, eta, current_value, current_pred)
        k += 1

    return problem.result(False, eta, current_value, current_pred)
