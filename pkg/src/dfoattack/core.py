"""Problem definition shared by every attack.

Targeted perturbation search is posed as a constrained minimization: find an
additive perturbation ``eta`` with ``||eta||_inf <= epsilon`` such that the
perturbed point stays inside the image box ``[lower, upper]^n`` and the
classifier assigns the target class.  This module holds the data model for
that problem (images, perturbations, feasible boxes), the target-class loss,
and the query-counting oracle interface that all attack loops talk to.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "ContractError",
    "EvaluationError",
    "InputTensor",
    "Perturbation",
    "AttackObjective",
    "FeasibleBox",
    "QueryOracle",
    "FunctionOracle",
    "AttackResult",
    "AttackProblem",
    "loss",
    "feasible_box",
    "evaluate_loss",
    "is_success",
]

#: Slack used when re-checking feasibility of accumulated perturbations.
#: Box arithmetic is exact up to one rounding per accumulation step, so any
#: genuine violation dwarfs this.
FEASIBILITY_TOL = 1e-12


class ContractError(ValueError):
    """An input violates a documented precondition or invariant."""


class EvaluationError(RuntimeError):
    """An oracle evaluation failed (remote fault, malformed or non-finite reply)."""


@dataclass(frozen=True)
class InputTensor:
    """An image-like point in ``[lower, upper]^n`` with explicit (h, w, c) shape.

    ``data`` is the flat row-major (height, width, channel) view; ``n`` equals
    ``height * width * channels``.
    """

    shape: tuple[int, int, int]
    data: np.ndarray
    lower: float = -0.5
    upper: float = 0.5

    def __post_init__(self):
        h, w, c = self.shape
        if h <= 0 or w <= 0 or c <= 0:
            raise ContractError(f"shape must be positive, got {self.shape}")
        # own the buffer: the validated invariants must survive caller mutation
        data = np.array(self.data, dtype=float).ravel()
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "shape", (int(h), int(w), int(c)))
        if not self.lower < self.upper:
            raise ContractError(f"need lower < upper, got [{self.lower}, {self.upper}]")
        if data.size != h * w * c:
            raise ContractError(
                f"data has {data.size} entries, shape {self.shape} needs {h * w * c}"
            )
        if not np.all(np.isfinite(data)):
            raise ContractError("image data must be finite")
        if data.min() < self.lower - FEASIBILITY_TOL or data.max() > self.upper + FEASIBILITY_TOL:
            raise ContractError("image data outside [lower, upper]")

    @property
    def n(self) -> int:
        return self.data.size

    @property
    def height(self) -> int:
        return self.shape[0]

    @property
    def width(self) -> int:
        return self.shape[1]

    @property
    def channels(self) -> int:
        return self.shape[2]

    def as_array(self) -> np.ndarray:
        """The (height, width, channels) view of the data."""
        return self.data.reshape(self.shape)

    @classmethod
    def from_array(cls, arr, lower: float = -0.5, upper: float = 0.5) -> "InputTensor":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ContractError(f"expected a 2-D or 3-D array, got ndim={arr.ndim}")
        return cls(shape=arr.shape, data=arr.ravel(), lower=lower, upper=upper)


@dataclass(frozen=True)
class Perturbation:
    """An additive perturbation with an explicit l-infinity budget."""

    values: np.ndarray
    epsilon_inf: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", values)
        if not self.epsilon_inf > 0:
            raise ContractError(f"epsilon_inf must be positive, got {self.epsilon_inf}")
        if not np.all(np.isfinite(values)):
            raise ContractError("perturbation values must be finite")
        if values.size and np.abs(values).max() > self.epsilon_inf + FEASIBILITY_TOL:
            raise ContractError(
                f"||eta||_inf = {np.abs(values).max()} exceeds budget {self.epsilon_inf}"
            )

    @classmethod
    def zero(cls, n: int, epsilon_inf: float) -> "Perturbation":
        return cls(values=np.zeros(n), epsilon_inf=epsilon_inf)


@dataclass(frozen=True)
class AttackObjective:
    """Drive the prediction of an input away from ``original_class`` to ``target_class``."""

    target_class: int
    original_class: int
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ContractError(f"need at least 2 classes, got {self.num_classes}")
        for name in ("target_class", "original_class"):
            value = getattr(self, name)
            if not 0 <= value < self.num_classes:
                raise ContractError(f"{name}={value} outside [0, {self.num_classes})")
        if self.target_class == self.original_class:
            raise ContractError("target class must differ from original class")


@dataclass(frozen=True)
class FeasibleBox:
    """Elementwise bounds ``a <= delta <= b`` for the next perturbation step.

    Both arrays bracket zero, so the zero step (staying put) is always allowed.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape:
            raise ContractError("bound arrays must have identical shapes")
        if lower.size and (lower.max() > 0 or upper.min() < 0):
            raise ContractError("feasible box must contain the zero step")

    @property
    def size(self) -> int:
        return self.lower.size

    def sample(self, rng: np.random.Generator, count: int = 1) -> np.ndarray:
        """Uniform draws from the box, shape (count, size)."""
        return rng.uniform(self.lower, self.upper, size=(count, self.size))


class QueryOracle:
    """Black-box classifier exposed as a query interface.

    ``query`` maps a flat image vector to a logit vector and increments
    ``query_count`` by exactly one per successful evaluation.  Built-in
    oracles are deterministic; a failing evaluation raises before the
    counter moves.
    """

    def __init__(self):
        self.query_count = 0

    def _logits(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def query(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        logits = np.asarray(self._logits(x), dtype=float).ravel()
        if logits.size < 2:
            raise EvaluationError(f"oracle returned {logits.size} logits, need >= 2")
        self.query_count += 1
        return logits


class FunctionOracle(QueryOracle):
    """Wrap a plain ``x -> logits`` callable as a counting oracle."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        super().__init__()
        self._fn = fn

    def _logits(self, x: np.ndarray) -> np.ndarray:
        return self._fn(x)


@dataclass
class AttackResult:
    """Outcome of one attack run: success flag, query spend, and the final perturbation."""

    success: bool
    queries: int
    eta: np.ndarray
    final_loss: float
    final_prediction: int
    level: int | None = None


def loss(logits, t: int) -> float:
    """Target-class loss: ``logsumexp(logits[j != t]) - logits[t]``.

    On softmax outputs this equals ``log(sum_{j != t} p_j) - log(p_t)``; the
    softmax normalizer cancels, so computing it in logit space is algebraically
    identical and never takes ``log(0)``.  Negative values mean the target class
    already dominates.
    """
    logits = np.asarray(logits, dtype=float).ravel()
    n_c = logits.size
    if n_c < 2:
        raise ContractError(f"objective needs at least 2 classes, got {n_c}")
    if not 0 <= t < n_c:
        raise ContractError(f"target class {t} outside [0, {n_c})")
    if not np.all(np.isfinite(logits)):
        raise EvaluationError("non-finite logit in oracle reply")
    others = np.delete(logits, t)
    return float(logsumexp(others) - logits[t])


def perturbation_bounds(
    x: np.ndarray, eta: np.ndarray, epsilon: float, lower: float, upper: float
) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise step bounds (a, b) around the current perturbation.

    Any ``delta`` with ``a <= delta <= b`` keeps both the budget constraint
    ``||eta + delta||_inf <= epsilon`` and the image constraint
    ``x + eta + delta in [lower, upper]`` satisfied.  The interval is clipped
    to bracket zero so rounding in the accumulation of ``eta`` can never
    produce an empty box.
    """
    a = np.minimum(np.maximum(-epsilon - eta, lower - x - eta), 0.0)
    b = np.maximum(np.minimum(epsilon - eta, upper - x - eta), 0.0)
    return a, b


def feasible_box(X: InputTensor, eta: Perturbation) -> FeasibleBox:
    """Pixel-wise bounds for the next step at the current perturbed point."""
    _check_feasible(X, eta.values, eta.epsilon_inf)
    a, b = perturbation_bounds(X.data, eta.values, eta.epsilon_inf, X.lower, X.upper)
    return FeasibleBox(lower=a, upper=b)


def _check_feasible(X: InputTensor, eta: np.ndarray, epsilon: float) -> None:
    if eta.size != X.n:
        raise ContractError(f"perturbation length {eta.size} != image size {X.n}")
    if np.abs(eta).max(initial=0.0) > epsilon + FEASIBILITY_TOL:
        raise ContractError("current perturbation exceeds the l-infinity budget")
    point = X.data + eta
    if point.min() < X.lower - FEASIBILITY_TOL or point.max() > X.upper + FEASIBILITY_TOL:
        raise ContractError("current perturbed point leaves the image box")


def evaluate_loss(
    oracle: QueryOracle, X: InputTensor, eta: Perturbation, t: int
) -> tuple[float, int]:
    """One counted oracle call at ``X + eta``: (loss value, predicted class)."""
    _check_feasible(X, eta.values, eta.epsilon_inf)
    logits = oracle.query(X.data + eta.values)
    return loss(logits, t), int(np.argmax(logits))


def is_success(predicted: int, t: int) -> bool:
    """A targeted attack succeeds exactly when the prediction equals the target."""
    return predicted == t


class AttackProblem:
    """One attack instance: image, target, budget arithmetic, query bookkeeping.

    All five attack loops are written against this object so feasibility
    handling and query accounting live in one place.  ``domain`` is the set of
    flat coordinates the attack may touch; by default all of them, or the
    caller-provided mask for fixed-pixel-count runs.
    """

    def __init__(
        self,
        oracle: QueryOracle,
        X: InputTensor,
        target: int,
        epsilon: float,
        mask=None,
    ):
        if not epsilon > 0:
            raise ContractError(f"epsilon must be positive, got {epsilon}")
        self.oracle = oracle
        self.X = X
        self.target = int(target)
        self.epsilon = float(epsilon)
        self.n = X.n
        if mask is None:
            self.domain = np.arange(self.n)
        else:
            self.domain = np.unique(np.asarray(mask, dtype=int))
            if self.domain.size == 0:
                raise ContractError("mask must select at least one coordinate")
            if self.domain[0] < 0 or self.domain[-1] >= self.n:
                raise ContractError("mask indices outside the coordinate range")
        self.masked = mask is not None
        # Absolute bounds for the total perturbation, clipped to bracket zero.
        self.eta_lower = np.minimum(np.maximum(-self.epsilon, X.lower - X.data), 0.0)
        self.eta_upper = np.maximum(np.minimum(self.epsilon, X.upper - X.data), 0.0)
        self._start_count = oracle.query_count

    @property
    def queries(self) -> int:
        """Queries this attack has spent on its oracle."""
        return self.oracle.query_count - self._start_count

    def evaluate(self, eta: np.ndarray) -> tuple[float, int]:
        """One counted query at ``X + eta``."""
        logits = self.oracle.query(self.X.data + eta)
        return loss(logits, self.target), int(np.argmax(logits))

    def step_bounds(self, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = np.minimum(self.eta_lower - eta, 0.0)
        b = np.maximum(self.eta_upper - eta, 0.0)
        return a, b

    def clip_eta(self, eta: np.ndarray) -> np.ndarray:
        return np.clip(eta, self.eta_lower, self.eta_upper)

    def check_feasible(self, eta: np.ndarray) -> None:
        if np.abs(eta).max(initial=0.0) > self.epsilon + FEASIBILITY_TOL:
            raise ContractError("accumulated perturbation left the budget ball")
        point = self.X.data + eta
        if (
            point.min() < self.X.lower - FEASIBILITY_TOL
            or point.max() > self.X.upper + FEASIBILITY_TOL
        ):
            raise ContractError("accumulated perturbation left the image box")

    def result(
        self, success: bool, eta: np.ndarray, final_loss: float, prediction: int, level=None
    ) -> AttackResult:
        return AttackResult(
            success=bool(success),
            queries=self.queries,
            eta=np.asarray(eta, dtype=float).copy(),
            final_loss=float(final_loss),
            final_prediction=int(prediction),
            level=level,
        )
