"""Shared fixtures: independent oracles and desk-scale attack instances."""

from __future__ import annotations

import numpy as np
import pytest

from dfoattack.core import FunctionOracle, InputTensor, QueryOracle
from dfoattack.targets import LinearSoftmaxModel


def brute_force_neighbor_variance(arr: np.ndarray) -> np.ndarray:
    """Scalar neighbor-enumeration oracle for the variance map.

    Walks every pixel, lists its existing same-channel neighbors in
    lexicographic offset order, and computes the population variance of the
    center-shifted values.  Kept deliberately loop-based and independent of
    the vectorized production path.
    """
    arr = np.asarray(arr, dtype=float)
    h, w, c = arr.shape
    out = np.zeros((h, w, c))
    for r in range(h):
        for col in range(w):
            for k in range(c):
                center = arr[r, col, k]
                diffs = []
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        if (dr, dc) == (0, 0):
                            continue
                        rr, cc = r + dr, col + dc
                        if 0 <= rr < h and 0 <= cc < w:
                            diffs.append(arr[rr, cc, k] - center)
                if not diffs:
                    continue
                m = len(diffs)
                s1, s2 = 0.0, 0.0
                for d in diffs:
                    s1 += d
                    s2 += d * d
                out[r, col, k] = max(s2 / m - (s1 / m) ** 2, 0.0)
    return out.ravel()


class CheckingOracle(QueryOracle):
    """Counting oracle that asserts every query is feasible before answering."""

    def __init__(self, model, X: InputTensor, epsilon: float, tol: float = 1e-12):
        super().__init__()
        self.model = model
        self.X = X
        self.epsilon = epsilon
        self.tol = tol
        self.violations = 0

    def _logits(self, x: np.ndarray) -> np.ndarray:
        eta = x - self.X.data
        if np.abs(eta).max(initial=0.0) > self.epsilon + self.tol:
            self.violations += 1
        if x.min() < self.X.lower - self.tol or x.max() > self.X.upper + self.tol:
            self.violations += 1
        return self.model.predict(x)


def constant_oracle(logits) -> FunctionOracle:
    logits = np.asarray(logits, dtype=float)
    return FunctionOracle(lambda x: logits)


def affine_loss_model(gradient, shape, offset: float = 0.0) -> LinearSoftmaxModel:
    """Two-class model whose target-0 loss is exactly affine: here

    ``loss(x, t=0) = logits[1] - logits[0] = gradient . x + offset``, so the
    analytic restricted gradient for target 0 equals ``gradient``.
    """
    gradient = np.asarray(gradient, dtype=float).ravel()
    W = np.vstack([np.zeros_like(gradient), gradient])
    return LinearSoftmaxModel(weights=W, biases=np.array([0.0, offset]), shape=shape)


def make_image(rng: np.random.Generator, shape, lower=-0.5, upper=0.5, margin=0.0):
    data = rng.uniform(lower + margin, upper - margin, size=shape)
    return InputTensor.from_array(data, lower=lower, upper=upper)


def minimal_flip_energy(model, X: InputTensor, t: int, grid: int = 400) -> float | None:
    """Brute-force the smallest budget that flips the prediction to ``t`` along
    the descent sign ray.

    The ray follows ``-sign(grad loss at 0)``, clipped to the image box; the
    budget axis is scanned on a grid and the first flip bracket is bisected.
    Returns None when no budget on the ray flips the prediction.
    """
    s = -np.sign(model.loss_gradient(X.data, t))
    lo_img, hi_img = X.lower - X.data, X.upper - X.data

    def flips(eps: float) -> bool:
        eta = np.clip(eps * s, lo_img, hi_img)
        return int(np.argmax(model.predict(X.data + eta))) == t

    eps_max = X.upper - X.lower
    candidates = np.linspace(0.0, eps_max, grid + 1)[1:]
    hit = None
    for eps in candidates:
        if flips(eps):
            hit = eps
            break
    if hit is None:
        return None
    lo = hit - eps_max / grid
    hi = hit
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if flips(mid):
            hi = mid
        else:
            lo = mid
    return hi


def protocol_instance(seed: int, shape=(8, 8, 3), num_classes: int = 10):
    """One seeded linear-softmax attack instance with a brute-forced budget.

    Returns (model, image, target, eps_star) where eps_star is the minimal
    sign-ray flipping energy; instances whose ray never flips are resampled.
    """
    for attempt in range(50):
        rng = np.random.default_rng(seed * 1009 + attempt)
        h, w, c = shape
        n = h * w * c
        W = rng.normal(size=(num_classes, n)) / np.sqrt(n)
        b = 0.1 * rng.normal(size=num_classes)
        model = LinearSoftmaxModel(weights=W, biases=b, shape=shape)
        X = make_image(rng, shape)
        original = int(np.argmax(model.predict(X.data)))
        options = [cls for cls in range(num_classes) if cls != original]
        t = int(rng.choice(options))
        eps_star = minimal_flip_energy(model, X, t)
        if eps_star is not None and 0 < eps_star < 0.6 * (X.upper - X.lower):
            return model, X, t, eps_star
    raise RuntimeError(f"could not build a flippable instance for seed {seed}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
