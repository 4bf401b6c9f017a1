"""Huber loss, its gradient, and the weighted Huber-loss minimizer.

The minimizer uses the Weiszfeld-type fixed-point update

    c <- sum_i a_i y_i / sum_i a_i,   a_i = w_i * min(1, T_i / ||c - y_i||)

which is a majorize-minimize step for the Huber objective, so the objective
never increases along the iterates. Points within ``T_i`` of the iterate
(including exact collisions) get ``a_i = w_i``; there is no singularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

MAX_ITERATIONS_CAP = 1_000_000
RELATIVE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class HuberConfig:
    """Stopping rule for :func:`weiszfeld_minimize`.

    ``tolerance=None`` means ``RELATIVE_TOLERANCE * max_i T_i``.
    ``init`` is ``"weighted-mean"``, ``"coordinate-median"`` or an explicit vector.
    """

    tolerance: float | None = None
    max_iterations: int = min(10 * math.ceil(1 / RELATIVE_TOLERANCE), MAX_ITERATIONS_CAP)
    init: Union[str, Sequence[float], np.ndarray] = "weighted-mean"

    def __post_init__(self):
        if self.tolerance is not None and not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if isinstance(self.init, str) and self.init not in ("weighted-mean", "coordinate-median"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class MinimizerResult:
    point: np.ndarray
    iterations: int
    final_step_norm: float
    converged: bool
    tolerance: float


def _check_threshold(T):
    if np.any(np.asarray(T) <= 0):
        raise ValueError("Huber threshold T must be positive")


def huber_loss(s, y, T: float) -> float:
    _check_threshold(T)
    r = float(np.linalg.norm(np.asarray(s, dtype=float) - np.asarray(y, dtype=float)))
    if r <= T:
        return 0.5 * r * r
    return T * r - 0.5 * T * T


def huber_gradient(s, y, T: float) -> np.ndarray:
    """Gradient in ``s``; its norm is ``min(T, ||s - y||)``."""
    _check_threshold(T)
    diff = np.asarray(s, dtype=float) - np.asarray(y, dtype=float)
    r = float(np.linalg.norm(diff))
    if r <= T:
        return diff
    return T * diff / r


def _as_arrays(summaries):
    means = np.atleast_2d(np.array([np.atleast_1d(s.mean) for s in summaries], dtype=float))
    weights = np.array([s.weight for s in summaries], dtype=float)
    thresholds = np.array([s.threshold for s in summaries], dtype=float)
    return means, weights, thresholds


def objective(s, summaries) -> float:
    means, weights, thresholds = _as_arrays(summaries)
    return objective_arrays(s, means, weights, thresholds)


def objective_arrays(s, means, weights, thresholds) -> float:
    _check_threshold(thresholds)
    r = np.linalg.norm(means - np.asarray(s, dtype=float), axis=1)
    thresholds = np.broadcast_to(thresholds, r.shape)
    loss = np.where(r <= thresholds, 0.5 * r * r, thresholds * r - 0.5 * thresholds**2)
    return float(np.dot(weights, loss))


def gradient_arrays(s, means, weights, thresholds) -> np.ndarray:
    diff = np.asarray(s, dtype=float) - means
    r = np.linalg.norm(diff, axis=1)
    scale = np.minimum(1.0, thresholds / np.maximum(r, np.finfo(float).tiny))
    return (weights * scale) @ diff


def weiszfeld_minimize(summaries, cfg: HuberConfig | None = None) -> MinimizerResult:
    """Minimize ``sum_i w_i * huber(s, y_i; T_i)`` over ``s``.

    At return, the Huber gradient at the second-to-last iterate has norm at
    most ``final_step_norm`` (the update weights sum to at most 1), so a
    converged result has gradient norm below ``tolerance``.
    """
    if len(summaries) == 0:
        raise ValueError("need at least one user summary")
    means, weights, thresholds = _as_arrays(summaries)
    if np.any(np.isnan(weights)) or np.any(np.isnan(thresholds)):
        raise ValueError("weights and thresholds must be set before minimizing")
    return minimize_arrays(means, weights, thresholds, cfg)


def minimize_arrays(means, weights, thresholds, cfg: HuberConfig | None = None) -> MinimizerResult:
    cfg = cfg or HuberConfig()
    means = np.atleast_2d(np.asarray(means, dtype=float))
    weights = np.asarray(weights, dtype=float)
    thresholds = np.broadcast_to(np.asarray(thresholds, dtype=float), weights.shape)
    _check_threshold(thresholds)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must be nonnegative and sum to 1 (sum={weights.sum()!r})")
    tol = cfg.tolerance if cfg.tolerance is not None else RELATIVE_TOLERANCE * float(thresholds.max())

    if isinstance(cfg.init, str):
        if cfg.init == "weighted-mean":
            c = weights @ means
        else:
            c = np.median(means, axis=0)
    else:
        c = np.asarray(cfg.init, dtype=float).reshape(means.shape[1])

    tiny = np.finfo(float).tiny
    step = math.inf
    for it in range(1, cfg.max_iterations + 1):
        r = np.sqrt(np.einsum("ij,ij->i", means - c, means - c))
        a = weights * np.minimum(1.0, thresholds / np.maximum(r, tiny))
        c_new = (a @ means) / a.sum()
        if not np.all(np.isfinite(c_new)):
            raise FloatingPointError(f"non-finite iterate at step {it}")
        step = float(np.linalg.norm(c_new - c))
        c = c_new
        if step < tol:
            return MinimizerResult(c, it, step, True, tol)
    return MinimizerResult(c, cfg.max_iterations, step, False, tol)
