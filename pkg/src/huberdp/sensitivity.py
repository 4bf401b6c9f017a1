"""Spread statistics, outlier counts and smooth sensitivity of the clipped Huber minimizer.

Two configurations are covered:

* balanced users (equal weights ``1/n`` and a single threshold ``T``), and
* imbalanced users (weights ``w_i`` and thresholds ``T_i`` per user).

In both cases the local sensitivity is bounded case by case (no outliers,
a few outliers, fallback ``2 R_c``) and smoothed as
``S(D) = max_k exp(-beta k) G(D, k)``. Every ``G`` value is additionally
capped at ``2 R_c``: the clipped output can never move further than that, and
the cap keeps ``G(D, k) <= G(D', k + 1)`` intact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

EXHAUSTIVE_LIMIT = 20

CASE_NO_OUTLIERS = "no-outliers"
CASE_FEW_OUTLIERS = "few-outliers"
CASE_FALLBACK = "fallback"


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    alpha: float
    beta: float
    dimension: int


def privacy_params(epsilon: float, delta: float, d: int) -> PrivacyParams:
    """Gaussian smooth-sensitivity calibration constants ``(alpha, beta)``.

    Noise ``N(0, (S/alpha)^2 I)`` with a ``beta``-smooth bound ``S`` gives
    ``(epsilon, delta)``-DP.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if d == 1:
        log_term = math.log(1 / delta)
        alpha = epsilon / math.sqrt(log_term)
        beta = epsilon / (2 * log_term)
    else:
        log_term = math.log(2 / delta)
        alpha = epsilon / (5 * math.sqrt(2 * log_term))
        beta = epsilon / (4 * (d + log_term))
    return PrivacyParams(epsilon, delta, alpha, beta, d)


# ---------------------------------------------------------------------------
# spread statistics


def _means(means) -> np.ndarray:
    arr = np.asarray(means, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def spread_balanced(means):
    """Return ``(Z, ybar)``: the unweighted average and the largest distance to it."""
    y = _means(means)
    center = y.mean(axis=0)
    return float(np.linalg.norm(y - center, axis=1).max()), center


def residuals_weighted(summaries) -> np.ndarray:
    y = _means([s.mean for s in summaries])
    w = np.array([s.weight for s in summaries], dtype=float)
    return weighted_residuals(y, w)


def weighted_residuals(means, weights) -> np.ndarray:
    y = _means(means)
    w = np.asarray(weights, dtype=float)
    return np.linalg.norm(y - w @ y, axis=1)


def h_statistic(summaries, k: int, residuals=None) -> float:
    """Influence ratio of ``k`` replaced users on the weighted minimizer.

    ``h(D, k) = sum of the k largest w_i (T_i + Z_i) / (1 - sum of the k largest w_i)``.
    With users sorted by size and weights nondecreasing in size, the
    denominator is ``sum_{i <= n-k} w_i``. The numerator takes the k largest
    terms rather than the k largest users so that it bounds every choice of
    replaced set.
    """
    w = np.array([s.weight for s in summaries], dtype=float)
    t = np.array([s.threshold for s in summaries], dtype=float)
    if residuals is None:
        residuals = weighted_residuals([s.mean for s in summaries], w)
    n = len(w)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, n-1] = [1, {n - 1}], got {k}")
    return _h(w, t, np.asarray(residuals, dtype=float), k)


def _h(w, t, z, k) -> float:
    n = w.size
    if k <= 0:
        return 0.0
    if k >= n:
        return math.inf
    num = np.sort(w * (t + z))[::-1][:k].sum()
    den = np.sort(w)[: n - k].sum()
    return float(num / den) if den > 0 else math.inf


# ---------------------------------------------------------------------------
# outlier count (balanced)


@dataclass(frozen=True)
class Witness:
    """Kept users and the average of the modified dataset.

    Replaced users are all moved to one common point chosen so that the
    modified dataset averages to ``center``.
    """

    kept: tuple
    center: np.ndarray

    def replaced(self, n: int) -> tuple:
        keep = set(self.kept)
        return tuple(i for i in range(n) if i not in keep)


def modified_means(means, witness: Witness, weights=None) -> np.ndarray:
    """User means of the modified dataset described by ``witness``."""
    y = _means(means).copy()
    n = y.shape[0]
    rep = list(witness.replaced(n))
    if not rep:
        return y
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    kept = list(witness.kept)
    w_rep = w[rep].sum()
    # weighted average of the result equals center
    point = (witness.center - w[kept] @ y[kept]) / w_rep
    y[rep] = point
    return y


def balanced_witness_ok(means, T: float, witness: Witness) -> bool:
    z, _ = spread_balanced(modified_means(means, witness))
    return z < T / 2


def _ball_intersection(points, radii) -> Optional[np.ndarray]:
    """A point strictly inside every ball ``B(points[j], radii[j])``, or None."""
    d = points.shape[1]
    if d == 1:
        lo = np.max(points[:, 0] - radii)
        hi = np.min(points[:, 0] + radii)
        return np.array([(lo + hi) / 2]) if lo < hi else None

    r2 = radii**2

    def cons(x):
        c, u = x[:d], x[d]
        return u * r2 - np.sum((points - c) ** 2, axis=1)

    def cons_jac(x):
        c = x[:d]
        return np.hstack([2 * (points - c), r2[:, None]])

    best = None
    for start in (points[-1], points[:-1].mean(axis=0)):
        u0 = float(np.max(np.sum((points - start) ** 2, axis=1) / r2)) * 1.01 + 1e-12
        res = minimize(
            lambda x: x[d],
            np.append(start, u0),
            jac=lambda x: np.append(np.zeros(d), 1.0),
            constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 200},
        )
        c = res.x[:d]
        if np.all(np.linalg.norm(points - c, axis=1) < radii):
            return c
        if best is None or res.x[d] < best:
            best = res.x[d]
    return None


def _subset_center(y, kept, k, T, pair_ok=None) -> Optional[np.ndarray]:
    """Center for kept set ``kept`` after ``k`` replacements, or None.

    ``pair_ok`` is an optional precomputed ``||y_i - y_j|| < T`` matrix.
    """
    n = y.shape[0]
    idx = np.asarray(kept)
    pts = y[idx]
    mu = pts.mean(axis=0)
    dist = np.linalg.norm(pts - mu, axis=1)
    if dist.max() < T / 2:
        return mu
    if k == 0:
        return None
    r_mu = k * T / (2 * (n - k))
    if dist.max() >= T / 2 + r_mu:
        return None
    points = np.vstack([pts, mu])
    radii = np.append(np.full(idx.size, T / 2), r_mu)
    if y.shape[1] == 1:
        return _ball_intersection(points, radii)
    # two kept points at distance >= T cannot share a center
    if pair_ok is not None:
        if not pair_ok[np.ix_(idx, idx)].all():
            return None
    elif np.max(np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)) >= T:
        return None
    return _ball_intersection(points, radii)


def delta_exact(means, T: float, k_max: int):
    """Minimum number of replaced users that makes the dataset concentrated.

    Returns ``(delta, witness)`` with the smallest ``k <= k_max`` for which some
    modified dataset at Hamming distance ``k`` has ``Z < T/2``, or
    ``(None, None)``.

    Replaced users can be placed anywhere, so the condition for a kept set K
    of size ``n-k`` is the existence of a center ``c`` with
    ``||y_i - c|| < T/2`` on K and ``(n-k) ||c - mean(K)|| < k T / 2``.
    The search is exhaustive over kept sets and gated to ``n <= EXHAUSTIVE_LIMIT``
    unless ``k_max`` is small.
    """
    y = _means(means)
    n = y.shape[0]
    k_max = min(int(k_max), n - 1)
    if k_max < 0:
        return None, None
    if n > EXHAUSTIVE_LIMIT and k_max > 3:
        raise ValueError(f"exhaustive search is limited to n <= {EXHAUSTIVE_LIMIT} (or k_max <= 3)")
    # greedy gives a certified upper bound; only smaller k need the search
    g_delta, g_witness = delta_greedy(y, T, k_max)
    upper = g_delta if g_delta is not None else k_max + 1
    pair = np.linalg.norm(y[:, None, :] - y[None, :, :], axis=2) < T
    for k in range(0, upper):
        for kept in itertools.combinations(range(n), n - k):
            c = _subset_center(y, kept, k, T, pair)
            if c is not None:
                return k, Witness(tuple(kept), c)
    if g_delta is None:
        return None, None
    return g_delta, g_witness


def delta_greedy(means, T: float, k_max: int):
    """Upper bound on the outlier count by farthest-point removal.

    Repeatedly drops the kept user farthest from the kept mean (lowest index on
    ties). At each step the kept set is tested with the same free-center
    condition as :func:`delta_exact`, so the result is a certified witness.
    """
    y = _means(means)
    n = y.shape[0]
    k_max = min(int(k_max), n - 1)
    if k_max < 0:
        return None, None
    kept = np.arange(n)
    for k in range(k_max + 1):
        mu = y[kept].mean(axis=0)
        dist = np.linalg.norm(y[kept] - mu, axis=1)
        far = int(np.argmax(dist))
        if dist[far] < T / 2:
            return k, Witness(tuple(int(i) for i in kept), mu)
        if k > 0:
            c = _subset_center(y, kept, k, T)
            if c is not None:
                return k, Witness(tuple(int(i) for i in kept), c)
        kept = np.delete(kept, far)
    return None, None


# ---------------------------------------------------------------------------
# outlier count (imbalanced)


def _imbalanced_condition(y, w, t, k_0, removed) -> tuple:
    """Check ``h(D*, k_0) < min_i (T_i - Z_i(D*))`` for the kept-mean witness."""
    keep = np.ones(y.shape[0], dtype=bool)
    keep[list(removed)] = False
    wk = w[keep]
    center = wk @ y[keep] / wk.sum()
    z = np.where(keep, np.linalg.norm(y - center, axis=1), 0.0)
    ok = _h(w, t, z, k_0) < np.min(t - z)
    return ok, center, z


def imbalanced_witness_ok(means, weights, thresholds, k_0: int, witness: Witness) -> bool:
    w = np.asarray(weights, dtype=float)
    t = np.asarray(thresholds, dtype=float)
    ystar = modified_means(means, witness, w)
    z = weighted_residuals(ystar, w)
    return _h(w, t, z, k_0) < np.min(t - z)


def delta_exact_imbalanced(means, weights, thresholds, k_0: int, k_max: int):
    """Exhaustive outlier count for imbalanced users.

    Replaced users sit at the weighted mean of the kept users, so the modified
    dataset's weighted average equals that mean and their residuals are 0.
    """
    y = _means(means)
    w = np.asarray(weights, dtype=float)
    t = np.asarray(thresholds, dtype=float)
    n = y.shape[0]
    k_max = min(int(k_max), n - 1)
    if n > EXHAUSTIVE_LIMIT and k_max > 3:
        raise ValueError(f"exhaustive search is limited to n <= {EXHAUSTIVE_LIMIT} (or k_max <= 3)")
    for k in range(0, k_max + 1):
        for removed in itertools.combinations(range(n), k):
            ok, center, _ = _imbalanced_condition(y, w, t, k_0, removed)
            if ok:
                kept = tuple(i for i in range(n) if i not in removed)
                return k, Witness(kept, center)
    return None, None


def delta_greedy_imbalanced(means, weights, thresholds, k_0: int, k_max: int):
    """Greedy outlier count for imbalanced users.

    Drops the kept user with the smallest slack ``T_i - Z_i(D*)`` (for equal
    thresholds, the farthest user) until the condition holds.
    """
    y = _means(means)
    w = np.asarray(weights, dtype=float)
    t = np.asarray(thresholds, dtype=float)
    n = y.shape[0]
    k_max = min(int(k_max), n - 1)
    removed: list = []
    for k in range(k_max + 1):
        ok, center, z = _imbalanced_condition(y, w, t, k_0, removed)
        if ok:
            kept = tuple(i for i in range(n) if i not in set(removed))
            return k, Witness(kept, center)
        slack = t - z
        slack[removed] = np.inf
        removed.append(int(np.argmin(slack)))
    return None, None


# ---------------------------------------------------------------------------
# case-split bounds and smoothing


def g_balanced(z: float, delta_hat: Optional[int], T: float, R_c: float, n: int, k: int) -> float:
    fallback = 2 * R_c
    if k == 0 and n > 2 and z < (1 - 2 / n) * T:
        return min((T + z) / (n - 1), fallback)
    if delta_hat is not None and k <= n / 4 - 1 - delta_hat:
        return min(2 * T / (n - k - delta_hat), fallback)
    return fallback


def g_imbalanced(summaries, residuals, delta_hat: Optional[int], k_0: int, R_c: float, k: int) -> float:
    w = np.array([s.weight for s in summaries], dtype=float)
    t = np.array([s.threshold for s in summaries], dtype=float)
    return _ImbalancedG(w, t, np.asarray(residuals, dtype=float), delta_hat, k_0, R_c)(k)


class _ImbalancedG:
    """``G(D, k)`` for imbalanced users with the per-dataset pieces precomputed."""

    def __init__(self, w, t, z, delta_hat, k_0, R_c):
        self.n = w.size
        self.fallback = 2 * R_c
        self.delta_hat = delta_hat
        self.k_0 = k_0
        self.smallest = np.concatenate([[0.0], np.cumsum(np.sort(w))])
        self.peak = float(np.max(w * t))
        self.h1 = _h(w, t, z, 1) if self.n >= 2 else math.inf
        self.case_a = self.h1 <= float(np.min(t - z))

    def __call__(self, k: int) -> float:
        if k == 0 and self.case_a:
            return min(self.h1, self.fallback)
        if self.delta_hat is not None and k <= self.k_0 - self.delta_hat - 1:
            j = self.n - self.delta_hat - k - 1
            if j >= 1:
                return min(2 * self.peak / self.smallest[j], self.fallback)
        return self.fallback


def smooth_sensitivity(g_fn: Callable[[int], float], beta: float, n: int, g_max: Optional[float] = None):
    """``max_{0<=k<=n} exp(-beta k) G(k)`` and the scanned ``(k, G)`` profile.

    With ``g_max`` (an upper bound on every G value) the scan stops once
    ``exp(-beta k) g_max`` cannot beat the running maximum.
    """
    best = -math.inf
    profile = []
    for k in range(n + 1):
        decay = 1.0 if k == 0 else math.exp(-beta * k)
        if g_max is not None and k > 0 and decay * g_max <= best:
            break
        g = g_fn(k)
        profile.append((k, g))
        best = max(best, decay * g)
    return best, profile


@dataclass
class SensitivityReport:
    z_max: float
    residuals: np.ndarray
    delta_hat: Optional[int]
    delta_method: str
    g_profile: list
    smooth_sensitivity: float
    case_taken: str
    witness: Optional[Witness] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "z_max": self.z_max,
            "residuals": np.asarray(self.residuals).tolist(),
            "delta_hat": self.delta_hat,
            "delta_method": self.delta_method,
            "g_profile": [[int(k), float(g)] for k, g in self.g_profile],
            "smooth_sensitivity": self.smooth_sensitivity,
            "case_taken": self.case_taken,
        }


def _case(g0, fallback, is_a):
    if is_a:
        return CASE_NO_OUTLIERS
    return CASE_FALLBACK if g0 >= fallback else CASE_FEW_OUTLIERS


def balanced_report(means, T: float, R_c: float, beta: float, method: str = "greedy",
                    k_max: Optional[int] = None) -> SensitivityReport:
    y = _means(means)
    n = y.shape[0]
    z, center = spread_balanced(y)
    if k_max is None:
        k_max = math.floor(n / 4 - 1)
    if method == "exact":
        delta_hat, witness = delta_exact(y, T, k_max)
    elif method == "greedy":
        delta_hat, witness = delta_greedy(y, T, k_max)
    else:
        raise ValueError(f"unknown delta method {method!r}")
    fallback = 2 * R_c
    S, profile = smooth_sensitivity(lambda k: g_balanced(z, delta_hat, T, R_c, n, k), beta, n, fallback)
    is_a = n > 2 and z < (1 - 2 / n) * T
    return SensitivityReport(
        z_max=z,
        residuals=np.linalg.norm(y - center, axis=1),
        delta_hat=delta_hat,
        delta_method=method,
        g_profile=profile,
        smooth_sensitivity=S,
        case_taken=_case(profile[0][1], fallback, is_a),
        witness=witness,
    )


def imbalanced_report(means, weights, thresholds, k_0: int, R_c: float, beta: float,
                      method: str = "greedy", k_max: Optional[int] = None) -> SensitivityReport:
    y = _means(means)
    w = np.asarray(weights, dtype=float)
    t = np.broadcast_to(np.asarray(thresholds, dtype=float), w.shape).copy()
    n = y.shape[0]
    z = weighted_residuals(y, w)
    if k_max is None:
        k_max = k_0 - 1
    if k_max < 0:
        delta_hat, witness = None, None
    elif method == "exact":
        delta_hat, witness = delta_exact_imbalanced(y, w, t, k_0, k_max)
    elif method == "greedy":
        delta_hat, witness = delta_greedy_imbalanced(y, w, t, k_0, k_max)
    else:
        raise ValueError(f"unknown delta method {method!r}")
    g = _ImbalancedG(w, t, z, delta_hat, k_0, R_c)
    S, profile = smooth_sensitivity(g, beta, n, g.fallback)
    return SensitivityReport(
        z_max=float(z.max()),
        residuals=z,
        delta_hat=delta_hat,
        delta_method=method,
        g_profile=profile,
        smooth_sensitivity=S,
        case_taken=_case(profile[0][1], g.fallback, g.case_a),
        witness=witness,
    )
