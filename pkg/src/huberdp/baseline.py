"""Two-stage Winsorized mean estimator (WME), used as the comparison baseline.

Stage 1 privately locates a short interval with a Laplace-noised histogram of
user means. Stage 2 clips user means to that interval and releases their
size-weighted average with Gaussian noise. For d > 1 both stages run per
coordinate with the budget split evenly across coordinates (basic
composition); this replaces the Hadamard-rotation variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import log_ndtr

from .dataset import UserDataset, mean_matrix
from .mechanism import EstimationResult, noise_generator

MAX_BINS = 10_000_000


@dataclass(frozen=True)
class WmeConfig:
    """``tau`` is the concentration radius of user means; bins have width ``2 tau``
    and the stage-1 interval has width ``4 tau``."""

    epsilon: float
    delta: float
    tau: float
    range: Tuple[float, float]
    budget_split: Tuple[float, float] = (0.5, 0.5)
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        f1, f2 = self.budget_split
        if not (0 < f1 < 1 and 0 < f2 < 1 and abs(f1 + f2 - 1) < 1e-12):
            raise ValueError("budget_split fractions must lie in (0, 1) and sum to 1")
        lo, hi = self.range
        if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
            raise ValueError(f"degenerate histogram range {self.range}")

    def stage_budgets(self, d: int = 1):
        """Per-coordinate ``(eps1, delta1), (eps2, delta2)``; stage 1 is pure DP."""
        f1, f2 = self.budget_split
        return (self.epsilon * f1 / d, 0.0), (self.epsilon * f2 / d, self.delta / d)


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Smallest Gaussian std giving (epsilon, delta)-DP for an L2 sensitivity.

    Uses the exact privacy profile of the Gaussian mechanism
    ``Phi(D/2s - e s/D) - e^eps Phi(-D/2s - e s/D) <= delta``, valid for any epsilon.
    """
    if sensitivity < 0:
        raise ValueError("sensitivity must be nonnegative")
    if sensitivity == 0 or math.isinf(epsilon):
        return 0.0

    def log_excess(s):
        a = 1 / (2 * s) - epsilon * s
        b = -1 / (2 * s) - epsilon * s
        la, lb = log_ndtr(a), epsilon + log_ndtr(b)
        if lb >= la:
            return -1e3  # profile underflows to 0: constraint holds
        return la + math.log1p(-math.exp(lb - la)) - math.log(delta)

    lo, hi = 1e-3, 1.0
    while log_excess(hi) > 0:
        hi *= 2
    while log_excess(lo) <= 0:
        lo /= 2
    s = brentq(log_excess, lo, hi, xtol=1e-14, rtol=1e-14)
    # brentq can stop just below the root; step up so the constraint holds
    while log_excess(s) > 0:
        s = math.nextafter(s, math.inf)
    return s * sensitivity


def wme_stage1_interval(values, cfg: WmeConfig, rng: np.random.Generator, epsilon1: Optional[float] = None):
    """Noisy-histogram interval ``(a, b)`` of width ``4 tau``.

    Values are clamped to ``cfg.range`` and binned with width ``2 tau``. Each
    user touches one bin, so a replacement changes two counts by one and the
    Laplace scale is ``2 / eps1``. Ties go to the lowest bin.
    """
    eps1 = cfg.stage_budgets()[0][0] if epsilon1 is None else epsilon1
    lo, hi = cfg.range
    width = 2 * cfg.tau
    n_bins = math.ceil((hi - lo) / width)
    if n_bins > MAX_BINS:
        raise ValueError(f"{n_bins} histogram bins exceed the limit {MAX_BINS}; increase tau")
    v = np.clip(np.asarray(values, dtype=float), lo, hi)
    idx = np.minimum(((v - lo) / width).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(float)
    if math.isfinite(eps1):
        counts += rng.laplace(0.0, 2.0 / eps1, size=n_bins)
    j = int(np.argmax(counts))
    mid = lo + (j + 0.5) * width
    return mid - 2 * cfg.tau, mid + 2 * cfg.tau


def wme_stage2_clipped_mean(values, sizes, interval, epsilon2: float, delta2: float,
                            rng: np.random.Generator):
    """Return ``(noisy, deterministic, sigma)`` for the size-weighted clipped mean."""
    a, b = interval
    m = np.asarray(sizes, dtype=float)
    total = m.sum()
    clipped = np.clip(np.asarray(values, dtype=float), a, b)
    det = float(m @ clipped / total)
    sigma = gaussian_sigma(float(m.max()) * (b - a) / total, epsilon2, delta2)
    noisy = det + sigma * rng.standard_normal() if sigma > 0 else det
    return noisy, det, sigma


def wme_estimate(ds: UserDataset, cfg: WmeConfig, rng: Optional[np.random.Generator] = None) -> EstimationResult:
    if rng is None:
        if cfg.seed is None:
            raise ValueError("cfg.seed is required for the noise generator")
        rng = noise_generator(cfg.seed)
    means = mean_matrix(ds)
    sizes = ds.sizes
    d = ds.d
    (eps1, _), (eps2, delta2) = cfg.stage_budgets(d)
    out = np.empty(d)
    det = np.empty(d)
    intervals = []
    sigma = 0.0
    for j in range(d):
        interval = wme_stage1_interval(means[:, j], cfg, rng, eps1)
        out[j], det[j], sigma = wme_stage2_clipped_mean(means[:, j], sizes, interval, eps2, delta2, rng)
        intervals.append([float(interval[0]), float(interval[1])])
    raw = (sizes @ means) / sizes.sum()
    return EstimationResult(
        raw=raw,
        clipped=det,
        output=out,
        noise_scale=sigma,
        method="wme",
        metadata={"intervals": intervals, "tau": cfg.tau, "stage1_epsilon": eps1,
                  "stage2_epsilon": eps2, "stage2_delta": delta2},
    )
