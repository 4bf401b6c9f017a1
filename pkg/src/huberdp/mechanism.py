"""Parameter selection and the end-to-end private estimator.

Pipeline: user means -> thresholds and weights -> Huber minimizer ->
smooth sensitivity -> clip to ``B(0, R_c)`` -> Gaussian noise with
per-coordinate std ``S(D) / alpha``.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import UserDataset, imbalance_degree, mean_matrix
from .huber import HuberConfig, MinimizerResult, minimize_arrays
from .sensitivity import (
    PrivacyParams,
    SensitivityReport,
    balanced_report,
    imbalanced_report,
    privacy_params,
)

BOUNDED_C_T = 1.1 * 16 * math.sqrt(2 / 3)
REGIMES = ("bounded", "heavy-tail")
MODES = ("balanced", "imbalanced")


class ConditionWarning(UserWarning):
    """The sample-size condition behind the accuracy guarantee does not hold."""


def heavy_tail_c_t(p: float, moment: float) -> float:
    return 1.1 * 8 * moment ** (1 / p)


@dataclass(frozen=True)
class EstimatorConfig:
    """Flat estimator configuration; keys double as the config-file schema.

    ``radius`` is the clipping radius R_c (defaults to ``bound_radius``).
    Threshold precedence: ``threshold`` (fixed T for every user), then
    ``threshold_scale`` A (T = A / sqrt(m), or A / sqrt(m_i ^ m_c) for
    imbalanced users), then the regime's theory rule with constant ``c_t``.
    """

    epsilon: float = 1.0
    delta: float = 1e-5
    radius: Optional[float] = None
    regime: str = "bounded"
    bound_radius: Optional[float] = None
    p: Optional[float] = None
    moment: Optional[float] = None
    c_t: Optional[float] = None
    mode: str = "balanced"
    gamma: Optional[float] = None
    threshold: Optional[float] = None
    threshold_scale: Optional[float] = None
    k0: Optional[int] = None
    delta_method: str = "greedy"
    seed: Optional[int] = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.delta_method not in ("greedy", "exact"):
            raise ValueError("delta_method must be 'greedy' or 'exact'")
        if self.radius is None and self.bound_radius is None:
            raise ValueError("set radius (R_c) or bound_radius (R)")
        for name in ("radius", "bound_radius", "threshold", "threshold_scale", "c_t", "moment"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.regime == "heavy-tail":
            if self.p is None or self.moment is None:
                raise ValueError("heavy-tail regime needs p and moment (M_p)")
            if self.p < 2:
                raise ValueError("heavy-tail regime needs p >= 2")
        if self.gamma is not None and self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.k0 is not None and self.k0 < 1:
            raise ValueError("k0 must be >= 1")

    @property
    def clip_radius(self) -> float:
        return self.radius if self.radius is not None else self.bound_radius

    @property
    def resolved_c_t(self) -> float:
        if self.c_t is not None:
            return self.c_t
        if self.regime == "heavy-tail":
            return heavy_tail_c_t(self.p, self.moment)
        return BOUNDED_C_T

    def privacy(self, d: int) -> PrivacyParams:
        return privacy_params(self.epsilon, self.delta, d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EstimatorConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def replace(self, **changes) -> "EstimatorConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Conditions:
    ok: bool
    message: str


@dataclass
class EstimationResult:
    raw: np.ndarray
    clipped: np.ndarray
    output: np.ndarray
    noise_scale: float
    report: Optional[SensitivityReport] = None
    solver: Optional[MinimizerResult] = None
    conditions: Conditions = Conditions(True, "")
    method: str = "hlm"
    metadata: dict = field(default_factory=dict)

    @property
    def conditions_ok(self) -> bool:
        return self.conditions.ok

    def to_dict(self) -> dict:
        doc = {
            "method": self.method,
            "raw": self.raw.tolist(),
            "clipped": self.clipped.tolist(),
            "output": self.output.tolist(),
            "noise_scale": self.noise_scale,
            "conditions_ok": self.conditions.ok,
            "conditions": self.conditions.message,
            "metadata": self.metadata,
        }
        if self.report is not None:
            doc["sensitivity"] = self.report.to_dict()
        if self.solver is not None:
            doc["solver"] = {
                "iterations": self.solver.iterations,
                "final_step_norm": self.solver.final_step_norm,
                "converged": self.solver.converged,
                "tolerance": self.solver.tolerance,
            }
        return doc


# ---------------------------------------------------------------------------
# parameter rules


def select_threshold_bounded(R: float, m: float, n: int, d: int, C_T: float = BOUNDED_C_T) -> float:
    """``T = C_T R ln(m n^3 (d+1)) / sqrt(m)`` for samples bounded by R."""
    if min(R, m, n, d, C_T) <= 0:
        raise ValueError("all arguments must be positive")
    return C_T * R * math.log(m * n**3 * (d + 1)) / math.sqrt(m)


def select_threshold_heavytail(m: float, n: int, d: int, epsilon: float, p: float, M_p: float,
                               C_T: Optional[float] = None) -> float:
    """Threshold for samples with a bounded p-th moment ``M_p``."""
    if p < 2:
        raise ValueError("p must be >= 2")
    if C_T is None:
        C_T = heavy_tail_c_t(p, M_p)
    nu = math.sqrt(d) / (n * epsilon)
    log_term = math.log(3 * (d + 1) / nu)
    if log_term <= 0:
        raise ValueError(
            f"nu = sqrt(d)/(n*epsilon) = {nu:.3g} >= 3(d+1); increase n or epsilon"
        )
    first = math.sqrt(log_term / m)
    second = 2 * (3 * m) ** (1 / p - 1) * nu ** (-1 / p) * log_term
    return C_T * max(first, second)


@dataclass(frozen=True)
class ImbalancedParams:
    weights: np.ndarray
    thresholds: np.ndarray
    m_c: float
    k_0: int


def select_imbalanced_params(sizes, gamma: float, R: Optional[float] = None, C_T: float = BOUNDED_C_T,
                             d: int = 1, threshold_scale: Optional[float] = None) -> ImbalancedParams:
    """Capped weights ``w_i ~ m_i ^ m_c`` and thresholds ``T_i ~ 1/sqrt(m_i ^ m_c)``.

    Arrays come back in the order of ``sizes``. With ``threshold_scale`` A the
    thresholds are ``A / sqrt(m_i ^ m_c)``; otherwise
    ``C_T sqrt(R^2 ln(N n^2 (d+1)) / (m_i ^ m_c))``.
    """
    m = np.asarray(sizes, dtype=float)
    n = m.size
    total = m.sum()
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    m_c = gamma * total / n
    capped = np.minimum(m, m_c)
    weights = capped / capped.sum()
    if threshold_scale is not None:
        thresholds = threshold_scale / np.sqrt(capped)
    else:
        if R is None:
            raise ValueError("bound radius R is required for the theory thresholds")
        thresholds = C_T * np.sqrt(R**2 * math.log(total * n**2 * (d + 1)) / capped)
    k_0 = math.floor(n / (8 * gamma))
    if k_0 == 0:
        raise ValueError(f"too few users for gamma={gamma:g}: n/(8 gamma) < 1")
    return ImbalancedParams(weights, thresholds, float(m_c), k_0)


def clip(v, R_c: float) -> np.ndarray:
    """Project onto the closed ball ``B(0, R_c)``."""
    if not R_c > 0:
        raise ValueError("R_c must be positive")
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm <= R_c:
        return v.copy()
    return v * (R_c / norm)


def check_conditions(config: EstimatorConfig, n: int, T, d: int = 1, total: Optional[int] = None,
                     gamma: Optional[float] = None) -> Conditions:
    """Evaluate the sample-size condition of the accuracy guarantee (privacy never depends on it)."""
    beta = config.privacy(d).beta
    T_min = float(np.min(T))
    if config.mode == "imbalanced":
        g = gamma if gamma is not None else 1.0
        N = total if total is not None else n
        rhs = 8 * g * (1 + math.log(N * n) / (2 * beta))
        label = "n > 8 gamma (1 + ln(Nn) / (2 beta))"
    elif config.regime == "heavy-tail":
        rhs = 8 * (1 + math.log(n / (2 * T_min)) / beta)
        label = "n > 8 (1 + ln(n / 2T) / beta)"
    else:
        rhs = 4 / beta * math.log(n * config.clip_radius / T_min)
        label = "n > (4 / beta) ln(n R_c / T)"
    ok = n > rhs
    msg = f"{label}: n={n}, rhs={rhs:.4g}" + ("" if ok else " (fails; accuracy bound not guaranteed)")
    return Conditions(bool(ok), msg)


def noise_generator(seed) -> np.random.Generator:
    """Counter-based generator for the privacy noise."""
    return np.random.Generator(np.random.Philox(seed))


def balanced_threshold(config: EstimatorConfig, m: float, n: int, d: int) -> float:
    if config.threshold is not None:
        return config.threshold
    if config.threshold_scale is not None:
        return config.threshold_scale / math.sqrt(m)
    if config.regime == "heavy-tail":
        return select_threshold_heavytail(m, n, d, config.epsilon, config.p, config.moment, config.resolved_c_t)
    if config.bound_radius is None:
        raise ValueError("bounded regime needs bound_radius (R) or an explicit threshold")
    return select_threshold_bounded(config.bound_radius, m, n, d, config.resolved_c_t)


def estimate(ds: UserDataset, config: EstimatorConfig, huber_cfg: Optional[HuberConfig] = None,
             rng: Optional[np.random.Generator] = None) -> EstimationResult:
    """Private mean of a user-sharded dataset.

    ``rng`` overrides the generator built from ``config.seed``; one of the two
    is required.
    """
    if rng is None:
        if config.seed is None:
            raise ValueError("config.seed is required for the noise generator")
        rng = noise_generator(config.seed)
    means = mean_matrix(ds)
    sizes = ds.sizes
    n, d = ds.n, ds.d
    pp = config.privacy(d)
    R_c = config.clip_radius
    meta: dict = {"mode": config.mode, "regime": config.regime, "alpha": pp.alpha, "beta": pp.beta}

    if config.mode == "balanced":
        m = int(sizes.min())
        T = balanced_threshold(config, m, n, d)
        weights = np.full(n, 1.0 / n)
        thresholds = np.full(n, T)
        solver = minimize_arrays(means, weights, thresholds, huber_cfg)
        report = balanced_report(means, T, R_c, pp.beta, config.delta_method)
        conditions = check_conditions(config, n, T, d)
        meta.update(threshold=T, m=m)
    else:
        if config.regime == "heavy-tail" and config.threshold is None and config.threshold_scale is None:
            raise ValueError("imbalanced mode supports the bounded threshold rule only; set threshold_scale")
        gamma = config.gamma if config.gamma is not None else imbalance_degree(sizes).gamma
        params = select_imbalanced_params(
            sizes, gamma, config.bound_radius, config.resolved_c_t, d, config.threshold_scale
        )
        thresholds = params.thresholds if config.threshold is None else np.full(n, config.threshold)
        k_0 = config.k0 if config.k0 is not None else params.k_0
        solver = minimize_arrays(means, params.weights, thresholds, huber_cfg)
        # equal (public) sizes give equal weights and thresholds, where the
        # balanced analysis applies; an explicit k0 keeps the weighted one
        reduces = bool(np.all(sizes == sizes[0])) and np.all(thresholds == thresholds[0]) and config.k0 is None
        if reduces:
            report = balanced_report(means, float(thresholds[0]), R_c, pp.beta, config.delta_method)
        else:
            report = imbalanced_report(means, params.weights, thresholds, k_0, R_c, pp.beta, config.delta_method)
        conditions = check_conditions(config, n, thresholds, d, ds.total, gamma)
        meta.update(gamma=gamma, m_c=params.m_c, k_0=k_0, thresholds=thresholds.tolist(),
                    weights=params.weights.tolist(), analysis="balanced" if reduces else "weighted")

    if not conditions.ok:
        warnings.warn(conditions.message, ConditionWarning, stacklevel=2)
    clipped = clip(solver.point, R_c)
    sigma = report.smooth_sensitivity / pp.alpha
    output = clipped + sigma * rng.standard_normal(d) if sigma > 0 else clipped.copy()
    meta["solver_converged"] = solver.converged
    return EstimationResult(
        raw=solver.point,
        clipped=clipped,
        output=output,
        noise_scale=sigma,
        report=report,
        solver=solver,
        conditions=conditions,
        method="hlm",
        metadata=meta,
    )
