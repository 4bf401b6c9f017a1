"""Synthetic data, tuning sweeps and MSE experiments for HLM and WME.

Seeding: every (cell, trial) pair draws its data from
``SeedSequence([seed, crc32(cell key), trial])``, where the cell key covers the
distribution and the size design but not the method or tuning value. Methods
and grid points therefore see the same datasets (common random numbers).
Privacy noise gets its own stream per method.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import re
import warnings
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .baseline import WmeConfig, wme_estimate
from .dataset import UserDataset
from .mechanism import ConditionWarning, EstimatorConfig, estimate, noise_generator

logger = logging.getLogger(__name__)

CSV_HEADER = ["method", "dist", "d", "n", "m_or_gamma", "trials", "mse_mean", "mse_stderr", "tuned_param"]
KINDS = ("uniform", "gaussian", "lomax", "exponential")
METHODS = ("hlm", "wme")


@dataclass(frozen=True)
class DistributionSpec:
    """Sampling law with i.i.d. coordinates.

    ``params``: uniform ``(lo, hi)``, gaussian ``(mean, std)``, lomax ``(a,)``,
    exponential ``(rate,)``. ``uniform(c, c)`` is a point mass.
    """

    kind: str
    params: tuple
    d: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution {self.kind!r}; expected one of {KINDS}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        p = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        expected = {"uniform": 2, "gaussian": 2, "lomax": 1, "exponential": 1}[self.kind]
        if len(p) != expected:
            raise ValueError(f"{self.kind} takes {expected} parameter(s)")
        if self.kind == "uniform" and p[1] < p[0]:
            raise ValueError("uniform needs lo <= hi")
        if self.kind == "gaussian" and p[1] < 0:
            raise ValueError("gaussian std must be nonnegative")
        if self.kind == "lomax" and p[0] <= 2:
            raise ValueError("lomax needs a > 2 for finite variance")
        if self.kind == "exponential" and p[0] <= 0:
            raise ValueError("exponential rate must be positive")

    @classmethod
    def parse(cls, text: str, d: int = 1) -> "DistributionSpec":
        """Parse ``kind(p1,p2)`` or ``kind:p1,p2``."""
        m = re.fullmatch(r"\s*([a-z]+)\s*(?:[:(]\s*([^)]*?)\s*\)?)?\s*", text)
        if not m:
            raise ValueError(f"cannot parse distribution {text!r}")
        args = tuple(float(t) for t in m.group(2).split(",")) if m.group(2) else ()
        return cls(m.group(1), args, d)

    @property
    def label(self) -> str:
        return f"{self.kind}({','.join(f'{v:g}' for v in self.params)})"

    @property
    def coordinate_mean(self) -> float:
        p = self.params
        if self.kind == "uniform":
            return (p[0] + p[1]) / 2
        if self.kind == "gaussian":
            return p[0]
        if self.kind == "lomax":
            return 1 / (p[0] - 1)
        return 1 / p[0]

    @property
    def coordinate_std(self) -> float:
        p = self.params
        if self.kind == "uniform":
            return (p[1] - p[0]) / math.sqrt(12)
        if self.kind == "gaussian":
            return p[1]
        if self.kind == "lomax":
            a = p[0]
            return math.sqrt(a / ((a - 1) ** 2 * (a - 2)))
        return 1 / p[0]

    @property
    def true_mean(self) -> np.ndarray:
        return np.full(self.d, self.coordinate_mean)

    @property
    def bounded(self) -> bool:
        return self.kind == "uniform"

    @property
    def bound_radius(self) -> Optional[float]:
        """Radius of a ball around 0 containing the support (bounded laws only)."""
        if not self.bounded:
            return None
        return max(abs(self.params[0]), abs(self.params[1])) * math.sqrt(self.d)

    @property
    def clip_radius(self) -> float:
        r = self.bound_radius
        if r is not None:
            return r if r > 0 else 1.0
        return max(1.0, 2 * float(np.linalg.norm(self.true_mean)))

    @property
    def histogram_range(self) -> tuple:
        p = self.params
        if self.kind == "uniform":
            return (p[0], p[1]) if p[1] > p[0] else (p[0] - 1, p[0] + 1)
        if self.kind == "gaussian":
            half = 6 * p[1] if p[1] > 0 else 1.0
            return (p[0] - half, p[0] + half)
        if self.kind == "lomax":
            return (0.0, 10 / (p[0] - 1))
        return (0.0, 10 / p[0])

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        shape = (size, self.d)
        p = self.params
        if self.kind == "uniform":
            return rng.uniform(p[0], p[1], shape) if p[1] > p[0] else np.full(shape, p[0])
        if self.kind == "gaussian":
            return rng.normal(p[0], p[1], shape)
        if self.kind == "lomax":
            # numpy's pareto is the Lomax law a/(1+x)^(a+1)
            return rng.pareto(p[0], shape)
        return rng.exponential(1 / p[0], shape)


# ---------------------------------------------------------------------------
# generators


def gen_balanced(dist: DistributionSpec, n: int, m: int, seed) -> UserDataset:
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    rng = np.random.default_rng(seed)
    values = dist.sample(rng, n * m)
    return UserDataset(values, np.arange(0, n * m + 1, m))


def imbalanced_sizes(n: int, N: int, gamma: float) -> np.ndarray:
    """Sizes ``m_i = s_i - s_{i-1}`` with ``s_i = ceil(N (i/n)^gamma)``.

    Zero sizes are raised to 1 and the surplus is taken from the largest user,
    one unit at a time from whichever user is largest when that user alone
    cannot cover it. The result is sorted ascending and sums to N.
    """
    if n < 1 or N < n:
        raise ValueError("need n >= 1 and N >= n")
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if float(gamma).is_integer():
        g = int(gamma)
        s = [-(-N * i**g // n**g) for i in range(n + 1)]
    else:
        s = [math.ceil(N * (i / n) ** gamma) for i in range(n + 1)]
    sizes = np.diff(np.array(s, dtype=np.int64))
    zeros = sizes < 1
    if zeros.any():
        surplus = int(zeros.sum())
        sizes[zeros] = 1
        top = int(np.argmax(sizes))
        if sizes[top] - surplus >= 1:
            sizes[top] -= surplus
        else:
            for _ in range(surplus):
                sizes[int(np.argmax(sizes))] -= 1
    sizes = np.sort(sizes)
    if sizes[0] < 1 or sizes.sum() != N:
        raise ValueError(f"cannot build {n} nonempty users from N={N} at gamma={gamma}")
    return sizes


def gen_imbalanced(dist: DistributionSpec, n: int, N: int, gamma: float, seed) -> UserDataset:
    sizes = imbalanced_sizes(n, N, gamma)
    rng = np.random.default_rng(seed)
    values = dist.sample(rng, int(N))
    return UserDataset(values, np.concatenate([[0], np.cumsum(sizes)]))


# ---------------------------------------------------------------------------
# experiment specs


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep cell.

    Exactly one size design: ``m`` (balanced) or ``N`` with ``gamma`` (power law).
    ``param`` is the tuning constant: A for HLM (T = A / sqrt(m), or
    A / sqrt(m_i ^ m_c)), B for WME (tau = B / sqrt(N / n)). With ``param=None``
    HLM uses the theory threshold on bounded laws, and both methods otherwise
    fall back to ``default_param``. ``k0`` overrides the outlier-count
    horizon of imbalanced HLM (default ``floor(n / (8 gamma))``).
    """

    dist: DistributionSpec
    n: int
    method: str = "hlm"
    m: Optional[int] = None
    N: Optional[int] = None
    gamma: Optional[float] = None
    trials: int = 10
    seed: int = 0
    epsilon: float = 1.0
    delta: float = 1e-5
    param: Optional[float] = None
    tuning_grid: tuple = ()
    k0: Optional[int] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if (self.m is None) == (self.N is None and self.gamma is None):
            raise ValueError("set either m (balanced) or N and gamma (power law)")
        if self.m is None and (self.N is None or self.gamma is None):
            raise ValueError("power-law sizes need both N and gamma")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        object.__setattr__(self, "tuning_grid", tuple(float(v) for v in self.tuning_grid))
        if self.gamma is not None:
            object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def balanced(self) -> bool:
        return self.m is not None

    @property
    def m_or_gamma(self):
        return self.m if self.balanced else self.gamma

    @property
    def cell_key(self) -> str:
        design = f"m={self.m}" if self.balanced else f"N={self.N},gamma={self.gamma!r}"
        return f"{self.dist.label}|d={self.dist.d}|n={self.n}|{design}"

    @property
    def typical_size(self) -> float:
        return self.m if self.balanced else self.N / self.n

    def default_param(self) -> float:
        """Concentration-based constant: user means lie within
        ``std * sqrt(2 ln(4n)) / sqrt(m)`` of the mean with high probability."""
        radius = self.dist.coordinate_std * math.sqrt(2 * math.log(4 * self.n))
        return 2 * radius if self.method == "hlm" else radius

    def with_param(self, value: Optional[float]) -> "ExperimentSpec":
        return replace(self, param=value)


def _seed(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(p) for p in parts])


def dataset_for(spec: ExperimentSpec, trial: int) -> UserDataset:
    ss = _seed(spec.seed, zlib.crc32(spec.cell_key.encode()), trial)
    if spec.balanced:
        return gen_balanced(spec.dist, spec.n, spec.m, ss)
    return gen_imbalanced(spec.dist, spec.n, spec.N, spec.gamma, ss)


def noise_seed(spec: ExperimentSpec, trial: int) -> np.random.SeedSequence:
    return _seed(spec.seed, zlib.crc32(spec.cell_key.encode()), trial, zlib.crc32(spec.method.encode()))


def hlm_config(spec: ExperimentSpec, ds: UserDataset) -> EstimatorConfig:
    dist = spec.dist
    mode = "balanced" if spec.balanced else "imbalanced"
    param = spec.param
    if param is None and not dist.bounded:
        param = spec.default_param()
    return EstimatorConfig(
        epsilon=spec.epsilon,
        delta=spec.delta,
        radius=dist.clip_radius,
        bound_radius=dist.bound_radius if dist.bounded and dist.bound_radius > 0 else None,
        mode=mode,
        threshold_scale=param,
        k0=spec.k0,
    )


def wme_config(spec: ExperimentSpec) -> WmeConfig:
    B = spec.param if spec.param is not None else spec.default_param()
    return WmeConfig(
        epsilon=spec.epsilon,
        delta=spec.delta,
        tau=B / math.sqrt(spec.typical_size),
        range=spec.dist.histogram_range,
    )


def run_trial(spec: ExperimentSpec, trial: int) -> float:
    """Squared error of one private estimate against the analytic mean."""
    ds = dataset_for(spec, trial)
    rng = noise_generator(noise_seed(spec, trial))
    if spec.method == "hlm":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConditionWarning)
            result = estimate(ds, hlm_config(spec, ds), rng=rng)
    else:
        result = wme_estimate(ds, wme_config(spec), rng=rng)
    return float(np.sum((result.output - spec.dist.true_mean) ** 2))


def trial_errors(spec: ExperimentSpec) -> np.ndarray:
    return np.array([run_trial(spec, t) for t in range(spec.trials)])


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class Row:
    method: str
    dist: str
    d: int
    n: int
    m_or_gamma: object
    trials: int
    mse_mean: float
    mse_stderr: float
    tuned_param: Optional[float] = None
    mse_median: float = math.nan
    error: Optional[str] = None

    def csv_fields(self) -> list:
        def num(v):
            return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)

        return [self.method, self.dist, str(self.d), str(self.n), num(self.m_or_gamma), str(self.trials),
                num(self.mse_mean), num(self.mse_stderr), num(self.tuned_param)]


def summarize(spec: ExperimentSpec, errors: np.ndarray, tuned: Optional[float] = None) -> Row:
    k = errors.size
    stderr = float(errors.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    return Row(spec.method, spec.dist.label, spec.dist.d, spec.n, spec.m_or_gamma, spec.trials,
               float(errors.mean()), stderr, tuned, float(np.median(errors)))


@dataclass
class TuneResult:
    best: float
    table: list = field(default_factory=list)  # (value, mse_mean, mse_stderr, mse_median)
    errors: dict = field(default_factory=dict)


def tune_hyperparameter(spec: ExperimentSpec, candidates: Sequence[float]) -> TuneResult:
    """Grid search for the value with the lowest mean squared error (ties go to the smaller value).

    Candidates share datasets and noise draws, so the comparison is paired.
    """
    grid = sorted(float(v) for v in candidates)
    if not grid:
        raise ValueError("tuning grid is empty")
    table, errors = [], {}
    for value in grid:
        errs = trial_errors(spec.with_param(value))
        row = summarize(spec, errs)
        errors[value] = errs
        table.append((value, row.mse_mean, row.mse_stderr, row.mse_median))
        logger.debug("tune %s %s param=%g mse=%.4g", spec.method, spec.cell_key, value, row.mse_mean)
    means = [t[1] for t in table]
    best = table[int(np.argmin(means))][0]
    return TuneResult(best, table, errors)


def run_cell(spec: ExperimentSpec) -> Row:
    if spec.tuning_grid:
        tuned = tune_hyperparameter(spec, spec.tuning_grid)
        return summarize(spec.with_param(tuned.best), tuned.errors[tuned.best], tuned.best)
    return summarize(spec, trial_errors(spec), spec.param)


def mse_sweep(specs: Iterable[ExperimentSpec]) -> list:
    """Run every cell; a failing cell becomes a NaN row carrying the error text."""
    rows = []
    for spec in specs:
        try:
            rows.append(run_cell(spec))
        except Exception as exc:  # keep the sweep going
            logger.warning("cell %s/%s failed: %s", spec.method, spec.cell_key, exc)
            rows.append(Row(spec.method, spec.dist.label, spec.dist.d, spec.n, spec.m_or_gamma, spec.trials,
                            math.nan, math.nan, spec.param, math.nan, str(exc)))
    return rows


def emit_csv(rows: Sequence[Row], path=None) -> str:
    """Write rows with the fixed header; returns the CSV text. ``path=None`` only returns it."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.csv_fields())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return list(reader)
