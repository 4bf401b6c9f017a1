import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from huberdp.baseline import (
    MAX_BINS,
    WmeConfig,
    gaussian_sigma,
    wme_estimate,
    wme_stage1_interval,
    wme_stage2_clipped_mean,
)
from huberdp.dataset import UserDataset


def profile(sigma, eps):
    """Exact privacy profile of the unit-sensitivity Gaussian mechanism."""
    return norm.cdf(1 / (2 * sigma) - eps * sigma) - math.exp(eps) * norm.cdf(-1 / (2 * sigma) - eps * sigma)


def test_gaussian_sigma_reference_value():
    assert gaussian_sigma(1.0, 1.0, 1e-5) == pytest.approx(3.73, abs=0.005)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 8), st.floats(1e-9, 0.1))
def test_gaussian_sigma_is_tight(eps, delta):
    s = gaussian_sigma(1.0, eps, delta)
    assert profile(s, eps) <= delta * (1 + 1e-9)
    assert profile(s * (1 - 1e-6), eps) > delta * (1 - 1e-6)
    if eps < 1:
        # never worse than the classical calibration
        assert s <= math.sqrt(2 * math.log(1.25 / delta)) / eps


def test_gaussian_sigma_scaling_and_limits():
    assert gaussian_sigma(3.0, 1.0, 1e-5) == pytest.approx(3 * gaussian_sigma(1.0, 1.0, 1e-5), rel=1e-12)
    assert gaussian_sigma(0.0, 1.0, 1e-5) == 0.0
    assert gaussian_sigma(1.0, math.inf, 1e-5) == 0.0
    with pytest.raises(ValueError):
        gaussian_sigma(-1.0, 1.0, 1e-5)


def test_config_validation():
    with pytest.raises(ValueError):
        WmeConfig(0.0, 1e-5, 1.0, (0, 1))
    with pytest.raises(ValueError):
        WmeConfig(1.0, 0.0, 1.0, (0, 1))
    with pytest.raises(ValueError):
        WmeConfig(1.0, 1e-5, 0.0, (0, 1))
    with pytest.raises(ValueError, match="degenerate"):
        WmeConfig(1.0, 1e-5, 1.0, (1, 1))
    with pytest.raises(ValueError):
        WmeConfig(1.0, 1e-5, 1.0, (0, 1), budget_split=(0.7, 0.7))


def test_budget_accounting():
    cfg = WmeConfig(2.0, 1e-5, 0.1, (-1, 1), budget_split=(0.3, 0.7))
    (e1, d1), (e2, d2) = cfg.stage_budgets()
    assert e1 + e2 == pytest.approx(2.0) and d1 + d2 == pytest.approx(1e-5)
    (e1, d1), (e2, d2) = cfg.stage_budgets(4)
    assert 4 * (e1 + e2) == pytest.approx(2.0) and 4 * (d1 + d2) == pytest.approx(1e-5)
    assert d1 == 0.0


def test_too_many_bins_rejected():
    cfg = WmeConfig(1.0, 1e-5, 1e-9, (0, 1))
    assert math.ceil(1 / 2e-9) > MAX_BINS
    with pytest.raises(ValueError, match="bins"):
        wme_stage1_interval([0.5], cfg, np.random.default_rng(0))


def test_stage1_noiseless_picks_mode_bin():
    cfg = WmeConfig(math.inf, 1e-5, 0.5, (0, 10))
    vals = [0.1, 3.2, 3.4, 3.9, 8.0]
    a, b = wme_stage1_interval(vals, cfg, np.random.default_rng(0))
    assert (a, b) == (2.5, 4.5)
    # ties go to the lowest bin
    a, b = wme_stage1_interval([0.1, 8.0], cfg, np.random.default_rng(0))
    assert (a, b) == (-0.5, 1.5)
    # values outside the range are clamped into the edge bins
    a, b = wme_stage1_interval([50.0, 60.0, 1.0], cfg, np.random.default_rng(0))
    assert (a, b) == (8.5, 10.5)


def test_stage2_clipping_and_sensitivity():
    vals = np.array([0.0, 1.0, 5.0])
    sizes = np.array([1, 1, 2])
    noisy, det, sigma = wme_stage2_clipped_mean(vals, sizes, (0.0, 2.0), math.inf, 1e-5, np.random.default_rng(0))
    assert det == noisy == pytest.approx((0 + 1 + 2 * 2) / 4)
    _, _, sigma = wme_stage2_clipped_mean(vals, sizes, (0.0, 2.0), 1.0, 1e-5, np.random.default_rng(0))
    assert sigma == pytest.approx(gaussian_sigma(2 * 2.0 / 4, 1.0, 1e-5))
    # balanced: sensitivity (b - a) / n
    _, _, sigma = wme_stage2_clipped_mean(vals, [3, 3, 3], (0.0, 2.0), 1.0, 1e-5, np.random.default_rng(0))
    assert sigma == pytest.approx(gaussian_sigma(2.0 / 3, 1.0, 1e-5))


def test_noiseless_limit_concentrated_data():
    rng = np.random.default_rng(1)
    n, m = 100, 5
    values = 0.3 + rng.uniform(-0.05, 0.05, size=(n * m, 2))
    ds = UserDataset(values, np.arange(0, n * m + 1, m))
    res = wme_estimate(ds, WmeConfig(math.inf, 1e-5, 0.25, (-1, 1), seed=0))
    np.testing.assert_allclose(res.output, values.mean(axis=0), atol=1e-12)
    assert res.noise_scale == 0.0 and res.method == "wme"
    assert len(res.metadata["intervals"]) == 2


def test_heavy_tail_truncation_bias():
    rng = np.random.default_rng(2)
    n, m = 2000, 1
    values = rng.pareto(2.5, size=(n * m, 1))  # mean 1 / 1.5
    ds = UserDataset(values, np.arange(n * m + 1))
    res = wme_estimate(ds, WmeConfig(100.0, 1e-5, 0.1, (0, 10), seed=0))
    assert res.output[0] < values.mean() - 0.05


def test_determinism_and_seed_required():
    rng = np.random.default_rng(3)
    ds = UserDataset(rng.normal(size=(300, 1)), np.arange(0, 301, 3))
    cfg = WmeConfig(1.0, 1e-5, 0.5, (-5, 5), seed=11)
    a, b = wme_estimate(ds, cfg), wme_estimate(ds, cfg)
    assert a.output.tobytes() == b.output.tobytes()
    with pytest.raises(ValueError, match="seed"):
        wme_estimate(ds, WmeConfig(1.0, 1e-5, 0.5, (-5, 5)))


def test_noise_matches_scale():
    ds = UserDataset(np.zeros((50, 1)), np.arange(51))
    outs = []
    for s in range(4000):
        res = wme_estimate(ds, WmeConfig(1.0, 1e-5, 0.5, (-1, 1), seed=s))
        outs.append(res.output[0] - res.clipped[0])
    z = np.array(outs) / res.noise_scale
    assert abs(z.mean()) < 4 / math.sqrt(z.size) and abs(z.var() - 1) < 0.1
