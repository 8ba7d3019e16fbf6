import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerobench.errors import EmptyCategory, MetricMismatch, TooFewDesigns
from aerobench.metrics_core import DesignData
from aerobench.uncertainty_stats import (
    BootstrapConfig,
    BootstrapSummary,
    Significance,
    bootstrap_metric,
    bootstrap_metrics,
    ci_indices,
    gum_display,
    gum_round,
    gum_round_column,
    significance_by_overlap,
    summary_json,
)


def random_designs(n, seed, sigma=3.0, points=50, categories="FEN"):
    g = np.random.default_rng(seed)
    out = []
    for i in range(n):
        y = g.normal(0, 20, points)
        out.append(DesignData(f"{categories[i % len(categories)]}_{i:04d}", categories[i % len(categories)], y,
                              y + g.normal(0, sigma * g.uniform(0.5, 1.5), points)))
    return out


def test_identical_designs_have_zero_spread():
    y = np.array([1.0, 2.0, 3.0])
    designs = [DesignData(f"F_{i}", "F", y, y + 1.0) for i in range(5)]
    s = bootstrap_metric(designs, "mae", BootstrapConfig(B=200))
    assert (s.mean, s.std, s.ci_lower, s.ci_upper) == (1.0, 0.0, 1.0, 1.0)
    assert gum_display(s.mean, s.std) == "1.000"


def test_input_errors():
    with pytest.raises(TooFewDesigns):
        bootstrap_metric(random_designs(1, 0), "mse")
    with pytest.raises(EmptyCategory):
        bootstrap_metrics(random_designs(4, 0, categories="F"), ["mse"], BootstrapConfig(B=100),
                          expected_categories=["F", "E"])
    with pytest.raises(ValueError):
        BootstrapConfig(B=1)
    with pytest.raises(ValueError):
        BootstrapConfig(confidence=1.0)


def test_ci_indices():
    assert ci_indices(2000) == (50, 1950)
    assert ci_indices(1000, 0.9) == (50, 950)


def test_bootstrap_is_deterministic_and_order_free():
    designs = random_designs(12, 1)
    cfg = BootstrapConfig(B=300, master_seed=9)
    a = bootstrap_metrics(designs, ["mse", "rel_l2"], cfg)
    b = bootstrap_metrics(designs[::-1], ["mse", "rel_l2"], cfg)
    assert np.array_equal(a["mse"].replicate_values, b["mse"].replicate_values)
    c = bootstrap_metrics(designs, ["mse"], BootstrapConfig(B=300, master_seed=10))
    assert not np.array_equal(a["mse"].replicate_values, c["mse"].replicate_values)
    assert a["mse"].ci_lower <= a["mse"].point_estimate <= a["mse"].ci_upper


def test_stratified_replicates_keep_category_counts():
    designs = random_designs(9, 2)
    s = bootstrap_metric(designs, "mae", BootstrapConfig(B=200, check_strata=True))
    assert s.std > 0


def test_ci_width_shrinks_like_inverse_sqrt_n():
    ratios = []
    for seed in range(5):
        cfg = BootstrapConfig(B=1000, master_seed=seed)
        small = bootstrap_metric(random_designs(50, 100 + seed), "mse", cfg)
        large = bootstrap_metric(random_designs(100, 200 + seed), "mse", cfg)
        ratios.append((large.ci_upper - large.ci_lower) / (small.ci_upper - small.ci_lower))
    assert 0.6 <= float(np.mean(ratios)) <= 0.82


def test_point_unit_resampling():
    designs = random_designs(4, 3)
    s = bootstrap_metric(designs, "mae", BootstrapConfig(B=200, unit="point"))
    assert s.ci_lower < s.ci_upper


def test_gum_rounding():
    assert gum_display(0.13584, 0.00237) == "0.1358 ± 0.0024"
    assert gum_display(5.0, 0.0) == "5.000"
    assert gum_round(3347.0, 52.0) == ("3347", "52")
    assert gum_display(1.0, 0.0999) == "1.00 ± 0.10"
    assert gum_display(-0.00004, 0.002) == "0.0000 ± 0.0020"
    assert gum_round_column([(3347, 52), (3900, 160), (None, None)]) == ["3350 ± 50", "3900 ± 160", "—"]


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e4, 1e4), st.floats(1e-6, 1e3))
def test_gum_rounding_idempotent(mean, unc):
    m, u = gum_round(mean, unc)
    assert gum_round(float(m), float(u)) == (m, u)


def test_significance():
    a = BootstrapSummary.from_half_width("rel_l2", 0.10, 0.01)
    b = BootstrapSummary.from_half_width("rel_l2", 0.13, 0.01)
    c = BootstrapSummary.from_half_width("rel_l2", 0.115, 0.01)
    assert significance_by_overlap(a, b) is Significance.SEPARATED
    assert significance_by_overlap(a, c) is Significance.OVERLAPPING
    assert significance_by_overlap(b, a) is significance_by_overlap(a, b)
    with pytest.raises(MetricMismatch):
        significance_by_overlap(a, BootstrapSummary.from_half_width("mse", 0.1, 0.01))


def test_summary_json():
    cfg = BootstrapConfig(B=100)
    s = bootstrap_metric(random_designs(6, 4), "rmse", cfg)
    doc = json.loads(summary_json(s, cfg))
    assert doc["config"]["ci_indices"] == [2, 97]
    assert len(doc["replicates"]) == 100
    assert doc["summary"]["metric"] == "rmse"
