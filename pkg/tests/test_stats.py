"""Paired signed-rank testing, FDR control, and bootstrap intervals.

The exact-test and step-up oracles here re-derive both procedures from
their definitions (full sign enumeration; the max-k threshold rule) so
the fast implementations are checked against something independent.
"""

import itertools
import logging

import numpy as np
import pytest
from featuregen import build_task_dataset
from scipy.stats import rankdata

from ctxsense.config import AnalysisConfig
from ctxsense.errors import ConfigError, DegenerateError, SpecError
from ctxsense.features import FEATURE_NAMES
from ctxsense.stats import (
    benjamini_hochberg,
    bootstrap_median_ci,
    paired_feature_tests,
    wilcoxon_signed_rank,
)


def enumerate_wilcoxon_p(diffs) -> float:
    """Share of the 2^n sign assignments at least as extreme as observed."""
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    ranks = rankdata(np.abs(d))
    observed = min(ranks[d > 0].sum(), ranks[d < 0].sum())
    total = ranks.sum()
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        w_plus = sum(r for r, s in zip(ranks, signs) if s)
        if min(w_plus, total - w_plus) <= observed + 1e-9:
            hits += 1
    return hits / 2 ** len(d)


def bh_by_definition(p_values, alpha) -> np.ndarray:
    """Reject everything at or below p_(k*), k* = max{k: p_(k) <= alpha k/m}."""
    p = np.asarray(p_values, dtype=float)
    m = len(p)
    ordered = np.sort(p)
    passing = [k for k in range(1, m + 1) if ordered[k - 1] <= alpha * k / m]
    if not passing:
        return np.zeros(m, dtype=bool)
    return p <= ordered[max(passing) - 1]


# ---------------------------------------------------------------- signed rank


def test_wilcoxon_mixed_signs():
    result = wilcoxon_signed_rank(np.array([1.0, -2.0, 3.0, 4.0, 5.0]))
    assert result.statistic == 2.0
    assert result.p_value == pytest.approx(0.1875)
    assert result.method == "exact"


def test_wilcoxon_all_positive_n6():
    result = wilcoxon_signed_rank(np.full(6, 0.5))
    assert result.statistic == 0.0
    assert result.p_value == pytest.approx(0.03125)


def test_wilcoxon_all_zero_is_degenerate():
    with pytest.raises(DegenerateError):
        wilcoxon_signed_rank(np.zeros(2))


def test_wilcoxon_drops_zero_differences():
    with_zeros = wilcoxon_signed_rank(np.array([0.0, 1.0, -2.0, 3.0, 0.0, 4.0, 5.0]))
    without = wilcoxon_signed_rank(np.array([1.0, -2.0, 3.0, 4.0, 5.0]))
    assert with_zeros.n == 5
    assert with_zeros.p_value == without.p_value


def test_wilcoxon_matches_enumeration_on_random_vectors():
    rng = np.random.default_rng(42)
    for trial in range(200):
        n = int(rng.integers(1, 13))
        d = rng.normal(0, 1, size=n)
        if trial % 3 == 0:
            d = np.round(d, 1)  # induce ties and zeros
        if not np.any(d):
            continue
        result = wilcoxon_signed_rank(d)
        assert result.method == "exact"
        assert result.p_value == pytest.approx(
            min(1.0, enumerate_wilcoxon_p(d)), abs=1e-12
        ), f"trial {trial}: {d}"


def test_wilcoxon_switches_to_normal_beyond_exact_range():
    rng = np.random.default_rng(0)
    d = rng.normal(0.2, 1.0, size=40)
    result = wilcoxon_signed_rank(d)
    assert result.method == "normal"
    assert 0.0 <= result.p_value <= 1.0


def test_wilcoxon_rejects_bad_input():
    with pytest.raises(SpecError):
        wilcoxon_signed_rank(np.array([[1.0, 2.0]]))
    with pytest.raises(SpecError):
        wilcoxon_signed_rank(np.array([1.0, np.nan]))


# ---------------------------------------------------------------- FDR control


def test_bh_rejects_prefix():
    mask = benjamini_hochberg(np.array([0.01, 0.02, 0.03, 0.04, 0.2]), alpha=0.05)
    assert mask.tolist() == [True, True, True, True, False]


def test_bh_all_ones_rejects_nothing():
    assert not benjamini_hochberg(np.ones(10), alpha=0.05).any()


def test_bh_single_small_p_rejected():
    assert benjamini_hochberg(np.array([0.04]), alpha=0.05).tolist() == [True]


def test_bh_matches_definition_on_random_vectors():
    rng = np.random.default_rng(7)
    for trial in range(300):
        m = int(rng.integers(1, 30))
        p = rng.uniform(0, 1, size=m)
        if trial % 4 == 0:
            p = np.round(p, 2)  # ties
        if trial % 5 == 0:
            p = p * rng.uniform(0.01, 0.2)  # dense small values
        mask = benjamini_hochberg(p, alpha=0.05)
        assert np.array_equal(mask, bh_by_definition(p, 0.05)), f"trial {trial}"


def test_bh_monotone_in_alpha():
    rng = np.random.default_rng(3)
    p = rng.uniform(0, 0.3, size=20)
    previous = np.zeros(20, dtype=bool)
    for alpha in (0.01, 0.05, 0.1, 0.2, 0.5):
        mask = benjamini_hochberg(p, alpha=alpha)
        assert np.all(previous <= mask)  # rejections only grow with alpha
        previous = mask


def test_bh_rejects_bad_input():
    with pytest.raises(SpecError):
        benjamini_hochberg(np.array([]))
    with pytest.raises(SpecError):
        benjamini_hochberg(np.array([0.5, 1.5]))


# ---------------------------------------------------------------- bootstrap


def test_bootstrap_constant_sample():
    ci = bootstrap_median_ci(np.full(20, 3.7), n_resamples=500, seed=1)
    assert (ci.median, ci.low, ci.high) == (3.7, 3.7, 3.7)


def test_bootstrap_centers_on_the_median():
    ci = bootstrap_median_ci(np.arange(1.0, 101.0), n_resamples=2000, seed=2)
    assert ci.median == 50.5
    assert ci.low <= 50.5 <= ci.high
    assert 40.0 <= ci.low and ci.high <= 61.0


def test_bootstrap_is_deterministic():
    values = np.random.default_rng(9).normal(size=50)
    a = bootstrap_median_ci(values, n_resamples=1000, seed=11)
    b = bootstrap_median_ci(values, n_resamples=1000, seed=11)
    assert (a.low, a.high) == (b.low, b.high)
    c = bootstrap_median_ci(values, n_resamples=1000, seed=12)
    assert (a.low, a.high) != (c.low, c.high)


def test_bootstrap_intervals_nest_with_confidence():
    values = np.random.default_rng(4).normal(size=60)
    narrow = bootstrap_median_ci(values, confidence=0.80, n_resamples=4000, seed=5)
    wide = bootstrap_median_ci(values, confidence=0.99, n_resamples=4000, seed=5)
    assert wide.low <= narrow.low and narrow.high <= wide.high


def test_bootstrap_empty_sample():
    with pytest.raises(DegenerateError):
        bootstrap_median_ci(np.array([]))


# ---------------------------------------------------------------- feature tests


def test_planted_shifts_are_the_only_flags():
    dataset = build_task_dataset(
        n_participants=12, shifts={2: 1.0, 7: 1.5, 11: -1.2}, noise_sd=0.1, seed=4
    )
    report = paired_feature_tests(dataset, AnalysisConfig(n_bootstrap=300), seed=0)
    flagged = {t.name for t in report.tests if t.significant}
    assert flagged == {FEATURE_NAMES[2], FEATURE_NAMES[7], FEATURE_NAMES[11]}
    # ranked by absolute median difference, largest first
    assert report.ranked_significant == (
        FEATURE_NAMES[7], FEATURE_NAMES[11], FEATURE_NAMES[2]
    )


def test_pairing_cancels_participant_offsets():
    dataset = build_task_dataset(
        n_participants=12, shifts={0: 1.0}, participant_sd=5.0, noise_sd=0.1, seed=8
    )
    report = paired_feature_tests(dataset, AnalysisConfig(n_bootstrap=200), seed=0)
    assert {t.name for t in report.tests if t.significant} == {FEATURE_NAMES[0]}


def test_null_family_rejection_rate_is_controlled():
    cfg = AnalysisConfig(n_bootstrap=50)
    hits = 0
    for s in range(100):
        dataset = build_task_dataset(n_participants=12, noise_sd=0.3, seed=1000 + s)
        report = paired_feature_tests(dataset, cfg, seed=s)
        hits += any(t.significant for t in report.tests)
    assert hits / 100 <= 0.12  # alpha 0.05 plus 3 sigma of binomial noise


def test_unit_missing_a_class_is_excluded_and_logged(caplog):
    dataset = build_task_dataset(n_participants=8, shifts={3: 2.0}, noise_sd=0.1, seed=2)
    keep = ~((np.asarray(dataset.participants) == "P003") & (dataset.y == 1))
    from ctxsense.features import TaskDataset

    trimmed = TaskDataset(
        task=dataset.task,
        X=dataset.X[keep],
        y=dataset.y[keep],
        participants=tuple(np.asarray(dataset.participants)[keep]),
        events=tuple(np.asarray(dataset.events)[keep]),
        feature_names=dataset.feature_names,
        class_names=dataset.class_names,
        conditioning=dataset.conditioning,
    )
    with caplog.at_level(logging.INFO, logger="ctxsense.stats"):
        report = paired_feature_tests(trimmed, AnalysisConfig(n_bootstrap=100), seed=0)
    assert "P003" in caplog.text and "lacks one class" in caplog.text
    assert all(t.n_pairs == 7 for t in report.tests if not t.degenerate)


def test_event_pairing_uses_participant_event_units():
    dataset = build_task_dataset(n_participants=6, rows_per_class=4, noise_sd=0.2, seed=3)
    report = paired_feature_tests(
        dataset, AnalysisConfig(n_bootstrap=100, pairing="event"), seed=0
    )
    assert report.pairing == "event"
    assert all(t.n_pairs == 24 for t in report.tests)  # 6 participants x 4 events


def test_unknown_pairing_is_rejected():
    with pytest.raises(ConfigError):
        AnalysisConfig(pairing="session")


def test_degenerate_feature_reported_not_flagged():
    dataset = build_task_dataset(n_participants=10, noise_sd=0.5, seed=6)
    dataset.X[:, 4] = 2.5  # constant column: all paired differences zero
    report = paired_feature_tests(dataset, AnalysisConfig(n_bootstrap=100), seed=0)
    test4 = report.tests[4]
    assert test4.degenerate and not test4.significant
    assert test4.p_value == 1.0
    assert test4.class0.median == test4.class1.median == 2.5


def test_report_dict_shape():
    dataset = build_task_dataset(n_participants=6, noise_sd=0.3, seed=1)
    report = paired_feature_tests(dataset, AnalysisConfig(n_bootstrap=50), seed=0)
    payload = report.to_dict()
    assert set(payload) == {
        "task", "classes", "alpha", "pairing", "per_feature", "ranked_significant"
    }
    assert len(payload["per_feature"]) == 13
    entry = payload["per_feature"][0]
    assert set(entry) == {
        "feature", "n_pairs", "statistic", "p_value", "significant",
        "degenerate", "method", "class0", "class1", "median_diff",
    }
