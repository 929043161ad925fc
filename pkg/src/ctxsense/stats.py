"""Paired univariate statistics: exact Wilcoxon signed-rank, step-up
false-discovery control, and percentile-bootstrap confidence intervals.

The Wilcoxon implementation is self-contained because the pipeline needs
an exact two-sided p-value under ties at small n, with explicitly pinned
conventions: zero differences are discarded, tied magnitudes share
average ranks, and the exact tail is computed over doubled ranks so tie
halves stay integral.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .config import AnalysisConfig, derive_seed
from .errors import DegenerateError, SpecError

log = logging.getLogger(__name__)

EXACT_MAX_N = 25  # beyond this the normal approximation takes over
PAIRINGS = ("participant", "event")


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    p_value: float
    n: int  # pairs used after dropping zeros
    method: str  # exact | normal


def _exact_tail(doubled_ranks: np.ndarray, doubled_w: int) -> float:
    """P(W+ <= w) by dynamic programming over the 2^n sign assignments.

    Ranks arrive doubled so tie-induced half ranks become integers. The
    count array stays exact: 2^25 is far below the float64 integer limit.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return float(counts[: doubled_w + 1].sum() / counts.sum())


def wilcoxon_signed_rank(diffs: np.ndarray) -> WilcoxonResult:
    """Two-sided paired signed-rank test on a vector of differences.

    Exact for n <= 25: p = min(1, 2 * P(W+ <= W_obs)), which equals the
    share of sign assignments whose min(W+, W-) is at most the observed
    one. Larger n uses the normal approximation with tie-corrected
    variance and no continuity correction.
    """
    d = np.asarray(diffs, dtype=np.float64)
    if d.ndim != 1:
        raise SpecError("diffs must be 1-D")
    if not np.all(np.isfinite(d)):
        raise SpecError("diffs must be finite")
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        raise DegenerateError("all differences are zero")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_MAX_N:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        p = min(1.0, 2.0 * _exact_tail(doubled, int(round(2.0 * w))))
        return WilcoxonResult(statistic=w, p_value=p, n=n, method="exact")
    mean = n * (n + 1) / 4.0
    variance = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    variance -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    if variance <= 0:
        raise DegenerateError("signed-rank variance vanished under ties")
    z = (w - mean) / math.sqrt(variance)
    p = min(1.0, math.erfc(-z / math.sqrt(2.0)))
    return WilcoxonResult(statistic=w, p_value=p, n=n, method="normal")


def benjamini_hochberg(p_values: np.ndarray, alpha: float = 0.05) -> np.ndarray:
    """Step-up FDR control; returns a rejection mask in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1 or len(p) == 0:
        raise SpecError("p_values must be a non-empty 1-D array")
    if np.any((p < 0) | (p > 1)):
        raise SpecError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    thresholds = alpha * (np.arange(1, m + 1) / m)
    passing = np.flatnonzero(p[order] <= thresholds)
    mask = np.zeros(m, dtype=bool)
    if len(passing):
        mask[order[: passing[-1] + 1]] = True
    return mask


@dataclass(frozen=True)
class MedianCI:
    median: float
    low: float
    high: float
    confidence: float


def bootstrap_median_ci(
    values: np.ndarray,
    confidence: float = 0.95,
    n_resamples: int = 10_000,
    seed: int = 0,
) -> MedianCI:
    """Percentile bootstrap CI for the median.

    Endpoints are order statistics of the resampled medians (floor/ceil
    of the tail positions), so widening the confidence level can only
    widen the interval.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or len(v) == 0:
        raise DegenerateError("cannot bootstrap an empty sample")
    if not 0 < confidence < 1:
        raise SpecError("confidence must lie in (0, 1)")
    if n_resamples < 1:
        raise SpecError("n_resamples must be positive")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(v), size=(n_resamples, len(v)))
    medians = np.sort(np.median(v[idx], axis=1))
    tail = (1.0 - confidence) / 2.0
    low = medians[int(math.floor(tail * (n_resamples - 1)))]
    high = medians[int(math.ceil((1.0 - tail) * (n_resamples - 1)))]
    return MedianCI(
        median=float(np.median(v)), low=float(low), high=float(high), confidence=confidence
    )


@dataclass(frozen=True)
class FeatureTest:
    """One feature's paired test plus per-class descriptive intervals."""

    name: str
    n_pairs: int
    statistic: float
    p_value: float
    significant: bool
    degenerate: bool
    method: str
    class0: MedianCI
    class1: MedianCI
    median_diff: float

    def to_dict(self) -> dict[str, object]:
        return {
            "feature": self.name,
            "n_pairs": self.n_pairs,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "significant": self.significant,
            "degenerate": self.degenerate,
            "method": self.method,
            "class0": {"median": self.class0.median, "ci": [self.class0.low, self.class0.high]},
            "class1": {"median": self.class1.median, "ci": [self.class1.low, self.class1.high]},
            "median_diff": self.median_diff,
        }


@dataclass(frozen=True)
class UnivariateReport:
    task: str
    class_names: tuple[str, str]
    alpha: float
    pairing: str
    tests: tuple[FeatureTest, ...]
    ranked_significant: tuple[str, ...]

    def to_dict(self) -> dict[str, object]:
        return {
            "task": self.task,
            "classes": list(self.class_names),
            "alpha": self.alpha,
            "pairing": self.pairing,
            "per_feature": [t.to_dict() for t in self.tests],
            "ranked_significant": list(self.ranked_significant),
        }


def paired_feature_tests(task_data, analysis: AnalysisConfig, seed: int) -> UnivariateReport:
    """Per-feature paired Wilcoxon tests across participants.

    Pairing: each participant contributes one difference per feature, the
    difference of their per-class medians. The alternative "event"
    pairing uses (participant, event) units instead, which only makes
    sense for phase contrasts. Units lacking rows in either class are
    left out of the test (their data still feeds the descriptive
    per-class bootstrap intervals). Significance flags come from step-up
    FDR control across the feature family; degenerate features (all
    paired differences zero) get p = 1 and can never be flagged.
    """
    from .features import TaskDataset  # typing/shape contract only

    assert isinstance(task_data, TaskDataset)
    if analysis.pairing not in PAIRINGS:
        raise SpecError(f"pairing must be one of {PAIRINGS}, got {analysis.pairing!r}")
    if analysis.pairing == "participant":
        units = np.asarray(task_data.participants)
    else:
        units = np.asarray(
            [f"{p}:{e.value}" for p, e in zip(task_data.participants, task_data.events)]
        )
    d = len(task_data.feature_names)

    diffs_per_feature: list[list[float]] = [[] for _ in range(d)]
    for unit in sorted(set(units)):
        mine = units == unit
        rows0 = task_data.X[mine & (task_data.y == 0)]
        rows1 = task_data.X[mine & (task_data.y == 1)]
        if len(rows0) == 0 or len(rows1) == 0:
            log.info("univariate %s: unit %s lacks one class, excluded", task_data.task.value, unit)
            continue
        med0 = np.median(rows0, axis=0)
        med1 = np.median(rows1, axis=0)
        for j in range(d):
            diffs_per_feature[j].append(float(med1[j] - med0[j]))

    p_values = np.ones(d)
    stats: list[tuple[float, int, str, bool]] = []
    for j in range(d):
        diffs = np.asarray(diffs_per_feature[j])
        try:
            result = wilcoxon_signed_rank(diffs)
            p_values[j] = result.p_value
            stats.append((result.statistic, result.n, result.method, False))
        except DegenerateError:
            stats.append((0.0, 0, "degenerate", True))
    significant = benjamini_hochberg(p_values, alpha=analysis.alpha)

    tests: list[FeatureTest] = []
    for j, name in enumerate(task_data.feature_names):
        statistic, n_pairs, method, degenerate = stats[j]
        cis = []
        for cls in (0, 1):
            cis.append(
                bootstrap_median_ci(
                    task_data.X[task_data.y == cls, j],
                    confidence=analysis.confidence,
                    n_resamples=analysis.n_bootstrap,
                    seed=derive_seed(seed, "bootstrap", name, cls),
                )
            )
        tests.append(
            FeatureTest(
                name=name,
                n_pairs=n_pairs,
                statistic=statistic,
                p_value=float(p_values[j]),
                significant=bool(significant[j]) and not degenerate,
                degenerate=degenerate,
                method=method,
                class0=cis[0],
                class1=cis[1],
                median_diff=float(cis[1].median - cis[0].median),
            )
        )
    ranked = tuple(
        t.name
        for t in sorted(
            (t for t in tests if t.significant),
            key=lambda t: (-abs(t.median_diff), t.name),
        )
    )
    return UnivariateReport(
        task=task_data.task.value,
        class_names=task_data.class_names,
        alpha=analysis.alpha,
        pairing=analysis.pairing,
        tests=tuple(tests),
        ranked_significant=ranked,
    )
