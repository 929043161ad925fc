"""Random-forest classification under nested leave-one-participant-out
cross-validation, plus feature selection, k-best curves, out-of-bag
permutation importance, and the conditioning benchmark.

The outer loop always leaves one participant out. The inner loop (used to
pick the pruning strength and, when k is given, the selector) runs on the
remaining participants, either as a second leave-one-out or as grouped
k-fold for speed. Feature selection happens inside each training split;
test participants never influence which columns a model sees.

Accuracy is macro-averaged recall, so the fixed 2:1 and worse class
imbalances in the tasks cannot be gamed by majority guessing: chance sits
at 50 % regardless of class sizes.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .config import AnalysisConfig, derive_seed
from .errors import MetricError, SpecError, TrainError
from .features import FeatureMatrix, TaskDataset, TaskKind, build_task, condition_matrix

log = logging.getLogger(__name__)

# sklearn insists on finite pruning strength; this is "prune everything".
CCP_INF_SENTINEL = 1e15


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    max_features: str = "sqrt"
    ccp_alpha: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise SpecError("n_trees must be >= 1")
        if self.ccp_alpha < 0:
            raise SpecError("ccp_alpha must be >= 0")


@dataclass(frozen=True)
class ForestModel:
    """A fitted forest that predicts by hard majority vote over trees.

    Ties go to the lower class label, which keeps predictions
    deterministic and independent of tree order.
    """

    params: ForestParams
    classes: np.ndarray
    forest: RandomForestClassifier

    def _tree_votes(self, X: np.ndarray) -> np.ndarray:
        """Per-class vote counts, shape (n, n_classes), classes in order."""
        n = len(X)
        counts = np.zeros((n, len(self.classes)), dtype=np.int64)
        for tree in self.forest.estimators_:
            pred = self.forest.classes_[tree.predict(X).astype(np.int64)]
            for ci, cls in enumerate(self.classes):
                counts[:, ci] += pred == cls
        return counts

    def predict(self, X: np.ndarray) -> np.ndarray:
        counts = self._tree_votes(np.asarray(X, dtype=np.float64))
        return self.classes[np.argmax(counts, axis=1)]

    def oob_vote_counts(self, X: np.ndarray) -> np.ndarray:
        """Vote counts using only trees that did not train on each row."""
        X = np.asarray(X, dtype=np.float64)
        n = len(X)
        counts = np.zeros((n, len(self.classes)), dtype=np.int64)
        for tree, sampled in zip(self.forest.estimators_, self.forest.estimators_samples_):
            oob = np.ones(n, dtype=bool)
            oob[sampled] = False
            if not oob.any():
                continue
            pred = self.forest.classes_[tree.predict(X[oob]).astype(np.int64)]
            for ci, cls in enumerate(self.classes):
                counts[oob, ci] += pred == cls
        return counts

    def oob_predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(labels, covered) where covered marks rows some tree left out."""
        counts = self.oob_vote_counts(X)
        covered = counts.sum(axis=1) > 0
        return self.classes[np.argmax(counts, axis=1)], covered


def train_forest(X: np.ndarray, y: np.ndarray, params: ForestParams) -> ForestModel:
    """Fit a bootstrap forest of Gini trees with sqrt feature sampling."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) != len(y) or len(y) == 0:
        raise TrainError("X and y must be non-empty and aligned")
    classes = np.unique(y)
    if len(classes) < 2:
        raise TrainError("training data contains a single class")
    ccp = min(params.ccp_alpha, CCP_INF_SENTINEL)
    forest = RandomForestClassifier(
        n_estimators=params.n_trees,
        criterion="gini",
        max_features=params.max_features,
        bootstrap=True,
        ccp_alpha=ccp,
        random_state=params.seed,
        n_jobs=1,
    )
    forest.fit(X, y)
    return ForestModel(params=params, classes=classes, forest=forest)


def macro_accuracy(
    y_true: np.ndarray, y_pred: np.ndarray, classes: Sequence[int] | None = None
) -> float:
    """Mean per-class recall.

    With an explicit class set, every class must appear in y_true or the
    metric is undefined; by default the classes are read off y_true.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred) or len(y_true) == 0:
        raise SpecError("y_true and y_pred must be non-empty and aligned")
    wanted = np.unique(y_true) if classes is None else np.asarray(list(classes))
    recalls = []
    for cls in wanted:
        mine = y_true == cls
        if not np.any(mine):
            raise MetricError(f"class {cls} has no true examples")
        recalls.append(float((y_pred[mine] == cls).mean()))
    return float(np.mean(recalls))


def anova_f_scores(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """One-way F statistic per column; separating columns may score inf."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    n, d = X.shape
    grand = X.mean(axis=0)
    ss_between = np.zeros(d)
    ss_within = np.zeros(d)
    for cls in classes:
        block = X[y == cls]
        mean_c = block.mean(axis=0)
        ss_between += len(block) * (mean_c - grand) ** 2
        ss_within += ((block - mean_c) ** 2).sum(axis=0)
    df_between = max(len(classes) - 1, 1)
    df_within = max(n - len(classes), 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (ss_between / df_between) / (ss_within / df_within)
    f[np.isnan(f)] = 0.0  # 0/0: constant column, no signal
    return f


def mutual_info_scores(X: np.ndarray, y: np.ndarray, n_bins: int = 10) -> np.ndarray:
    """Plug-in mutual information after quantile binning each column."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n, d = X.shape
    _, y_codes = np.unique(y, return_inverse=True)
    n_classes = y_codes.max() + 1
    scores = np.zeros(d)
    for j in range(d):
        edges = np.quantile(X[:, j], np.linspace(0, 1, n_bins + 1)[1:-1])
        codes = np.digitize(X[:, j], edges)
        joint = np.zeros((n_bins, n_classes))
        np.add.at(joint, (codes, y_codes), 1.0)
        joint /= n
        px = joint.sum(axis=1, keepdims=True)
        py = joint.sum(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = joint * np.log(joint / (px * py))
        scores[j] = float(np.nansum(terms))
    return np.maximum(scores, 0.0)


SELECTOR_FUNCS = {"anova": anova_f_scores, "mutual_info": mutual_info_scores}


def select_k_best(X: np.ndarray, y: np.ndarray, k: int, method: str = "anova") -> np.ndarray:
    """Indices of the k highest-scoring columns (ties to the lower index)."""
    if method not in SELECTOR_FUNCS:
        raise SpecError(f"unknown selector {method!r}")
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    if not 1 <= k <= d:
        raise SpecError(f"k must lie in [1, {d}], got {k}")
    scores = SELECTOR_FUNCS[method](X, y)
    order = np.lexsort((np.arange(d), -scores))
    return np.sort(order[:k])


@dataclass(frozen=True)
class FoldResult:
    participant: str
    n_test: int
    accuracy: float
    ccp_alpha: float
    selector: str | None
    feature_indices: tuple[int, ...]


@dataclass(frozen=True)
class CVReport:
    task: str
    k: int | None
    folds: tuple[FoldResult, ...]
    skipped: tuple[str, ...]
    mean_accuracy: float
    sem: float

    def to_dict(self) -> dict[str, object]:
        return {
            "task": self.task,
            "k": self.k,
            "mean_accuracy": self.mean_accuracy,
            "sem": self.sem,
            "n_folds": len(self.folds),
            "skipped": list(self.skipped),
            "folds": [
                {
                    "participant": f.participant,
                    "n_test": f.n_test,
                    "accuracy": f.accuracy,
                    "ccp_alpha": f.ccp_alpha,
                    "selector": f.selector,
                    "feature_indices": list(f.feature_indices),
                }
                for f in self.folds
            ],
        }


def _mean_sem(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if len(arr) == 0:
        return float("nan"), float("nan")
    sem = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return float(arr.mean()), sem


def _inner_splits(
    train_pids: list[str], analysis: AnalysisConfig, seed: int, outer_pid: str
) -> list[list[str]]:
    """Held-out participant groups for the inner loop."""
    if analysis.inner == "lopo":
        return [[pid] for pid in train_pids]
    rng = np.random.default_rng(derive_seed(seed, "inner-split", outer_pid))
    order = list(rng.permutation(train_pids))
    n_folds = min(analysis.inner_folds, len(order))
    return [list(part) for part in np.array_split(order, n_folds)]


def _fit_eval(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    y_test: np.ndarray,
    k: int | None,
    selector: str | None,
    ccp_alpha: float,
    n_trees: int,
    seed: int,
    selection_cache: dict | None = None,
    cache_key: object = None,
) -> tuple[float, tuple[int, ...]]:
    if k is not None and selector is not None:
        if selection_cache is not None and (cache_key, selector) in selection_cache:
            cols = selection_cache[(cache_key, selector)]
        else:
            cols = select_k_best(X_train, y_train, k, selector)
            if selection_cache is not None:
                selection_cache[(cache_key, selector)] = cols
        X_train = X_train[:, cols]
        X_test = X_test[:, cols]
    else:
        cols = np.arange(X_train.shape[1])
    model = train_forest(
        X_train, y_train, ForestParams(n_trees=n_trees, ccp_alpha=ccp_alpha, seed=seed)
    )
    return macro_accuracy(y_test, model.predict(X_test)), tuple(int(c) for c in cols)


def _outer_fold(
    task: TaskDataset,
    outer_pid: str,
    combos: list[tuple[float, str | None]],
    k: int | None,
    analysis: AnalysisConfig,
    seed: int,
) -> FoldResult | None:
    participants = np.asarray(task.participants)
    test_mask = participants == outer_pid
    train_mask = ~test_mask
    X_train, y_train = task.X[train_mask], task.y[train_mask]
    X_test, y_test = task.X[test_mask], task.y[test_mask]
    if len(np.unique(y_test)) < 2:
        # macro-accuracy is undefined when a class has no test rows
        log.warning("fold %s skipped: held-out rows are single-class", outer_pid)
        return None
    if len(np.unique(y_train)) < 2:
        log.warning("fold %s skipped: single-class training data", outer_pid)
        return None
    train_pids = sorted(set(participants[train_mask]))

    if len(combos) == 1:
        best_combo = combos[0]
    else:
        splits = _inner_splits(train_pids, analysis, seed, outer_pid)
        cache: dict = {}
        combo_scores: list[float] = []
        for combo_idx, (ccp, selector) in enumerate(combos):
            accs: list[float] = []
            for fold_idx, held in enumerate(splits):
                inner_test = np.isin(participants, held) & train_mask
                inner_train = train_mask & ~inner_test
                yi = task.y[inner_train]
                if len(np.unique(yi)) < 2 or not inner_test.any():
                    continue
                if len(np.unique(task.y[inner_test])) < 2:
                    continue
                acc, _ = _fit_eval(
                    task.X[inner_train],
                    yi,
                    task.X[inner_test],
                    task.y[inner_test],
                    k,
                    selector,
                    ccp,
                    analysis.n_trees,
                    derive_seed(seed, "inner", outer_pid, combo_idx, fold_idx),
                    selection_cache=cache,
                    cache_key=fold_idx,
                )
                accs.append(acc)
            combo_scores.append(float(np.mean(accs)) if accs else -np.inf)
        best_combo = combos[int(np.argmax(combo_scores))]

    ccp, selector = best_combo
    accuracy, cols = _fit_eval(
        X_train,
        y_train,
        X_test,
        y_test,
        k,
        selector,
        ccp,
        analysis.n_trees,
        derive_seed(seed, "outer", outer_pid),
    )
    return FoldResult(
        participant=outer_pid,
        n_test=int(test_mask.sum()),
        accuracy=accuracy,
        ccp_alpha=ccp,
        selector=selector,
        feature_indices=cols,
    )


def _grid_combos(analysis: AnalysisConfig, k: int | None) -> list[tuple[float, str | None]]:
    if k is None:
        return [(ccp, None) for ccp in analysis.ccp_alphas]
    return [(ccp, sel) for ccp, sel in product(analysis.ccp_alphas, analysis.selectors)]


def nlopocv(
    task: TaskDataset,
    analysis: AnalysisConfig,
    k: int | None = None,
    seed: int = 0,
    jobs: int | None = None,
) -> CVReport:
    """Nested leave-one-participant-out cross-validation.

    One outer fold per participant. Each fold tunes the pruning strength
    (and the selector, when ``k`` limits the feature count) on the inner
    splits, refits on all training participants, and scores the held-out
    participant. With a single grid cell the inner loop is skipped
    outright. Folds whose training data collapses to one class are
    reported as skipped, not silently averaged.
    """
    pids = sorted(set(task.participants))
    if len(pids) < 2:
        raise TrainError("need at least two participants for leave-one-out")
    combos = _grid_combos(analysis, k)
    workers = jobs if jobs is not None else (os.cpu_count() or 1)
    workers = max(1, min(workers, len(pids)))

    def run(pid: str) -> FoldResult | None:
        return _outer_fold(task, pid, combos, k, analysis, seed)

    if workers == 1:
        results = [run(pid) for pid in pids]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, pids))

    folds = tuple(r for r in results if r is not None)
    skipped = tuple(pid for pid, r in zip(pids, results) if r is None)
    if not folds:
        raise TrainError("every outer fold was skipped")
    mean, sem = _mean_sem([f.accuracy for f in folds])
    return CVReport(
        task=task.task.value,
        k=k,
        folds=folds,
        skipped=skipped,
        mean_accuracy=mean,
        sem=sem,
    )


@dataclass(frozen=True)
class KPoint:
    k: int
    mean_accuracy: float
    sem: float


@dataclass(frozen=True)
class KBestCurve:
    task: str
    points: tuple[KPoint, ...]
    peak_k: int
    minimal_k: int

    def to_dict(self) -> dict[str, object]:
        return {
            "task": self.task,
            "points": [
                {"k": p.k, "mean_accuracy": p.mean_accuracy, "sem": p.sem}
                for p in self.points
            ],
            "peak_k": self.peak_k,
            "minimal_k": self.minimal_k,
        }


def kbest_curve(
    task: TaskDataset,
    analysis: AnalysisConfig,
    seed: int = 0,
    jobs: int | None = None,
    ks: Sequence[int] | None = None,
) -> KBestCurve:
    """Accuracy as a function of how many features the models may use.

    ``minimal_k`` is the smallest k whose mean lands within one standard
    error of the peak mean: the cheapest model statistically
    indistinguishable from the best one.
    """
    d = task.X.shape[1]
    ks = [k for k in (ks if ks is not None else analysis.kbest_ks) if 1 <= k <= d]
    if not ks:
        raise SpecError("no valid k values for this feature count")
    points = []
    for k in ks:
        report = nlopocv(task, analysis, k=k, seed=derive_seed(seed, "kbest", k), jobs=jobs)
        points.append(KPoint(k=k, mean_accuracy=report.mean_accuracy, sem=report.sem))
    peak = max(points, key=lambda p: (p.mean_accuracy, -p.k))
    floor = peak.mean_accuracy - peak.sem
    minimal = min((p.k for p in points if p.mean_accuracy >= floor), default=peak.k)
    return KBestCurve(task=task.task.value, points=tuple(points), peak_k=peak.k, minimal_k=minimal)


@dataclass(frozen=True)
class ImportanceReport:
    feature_names: tuple[str, ...]
    baseline_accuracy: float
    mean_drop: tuple[float, ...]
    sd_drop: tuple[float, ...]

    def to_dict(self) -> dict[str, object]:
        return {
            "baseline_oob_macro_accuracy": self.baseline_accuracy,
            "importances": [
                {"feature": name, "mean_drop": m, "sd_drop": s}
                for name, m, s in zip(self.feature_names, self.mean_drop, self.sd_drop)
            ],
        }


def permutation_importance(
    model: ForestModel,
    X: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str],
    n_repeats: int = 10,
    seed: int = 0,
) -> ImportanceReport:
    """Out-of-bag permutation importance.

    Each feature column is shuffled and the drop in out-of-bag macro
    accuracy recorded; trees only ever judge rows they did not train on,
    so no extra holdout is spent. Rows no tree left out are ignored.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[1] != len(feature_names):
        raise SpecError("feature_names length must match X columns")
    if n_repeats < 1:
        raise SpecError("n_repeats must be >= 1")

    def oob_macro(matrix: np.ndarray) -> float:
        pred, covered = model.oob_predict(matrix)
        if not covered.any():
            raise TrainError("no out-of-bag rows; use more trees")
        return macro_accuracy(y[covered], pred[covered])

    baseline = oob_macro(X)
    mean_drop, sd_drop = [], []
    for j in range(X.shape[1]):
        drops = []
        for r in range(n_repeats):
            rng = np.random.default_rng(derive_seed(seed, "perm", j, r))
            shuffled = X.copy()
            shuffled[:, j] = rng.permutation(X[:, j])
            drops.append(baseline - oob_macro(shuffled))
        arr = np.asarray(drops)
        mean_drop.append(float(arr.mean()))
        sd_drop.append(float(arr.std(ddof=1)) if len(arr) > 1 else 0.0)
    return ImportanceReport(
        feature_names=tuple(feature_names),
        baseline_accuracy=baseline,
        mean_drop=tuple(mean_drop),
        sd_drop=tuple(sd_drop),
    )


CONDITIONING_CELLS: tuple[tuple[bool, bool, str], ...] = (
    (False, False, "raw"),
    (True, False, "centered"),
    (False, True, "scaled"),
    (True, True, "centered_scaled"),
)


@dataclass(frozen=True)
class ConditioningCell:
    label: str
    center: bool
    scale: bool
    per_task: dict[str, float]
    mean_accuracy: float
    sem: float


@dataclass(frozen=True)
class ConditioningReport:
    cells: tuple[ConditioningCell, ...]

    def best(self) -> ConditioningCell:
        return max(self.cells, key=lambda c: c.mean_accuracy)

    def to_dict(self) -> dict[str, object]:
        return {
            "cells": [
                {
                    "conditioning": c.label,
                    "center": c.center,
                    "scale": c.scale,
                    "per_task": c.per_task,
                    "mean_accuracy": c.mean_accuracy,
                    "sem": c.sem,
                }
                for c in self.cells
            ],
            "best": self.best().label,
        }


def conditioning_benchmark(
    raw: FeatureMatrix,
    tasks: Sequence[TaskKind],
    analysis: AnalysisConfig,
    seed: int = 0,
    jobs: int | None = None,
) -> ConditioningReport:
    """Cross-validated accuracy for the four conditioning variants.

    Every variant runs the same tasks under the same seeds; the summary
    per cell is the mean of the per-task means, with the standard error
    taken across tasks.
    """
    if raw.conditioning != "raw":
        raise SpecError("conditioning benchmark expects an unconditioned matrix")
    cells = []
    for center, scale, label in CONDITIONING_CELLS:
        conditioned = condition_matrix(raw, center=center, scale=scale)
        per_task: dict[str, float] = {}
        for task_kind in tasks:
            dataset = build_task(conditioned, task_kind)
            report = nlopocv(
                dataset,
                analysis,
                k=None,
                seed=derive_seed(seed, "conditioning", label, task_kind.value),
                jobs=jobs,
            )
            per_task[task_kind.value] = report.mean_accuracy
        mean, sem = _mean_sem(list(per_task.values()))
        cells.append(
            ConditioningCell(
                label=label,
                center=center,
                scale=scale,
                per_task=per_task,
                mean_accuracy=mean,
                sem=sem,
            )
        )
    return ConditioningReport(cells=tuple(cells))
