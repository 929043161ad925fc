"""Command line interface.

    ctxsense synth --out DIR        generate a synthetic study with ground truth
    ctxsense extract --study DIR    raw session exports -> features CSV
    ctxsense analyze                statistics + classification from a features CSV
    ctxsense cluster                density clustering of selected feature columns
    ctxsense bench nn-filters       cleaning-method x window-length benchmark
    ctxsense bench conditioning     conditioning-variant benchmark

Exit codes: 0 success, 2 usage or configuration problem, 3 malformed input
files, 4 inputs that parse but cannot support the requested computation.

Logging verbosity comes from the CTXSENSE_LOG environment variable
(error, warn, info, or debug; default warn). --seed and --jobs are accepted
both before and after the subcommand name. Every JSON report embeds the
tool version, the seed, and the full resolved configuration, and is
written with sorted keys so identical runs produce identical bytes;
figure-ready data additionally lands in plain CSVs.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import os
from collections import Counter
from pathlib import Path

import click

from . import __version__
from .config import AnalysisConfig, RunConfig, derive_seed, load_config
from .errors import ConfigError, DataContentError, DataFormatError
from .features import (
    FeatureMatrix,
    TaskKind,
    assemble_matrix,
    build_task,
    condition_matrix,
    correlation_matrix,
    extract_nn_tables,
    extract_session,
    read_features_csv,
    write_features_csv,
)
from .ingest import iter_study, load_session, slice_intervals

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

TASK_TOKENS = {t.value: t for t in TaskKind}
_ERROR_CODES: tuple[tuple[type, int], ...] = (
    (ConfigError, 2),
    (DataFormatError, 3),
    (DataContentError, 4),
)


def _mapped_errors(fn):
    """Convert domain errors into ClickExceptions with the right exit code."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, DataFormatError, DataContentError) as exc:
            for family, code in _ERROR_CODES:
                if isinstance(exc, family):
                    wrapped = click.ClickException(f"{type(exc).__name__}: {exc}")
                    wrapped.exit_code = code
                    raise wrapped from exc
            raise  # unreachable: the except clause mirrors _ERROR_CODES

    return wrapper


def _common_options(fn):
    fn = click.option(
        "--jobs",
        "jobs_override",
        type=int,
        default=None,
        help="Worker threads (default: all cores).",
    )(fn)
    fn = click.option(
        "--seed",
        "seed_override",
        type=int,
        default=None,
        help="Root seed (overrides config and the global flag).",
    )(fn)
    return fn


def _with_overrides(run: RunConfig, seed: int | None, jobs: int | None) -> RunConfig:
    if seed is not None:
        run = dataclasses.replace(run, seed=seed)
    if jobs is not None:
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        run = dataclasses.replace(run, jobs=jobs)
    return run


def _configure_logging() -> None:
    token = os.environ.get("CTXSENSE_LOG", "warn").strip().lower()
    if token not in _LOG_LEVELS:
        raise ConfigError(
            f"CTXSENSE_LOG={token!r}; expected one of error, warn, info, debug"
        )
    logging.basicConfig(
        level=_LOG_LEVELS[token],
        format="%(levelname)s %(name)s: %(message)s",
    )


def _write_report(path: Path, payload: dict, run: RunConfig) -> None:
    doc = {
        "tool": {"name": "ctxsense", "version": __version__},
        "seed": run.seed,
        "config": run.to_dict(),
        **payload,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    click.echo(f"wrote {path}")


def _write_csv(path: Path, header: str, lines: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([header, *lines]) + "\n", encoding="utf-8")
    click.echo(f"wrote {path}")


@click.group()
@click.version_option(version=__version__, prog_name="ctxsense")
@click.option("--seed", type=int, default=None, help="Root seed (overrides config).")
@click.option("--jobs", type=int, default=None, help="Worker threads (default: all cores).")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="JSON file overriding run configuration keys.",
)
@click.pass_context
@_mapped_errors
def cli(ctx: click.Context, seed: int | None, jobs: int | None, config_path: Path | None) -> None:
    """Wearable-sensor feature extraction and social-context analysis."""
    _configure_logging()
    ctx.obj = _with_overrides(load_config(config_path), seed, jobs)


@cli.command()
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Directory to write the study into.",
)
@click.option(
    "--preset",
    type=click.Choice(["demo", "paper594"]),
    default="demo",
    show_default=True,
    help="demo: small complete study; paper594: 46 participants, 594 intervals.",
)
@click.option("--participants", type=int, default=None, help="Number of participants.")
@click.option(
    "--complete",
    is_flag=True,
    help="Every participant runs every conversation (the default outside presets).",
)
@click.option(
    "--artifact-rate",
    type=float,
    default=0.0,
    show_default=True,
    help="Saturation artifacts per minute injected into the pulse wave.",
)
@_common_options
@click.pass_obj
@_mapped_errors
def synth(
    run: RunConfig,
    out_dir: Path,
    preset: str,
    participants: int | None,
    complete: bool,
    artifact_rate: float,
    seed_override: int | None,
    jobs_override: int | None,
) -> None:
    """Generate a synthetic study (sessions + timeline + ground truth)."""
    from .synth import SynthConfig, generate_study, paper594_config

    run = _with_overrides(run, seed_override, jobs_override)
    if preset == "paper594":
        if participants is not None or complete:
            raise ConfigError("--participants/--complete cannot modify the paper594 preset")
        config = paper594_config(seed=run.seed, artifact_rate_per_min=artifact_rate)
    else:
        if participants is not None and participants < 1:
            raise ConfigError("--participants must be >= 1")
        config = SynthConfig(
            participants=participants if participants is not None else 4,
            seed=run.seed,
            artifact_rate_per_min=artifact_rate,
        )
    manifest = generate_study(config, out_dir)
    click.echo(
        f"wrote {config.participants} sessions, {manifest['n_intervals']} intervals, "
        f"ground_truth.json -> {out_dir}"
    )


@cli.command()
@click.option(
    "--study",
    "study_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
    help="Study directory (session subdirectories), or a single session directory.",
)
@click.option(
    "--out",
    "out_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=Path("features.csv"),
    show_default=True,
    help="Feature table CSV; the exclusion log lands next to it (.exclusions.jsonl).",
)
@click.option(
    "--nn-filter",
    type=click.Choice(["none", "rules", "automatic", "median"]),
    default=None,
    help="Beat-interval cleaning method (default: from config).",
)
@click.option(
    "--window",
    type=float,
    default=None,
    help="Use only the first WINDOW seconds of beat data per interval.",
)
@_common_options
@click.pass_obj
@_mapped_errors
def extract(
    run: RunConfig,
    study_dir: Path,
    out_path: Path,
    nn_filter: str | None,
    window: float | None,
    seed_override: int | None,
    jobs_override: int | None,
) -> None:
    """Compute the per-interval feature table for a study directory."""
    run = _with_overrides(run, seed_override, jobs_override)
    pipeline = run.pipeline
    if nn_filter is not None:
        pipeline = dataclasses.replace(pipeline, nn_method=nn_filter)
    if window is not None:
        if window <= 0:
            raise ConfigError("--window must be positive")
        pipeline = dataclasses.replace(pipeline, nn_window_s=window)

    if (study_dir / "timeline.csv").is_file():
        session_dirs = [study_dir]
    else:
        session_dirs = list(iter_study(study_dir))
    if not session_dirs:
        raise ConfigError(f"{study_dir}: no timeline.csv in this directory or any subdirectory")

    rows = []
    exclusions = []
    for session_dir in session_dirs:
        session = load_session(session_dir)
        result = extract_session(session, pipeline)
        rows.extend(result.rows)
        exclusions.extend(result.exclusions)

    matrix = assemble_matrix(rows)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_features_csv(matrix, out_path)
    click.echo(f"wrote {out_path}")
    log_path = out_path.with_name(out_path.stem + ".exclusions.jsonl")
    with log_path.open("w", encoding="utf-8") as handle:
        for exc in exclusions:
            handle.write(
                json.dumps(
                    {
                        "participant_id": exc.participant_id,
                        "event": exc.event.value,
                        "phase": exc.phase.value,
                        "reason": exc.reason,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    click.echo(
        f"{len(matrix)} feature rows from {len(session_dirs)} sessions; "
        f"{len(exclusions)} excluded -> {log_path}"
    )


def _final_forest_report(task_data, analysis: AnalysisConfig, cv, seed: int, label: str):
    """Permutation importance of one forest refit on all of a task's rows.

    The pruning strength is the one the outer folds chose most often
    (ties go to the smaller value), so the final model reflects the
    cross-validated preference.
    """
    from . import learn

    counts = Counter(f.ccp_alpha for f in cv.folds)
    best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]
    model = learn.train_forest(
        task_data.X,
        task_data.y,
        learn.ForestParams(
            n_trees=analysis.n_trees,
            ccp_alpha=best,
            seed=derive_seed(seed, "final", label),
        ),
    )
    importance = learn.permutation_importance(
        model,
        task_data.X,
        task_data.y,
        task_data.feature_names,
        n_repeats=analysis.permutation_repeats,
        seed=derive_seed(seed, "importance", label),
    )
    return best, importance


def _analyze_one_task(
    run: RunConfig, conditioned: FeatureMatrix, task: TaskKind, out_dir: Path
) -> None:
    from . import learn, stats

    dataset = build_task(conditioned, task)
    seed = run.seed

    univariate = stats.paired_feature_tests(
        dataset, run.analysis, seed=derive_seed(seed, "univariate", task.value)
    )
    _write_report(out_dir / f"univariate_{task.value}.json", univariate.to_dict(), run)
    _write_csv(
        out_dir / f"univariate_{task.value}.csv",
        "feature,median_0,ci_low_0,ci_high_0,median_1,ci_low_1,ci_high_1,p_value,significant",
        [
            ",".join(
                [
                    t.name,
                    repr(t.class0.median),
                    repr(t.class0.low),
                    repr(t.class0.high),
                    repr(t.class1.median),
                    repr(t.class1.low),
                    repr(t.class1.high),
                    repr(t.p_value),
                    str(int(t.significant)),
                ]
            )
            for t in univariate.tests
        ],
    )

    cv = learn.nlopocv(
        dataset, run.analysis, k=None, seed=derive_seed(seed, "cv", task.value), jobs=run.jobs
    )
    curve = learn.kbest_curve(
        dataset, run.analysis, seed=derive_seed(seed, "kbest", task.value), jobs=run.jobs
    )
    ccp, importance = _final_forest_report(dataset, run.analysis, cv, seed, task.value)
    payload = {
        "cv": cv.to_dict(),
        "kbest": curve.to_dict(),
        "final_ccp_alpha": ccp,
        "importance": importance.to_dict(),
    }
    _write_report(out_dir / f"classification_{task.value}.json", payload, run)

    _write_csv(
        out_dir / f"kbest_{task.value}.csv",
        "k,mean_accuracy,sem",
        [f"{p.k},{p.mean_accuracy!r},{p.sem!r}" for p in curve.points],
    )
    _write_csv(
        out_dir / f"importance_{task.value}.csv",
        "feature,mean_drop,sd_drop",
        [
            f"{name},{m!r},{s!r}"
            for name, m, s in zip(
                importance.feature_names, importance.mean_drop, importance.sd_drop
            )
        ],
    )


@cli.command()
@click.option(
    "--features",
    "features_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Feature CSV produced by the extract command.",
)
@click.option(
    "--task",
    "task_token",
    type=click.Choice([*TASK_TOKENS, "all"]),
    required=True,
    help="Which binary question to analyze; 'all' runs every task plus benchmarks.",
)
@click.option(
    "--study",
    "study_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    default=None,
    help="Raw study directory; required with --task all (cleaning benchmark re-reads signals).",
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("."),
    show_default=True,
)
@_common_options
@click.pass_obj
@_mapped_errors
def analyze(
    run: RunConfig,
    features_path: Path,
    task_token: str,
    study_dir: Path | None,
    out_dir: Path,
    seed_override: int | None,
    jobs_override: int | None,
) -> None:
    """Univariate statistics and cross-validated classification reports."""
    run = _with_overrides(run, seed_override, jobs_override)
    raw = read_features_csv(features_path)
    conditioned = condition_matrix(raw, center=run.analysis.center, scale=run.analysis.scale)

    if task_token != "all":
        _analyze_one_task(run, conditioned, TASK_TOKENS[task_token], out_dir)
        return

    if study_dir is None:
        raise click.UsageError("--task all needs --study for the cleaning benchmark")

    from . import learn
    from .hrv import METHOD_LABELS, nn_filter_benchmark

    tasks = list(TaskKind)
    for task in tasks:
        _analyze_one_task(run, conditioned, task, out_dir)

    corr = correlation_matrix(conditioned)
    _write_report(
        out_dir / "correlations.json",
        {
            "features": list(conditioned.feature_names),
            "pearson": [[float(v) for v in row] for row in corr.matrix],
            "constant_features": list(corr.constant),
        },
        run,
    )
    _write_csv(
        out_dir / "correlations.csv",
        "feature," + ",".join(conditioned.feature_names),
        [
            name + "," + ",".join(repr(float(v)) for v in row)
            for name, row in zip(conditioned.feature_names, corr.matrix)
        ],
    )

    conditioning = learn.conditioning_benchmark(
        raw, tasks, run.analysis, seed=derive_seed(run.seed, "conditioning"), jobs=run.jobs
    )
    _write_report(out_dir / "conditioning.json", conditioning.to_dict(), run)

    slices = []
    for session_dir in iter_study(study_dir):
        session = load_session(session_dir)
        slices.extend(slice_intervals(session.streams, session.timeline))
    tables = extract_nn_tables(slices, METHOD_LABELS, (30.0, 60.0, 90.0, None), run.pipeline)
    benchmark = nn_filter_benchmark(
        tables, tasks, run.analysis, seed=derive_seed(run.seed, "nn-bench"), jobs=run.jobs
    )
    _write_report(out_dir / "nn_filters.json", benchmark.to_dict(), run)


@cli.command()
@click.option(
    "--features",
    "features_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--task",
    "task_token",
    type=click.Choice(list(TASK_TOKENS)),
    default=TaskKind.DURING_PREPOST.value,
    show_default=True,
    help="Rows and class labels to cluster against.",
)
@click.option(
    "--columns",
    default=None,
    help="Comma-separated feature columns (default: top scoring columns for the task).",
)
@click.option("--min-cluster-size", type=int, default=None, help="Override config value.")
@click.option("--min-samples", type=int, default=None, help="Override config value.")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("."),
    show_default=True,
)
@_common_options
@click.pass_obj
@_mapped_errors
def cluster(
    run: RunConfig,
    features_path: Path,
    task_token: str,
    columns: str | None,
    min_cluster_size: int | None,
    min_samples: int | None,
    out_dir: Path,
    seed_override: int | None,
    jobs_override: int | None,
) -> None:
    """Density clustering of task rows in a low-dimensional feature view."""
    from . import learn
    from .cluster import cluster_report, hdbscan_fit

    run = _with_overrides(run, seed_override, jobs_override)
    analysis = run.analysis
    if min_cluster_size is not None:
        analysis = dataclasses.replace(analysis, min_cluster_size=min_cluster_size)
    if min_samples is not None:
        analysis = dataclasses.replace(analysis, min_samples=min_samples)

    raw = read_features_csv(features_path)
    conditioned = condition_matrix(raw, center=analysis.center, scale=analysis.scale)
    task = TASK_TOKENS[task_token]
    dataset = build_task(conditioned, task)

    if columns is not None:
        names = [c.strip() for c in columns.split(",") if c.strip()]
        if not names:
            raise click.BadParameter("--columns must name at least one feature")
        unknown = [c for c in names if c not in dataset.feature_names]
        if unknown:
            raise click.BadParameter(f"unknown feature column(s): {', '.join(unknown)}")
        cols = [dataset.feature_names.index(c) for c in names]
    else:
        k = min(analysis.cluster_k, len(dataset.feature_names))
        cols = list(learn.select_k_best(dataset.X, dataset.y, k, method="anova"))
        names = [dataset.feature_names[c] for c in cols]

    X = dataset.X[:, cols]
    assignment = hdbscan_fit(
        X,
        min_cluster_size=analysis.min_cluster_size,
        min_samples=analysis.min_samples,
        selection=analysis.cluster_selection,
        allow_single_cluster=analysis.allow_single_cluster,
    )
    class_labels = [dataset.class_names[y] for y in dataset.y]
    report = cluster_report(assignment, class_labels)

    _write_csv(
        out_dir / "clusters.csv",
        "participant_id,class," + ",".join(names) + ",cluster",
        [
            f"{pid},{cls}," + ",".join(repr(float(v)) for v in values) + f",{int(label)}"
            for pid, cls, values, label in zip(
                dataset.participants, class_labels, X, assignment.labels
            )
        ],
    )
    payload = {
        "task": task.value,
        "columns": names,
        "min_cluster_size": analysis.min_cluster_size,
        "min_samples": analysis.min_samples,
        "selection": analysis.cluster_selection,
        "allow_single_cluster": analysis.allow_single_cluster,
        "stabilities": [float(s) for s in assignment.stabilities],
        "report": report.to_dict(),
    }
    _write_report(out_dir / "cluster_report.json", payload, run)


@cli.group()
def bench() -> None:
    """Standalone pipeline benchmarks."""


@bench.command("nn-filters")
@click.option(
    "--study",
    "study_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--windows",
    default="30,60,90,all",
    show_default=True,
    help="Comma-separated window lengths in seconds; 'all' keeps whole intervals.",
)
@click.option(
    "--methods",
    default="none,rules,automatic,median",
    show_default=True,
    help="Comma-separated cleaning methods to compare.",
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("."),
    show_default=True,
)
@_common_options
@click.pass_obj
@_mapped_errors
def bench_nn_filters(
    run: RunConfig,
    study_dir: Path,
    windows: str,
    methods: str,
    out_dir: Path,
    seed_override: int | None,
    jobs_override: int | None,
) -> None:
    """Cross-validated accuracy per cleaning method and window length."""
    from .hrv import METHOD_LABELS, nn_filter_benchmark

    run = _with_overrides(run, seed_override, jobs_override)
    window_values: list[float | None] = []
    for token in windows.split(","):
        token = token.strip()
        if not token:
            continue
        if token == "all":
            window_values.append(None)
            continue
        try:
            value = float(token)
        except ValueError:
            raise click.BadParameter(f"window {token!r} is not a number or 'all'")
        if value <= 0:
            raise click.BadParameter("window lengths must be positive")
        window_values.append(value)
    method_values = [m.strip() for m in methods.split(",") if m.strip()]
    unknown = [m for m in method_values if m not in METHOD_LABELS]
    if unknown:
        raise click.BadParameter(f"unknown cleaning method(s): {', '.join(unknown)}")
    if not window_values or not method_values:
        raise click.BadParameter("need at least one window and one method")

    slices = []
    n_sessions = 0
    for session_dir in iter_study(study_dir):
        session = load_session(session_dir)
        slices.extend(slice_intervals(session.streams, session.timeline))
        n_sessions += 1
    if n_sessions == 0:
        raise ConfigError(f"{study_dir}: no session directories with a timeline.csv")

    tables = extract_nn_tables(slices, method_values, window_values, run.pipeline)
    benchmark = nn_filter_benchmark(
        tables,
        list(TaskKind),
        run.analysis,
        seed=derive_seed(run.seed, "nn-bench"),
        jobs=run.jobs,
    )
    _write_report(out_dir / "nn_filters.json", benchmark.to_dict(), run)


@bench.command("conditioning")
@click.option(
    "--features",
    "features_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("."),
    show_default=True,
)
@_common_options
@click.pass_obj
@_mapped_errors
def bench_conditioning(
    run: RunConfig,
    features_path: Path,
    out_dir: Path,
    seed_override: int | None,
    jobs_override: int | None,
) -> None:
    """Cross-validated accuracy for each per-participant conditioning variant."""
    from . import learn

    run = _with_overrides(run, seed_override, jobs_override)
    raw = read_features_csv(features_path)
    report = learn.conditioning_benchmark(
        raw,
        list(TaskKind),
        run.analysis,
        seed=derive_seed(run.seed, "conditioning"),
        jobs=run.jobs,
    )
    _write_report(out_dir / "conditioning.json", report.to_dict(), run)


main = cli

if __name__ == "__main__":
    main()
