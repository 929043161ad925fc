"""Run configuration: extraction and analysis settings, seed derivation.

A :class:`RunConfig` captures everything that influences results, so that a
report embedding it is reproducible from the file alone. Configs are plain
frozen dataclasses; JSON overrides are merged key-by-key onto defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError


def derive_seed(root: int, *parts: int | str) -> int:
    """Derive a child seed from a root seed and a path of indices/names.

    Stable across runs and platforms. String parts are hashed so that
    participant identifiers can key their own RNG streams.
    """
    entropy: list[int] = [int(root) & 0xFFFFFFFF]
    for part in parts:
        if isinstance(part, str):
            digest = hashlib.sha256(part.encode("utf-8")).digest()
            entropy.append(int.from_bytes(digest[:4], "little"))
        else:
            entropy.append(int(part) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def rng_for(root: int, *parts: int | str) -> np.random.Generator:
    """Independent generator for one unit of work under a root seed."""
    return np.random.default_rng(derive_seed(root, *parts))


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for the raw-signal-to-features stage."""

    # pulse wave
    ppg_filter_order: int = 3
    ppg_band_hz: tuple[float, float] = (0.5, 8.0)
    peak_window_s: float = 0.111
    beat_window_s: float = 0.667
    beat_offset: float = 0.02
    refractory_s: float = 0.3
    # beat-interval cleaning
    nn_method: str = "automatic"  # none | rules | automatic | median
    rules_low_s: float = 0.33
    rules_high_s: float = 1.5
    automatic_cutoff: float = 0.4
    median_window: int = 5
    median_tau_s: float = 0.25
    nn_window_s: float | None = None  # truncate beat data to the first N seconds
    # spectral
    freq_min_hz: float = 0.01
    freq_max_hz: float = 0.5
    n_freqs: int = 491
    lf_band_hz: tuple[float, float] = (0.04, 0.15)
    hf_band_hz: tuple[float, float] = (0.15, 0.40)
    # electrodermal
    eda_filter_order: int = 4
    eda_highcut_hz: float = 3.0  # skipped when the stream rate cannot express it
    eda_split_hz: float = 0.05
    scr_min_amplitude_us: float = 0.01
    scr_min_separation_s: float = 1.0
    scr_mean_mode: str = "phasic_mean"  # or peak_amplitude_mean
    # filtering style
    zero_phase: bool = True

    def __post_init__(self) -> None:
        if self.nn_method not in ("none", "rules", "automatic", "median"):
            raise ConfigError(f"unknown nn_method {self.nn_method!r}")
        if self.scr_mean_mode not in ("phasic_mean", "peak_amplitude_mean"):
            raise ConfigError(f"unknown scr_mean_mode {self.scr_mean_mode!r}")
        if self.median_window < 3 or self.median_window % 2 == 0:
            raise ConfigError("median_window must be an odd integer >= 3")
        if self.nn_window_s is not None and self.nn_window_s <= 0:
            raise ConfigError("nn_window_s must be positive or null")


@dataclass(frozen=True)
class AnalysisConfig:
    """Settings for statistics, classification, and clustering."""

    # conditioning
    center: bool = True
    scale: bool = False
    # univariate statistics
    alpha: float = 0.05
    n_bootstrap: int = 10_000
    confidence: float = 0.95
    pairing: str = "participant"  # participant | event
    # forests and cross-validation
    n_trees: int = 500
    ccp_alphas: tuple[float, ...] = (0.0, 0.001, 0.01, 0.05, 0.1)
    selectors: tuple[str, ...] = ("anova", "mutual_info")
    inner: str = "lopo"  # lopo | kfold
    inner_folds: int = 5
    kbest_ks: tuple[int, ...] = tuple(range(1, 14))
    permutation_repeats: int = 10
    # clustering
    min_cluster_size: int = 5
    min_samples: int = 5
    cluster_selection: str = "eom"  # eom | leaf
    allow_single_cluster: bool = True
    cluster_k: int = 2  # features kept per task when none are named explicitly

    def __post_init__(self) -> None:
        if self.pairing not in ("participant", "event"):
            raise ConfigError(f"unknown pairing {self.pairing!r}")
        if self.inner not in ("lopo", "kfold"):
            raise ConfigError(f"unknown inner CV mode {self.inner!r}")
        if self.cluster_selection not in ("eom", "leaf"):
            raise ConfigError(f"unknown cluster_selection {self.cluster_selection!r}")
        for name in self.selectors:
            if name not in ("anova", "mutual_info"):
                raise ConfigError(f"unknown selector {name!r}")
        if not self.selectors:
            raise ConfigError("selectors must not be empty")
        if not self.ccp_alphas:
            raise ConfigError("ccp_alphas must not be empty")
        if not 0 < self.confidence < 1:
            raise ConfigError("confidence must lie in (0, 1)")


@dataclass(frozen=True)
class RunConfig:
    """Everything that influences a run: seed, parallelism, both stages."""

    seed: int = 0
    jobs: int | None = None  # None -> use available cores
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _merge_dataclass(instance: Any, overrides: dict[str, Any], path: str) -> Any:
    known = {f.name: f for f in dataclasses.fields(instance)}
    changes: dict[str, Any] = {}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path}{key}")
        current = getattr(instance, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            changes[key] = _merge_dataclass(current, value, f"{path}{key}.")
        elif isinstance(current, tuple) and isinstance(value, list):
            changes[key] = tuple(value)
        else:
            changes[key] = value
    try:
        return dataclasses.replace(instance, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None, base: RunConfig | None = None) -> RunConfig:
    """Load a JSON override file on top of defaults (or a given base)."""
    config = base if base is not None else RunConfig()
    if path is None:
        return config
    try:
        raw = Path(path).read_text(encoding="utf-8")
        overrides = json.loads(raw)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(overrides, dict):
        raise ConfigError("config file must contain a JSON object")
    return _merge_dataclass(config, overrides, "")
