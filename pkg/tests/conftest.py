"""Shared fixtures: one small synthetic study reused across test modules.

Everything here is seeded; the fixtures are session-scoped because
generating and extracting a study is the expensive part of the suite.
"""

from __future__ import annotations

import pytest

from ctxsense.config import AnalysisConfig, PipelineConfig
from ctxsense.features import assemble_matrix, extract_session
from ctxsense.ingest import Session
from ctxsense.synth import SynthConfig, generate_session, generate_study

DEMO_PARTICIPANTS = 6
DEMO_SEED = 3


@pytest.fixture(scope="session")
def demo_config() -> SynthConfig:
    return SynthConfig(participants=DEMO_PARTICIPANTS, seed=DEMO_SEED)


@pytest.fixture(scope="session")
def demo_sessions(demo_config):
    return [generate_session(demo_config, i) for i in range(demo_config.participants)]


@pytest.fixture(scope="session")
def demo_study_dir(tmp_path_factory, demo_config):
    out = tmp_path_factory.mktemp("study")
    generate_study(demo_config, out)
    return out


@pytest.fixture(scope="session")
def pipeline_config() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture(scope="session")
def demo_matrix(demo_sessions, pipeline_config):
    rows = []
    for synth in demo_sessions:
        result = extract_session(
            Session(timeline=synth.timeline, streams=synth.streams), pipeline_config
        )
        assert not result.exclusions
        rows.extend(result.rows)
    return assemble_matrix(rows)


@pytest.fixture(scope="session")
def fast_analysis() -> AnalysisConfig:
    """Small forests and a cheap inner loop; still the real algorithms."""
    return AnalysisConfig(
        n_trees=25,
        ccp_alphas=(0.0,),
        inner="kfold",
        inner_folds=3,
        kbest_ks=(1, 2, 3, 5, 8, 13),
        n_bootstrap=400,
        permutation_repeats=3,
    )
