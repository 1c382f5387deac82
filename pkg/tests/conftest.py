"""Shared fixtures: small tasks, a fast config, and scripted gateways."""
from __future__ import annotations

import pytest

from instructforge.config import PipelineConfig
from instructforge.gateway import LlmGateway, ScriptedBackend
from instructforge.task import (
    TaskDefinition,
    boxed_latex,
    final_answer_line,
    multiple_choice,
    yes_no_maybe,
)


@pytest.fixture
def mc_task() -> TaskDefinition:
    return TaskDefinition(
        name="finance_mc",
        description="Answer multiple-choice questions about corporate finance.",
        answer_format=multiple_choice(),
        domain_label="corporate finance",
    )


@pytest.fixture
def ynm_task() -> TaskDefinition:
    return TaskDefinition(
        name="biomed_ynm",
        description="Answer yes/no/maybe questions about biomedical research.",
        answer_format=yes_no_maybe(),
        domain_label="biomedical research",
    )


@pytest.fixture
def line_task() -> TaskDefinition:
    return TaskDefinition(
        name="math_line",
        description="Solve quantitative word problems.",
        answer_format=final_answer_line(),
        domain_label="quantitative reasoning",
    )


@pytest.fixture
def boxed_task() -> TaskDefinition:
    return TaskDefinition(
        name="math_boxed",
        description="Solve symbolic math problems.",
        answer_format=boxed_latex(),
        domain_label="symbolic mathematics",
    )


@pytest.fixture
def small_config() -> PipelineConfig:
    """A configuration sized for tests: few iterations, tiny targets."""
    return PipelineConfig(
        n_seed_keywords=4,
        expansion_iterations=2,
        keywords_per_direction=2,
        expansion_sample_size=3,
        retrieval_rounds=2,
        retrieval_query_keywords=3,
        retrieval_top_k=2,
        consistency_samples=5,
        consistency_threshold=0.6,
        target_dataset_size=50,
        rng_seed=7,
    )


@pytest.fixture
def scripted():
    """A (backend, gateway) pair backed by canned responses."""
    backend = ScriptedBackend()
    return backend, LlmGateway(backend)
