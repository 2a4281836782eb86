"""Shared fixtures: default configuration, the four-symbol sample plan and its fixture files."""

from __future__ import annotations

from pathlib import Path

import pytest

from pidtwin.config import DEFAULT_CONFIG
from pidtwin.synthetic import generate_synthetic_plan, sample_layout, write_fixture
from pidtwin.util import deep_copy


@pytest.fixture
def repo_root() -> Path:
    return Path(__file__).resolve().parents[1]


@pytest.fixture
def cfg() -> dict:
    return deep_copy(DEFAULT_CONFIG)


@pytest.fixture
def sample():
    return generate_synthetic_plan(sample_layout(), seed=0)


@pytest.fixture
def sample_files(tmp_path, sample) -> dict[str, Path]:
    return write_fixture(sample, tmp_path / "fixtures")
