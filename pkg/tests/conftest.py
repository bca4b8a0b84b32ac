"""Shared fixtures: the counseling spec, knowledge base and scenario corpus."""
from __future__ import annotations

from pathlib import Path

import pytest

from ecpcounsel.conversation_spec import load_spec
from ecpcounsel.knowledge_base import load_kb_file
from ecpcounsel.scenario_harness import load_scenario_dir

ROOT = Path(__file__).resolve().parent.parent
SPEC_PATH = ROOT / "fixtures" / "specs" / "ecp_counseling.yaml"
MINIMAL_SPEC_PATH = ROOT / "fixtures" / "specs" / "minimal.yaml"
KB_PATH = ROOT / "fixtures" / "kb" / "ecp_kb.yaml"
SCENARIO_DIR = ROOT / "fixtures" / "scenarios"


@pytest.fixture(scope="session")
def spec():
    return load_spec(SPEC_PATH)


@pytest.fixture(scope="session")
def minimal_spec():
    return load_spec(MINIMAL_SPEC_PATH)


@pytest.fixture(scope="session")
def kb():
    return load_kb_file(KB_PATH)


@pytest.fixture(scope="session")
def scenarios():
    return load_scenario_dir(SCENARIO_DIR)
