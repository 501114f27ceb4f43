import json
import os
import tempfile

import pytest

from app.core.config import settings
from app.services.convex_service import SubproblemSolver
from app.services.generator_service import reference_instance
from tests.fixtures.sample_data import EXAMPLE1_DOCUMENT, T1_DOCUMENT, t1_instance


@pytest.fixture
def t1():
    """The T1 reference instance (m = 1)."""
    return t1_instance()


@pytest.fixture
def t1_m0():
    """T1 with alpha = 0.1, so every scenario is enforced."""
    return t1_instance(alpha=0.1)


@pytest.fixture
def example1():
    return reference_instance("example1")


@pytest.fixture
def solver():
    return SubproblemSolver()


@pytest.fixture
def temp_dir():
    """Create a temporary working directory."""
    with tempfile.TemporaryDirectory() as directory:
        yield directory


@pytest.fixture
def temp_output_dir(temp_dir):
    """Point OUTPUT_DIR at a temporary directory during the test."""
    original_output_dir = settings.OUTPUT_DIR
    settings.OUTPUT_DIR = os.path.join(temp_dir, "runs")
    yield settings.OUTPUT_DIR
    settings.OUTPUT_DIR = original_output_dir


@pytest.fixture
def t1_file(temp_dir):
    """T1 written as an instance file."""
    path = os.path.join(temp_dir, "t1.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(T1_DOCUMENT, f)
    return path


@pytest.fixture
def example1_file(temp_dir):
    path = os.path.join(temp_dir, "example1.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(EXAMPLE1_DOCUMENT, f)
    return path
