from __future__ import annotations

from pathlib import Path

import pytest

from promptmcts.data import load_dataset
from promptmcts.runner import bundled_root, bundled_schema
from promptmcts.tasks import EventExtractionTask

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data" / "synthetic"


@pytest.fixture(scope="session")
def schema():
    return bundled_schema()


@pytest.fixture(scope="session")
def root(schema):
    return bundled_root()


@pytest.fixture(scope="session")
def ee_task(schema):
    return EventExtractionTask(schema)


@pytest.fixture(scope="session")
def train_low(schema):
    return load_dataset(DATA / "train_low.jsonl", schema)


@pytest.fixture(scope="session")
def dev(schema):
    return load_dataset(DATA / "dev.jsonl", schema)
