import json
from pathlib import Path

import pytest

from diagkit.criteria import load_criteria
from diagkit.kgstore import load_kg

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def kg():
    return load_kg(FIXTURES / "kg.jsonl")


@pytest.fixture(scope="session")
def criteria_map(kg):
    return load_criteria(FIXTURES / "criteria.jsonl", kg)


@pytest.fixture(scope="session")
def kg_raw_records():
    records = []
    for line in (FIXTURES / "kg.jsonl").read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


@pytest.fixture(scope="session")
def criteria_raw_records():
    records = []
    for line in (FIXTURES / "criteria.jsonl").read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records
