import json
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from actionqa import bench, kg as kgmod
from actionqa.lang import E, R, T

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

KG0_LINES = [
    {"kind": "type", "id": "Person", "label": "people"},
    {"kind": "type", "id": "Instrument", "label": "instruments"},
    {"kind": "entity", "id": "a", "types": ["Person"], "label": "a"},
    {"kind": "entity", "id": "b", "types": ["Person"], "label": "b"},
    {"kind": "entity", "id": "x", "types": ["Instrument"], "label": "x"},
    {"kind": "entity", "id": "y", "types": ["Instrument"], "label": "y"},
    {"kind": "relation", "id": "r1", "label": "play"},
    {"kind": "triple", "s": "a", "r": "r1", "o": "x"},
    {"kind": "triple", "s": "b", "r": "r1", "o": "x"},
    {"kind": "triple", "s": "b", "r": "r1", "o": "y"},
]


def write_jsonl(path: Path, records) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def kg0_path(tmp_path) -> Path:
    return write_jsonl(tmp_path / "kg0.jsonl", KG0_LINES)


@pytest.fixture
def kg0(kg0_path):
    return kgmod.load_kg(kg0_path)


def kg0_question(gold, text="which instruments does b play ?", qid="q0"):
    """A KG0 question whose artifacts are [type Instrument, entity b, relation r1]."""
    arts = [
        T("Instrument", span=(6, 17), label="instruments"),
        E("b", span=(23, 24), label="b"),
        R("r1", span=(25, 29), label="play"),
    ]
    assert [text[a.span[0] : a.span[1]] for a in arts] == ["instruments", "b", "play"]
    return bench.QuestionRecord(qid, text, "simple", arts, gold)


@pytest.fixture(scope="session")
def small_bench():
    cfg = bench.BenchConfig(seed=3, n_entities=120, questions_per_category={c: 30 for c in bench.CATEGORIES})
    kg = bench.generate_kg(cfg)
    return cfg, kg, bench.generate_questions(kg, cfg)


@pytest.fixture(scope="session")
def default_bench():
    cfg = bench.BenchConfig(seed=0)
    kg = bench.generate_kg(cfg)
    return cfg, kg, bench.generate_questions(kg, cfg)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {line}")
