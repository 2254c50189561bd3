"""Pinned traces: any change to draw order, event payloads or serialization shows up here."""

import importlib.util
from pathlib import Path

import pytest

from contract_engine.replay import replay
from contract_engine.trace import read_jsonl

ROOT = Path(__file__).resolve().parent.parent
GOLDEN = Path(__file__).parent / "golden"


def _regen_module():
    spec = importlib.util.spec_from_file_location("regen_golden", ROOT / "scripts" / "regen_golden.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


@pytest.fixture(scope="module")
def regenerated(tmp_path_factory):
    dest = tmp_path_factory.mktemp("golden")
    _regen_module().generate(dest)
    return dest


def test_golden_set_is_complete(regenerated):
    assert sorted(p.name for p in regenerated.iterdir()) == sorted(p.name for p in GOLDEN.glob("*.jsonl"))


@pytest.mark.parametrize("name", sorted(p.name for p in GOLDEN.glob("*.jsonl")))
def test_trace_matches_golden_bytes(regenerated, name):
    assert (regenerated / name).read_bytes() == (GOLDEN / name).read_bytes()


@pytest.mark.parametrize("name", sorted(p.name for p in GOLDEN.glob("*.jsonl")))
def test_golden_trace_replays_clean(name):
    events = read_jsonl(GOLDEN / name)
    assert events[0].kind.value == "DRAFTED" and events[0].contract_id == "root"
    assert replay(events).ok
