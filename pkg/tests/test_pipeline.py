from __future__ import annotations

import dataclasses
import json
import shutil

import pytest

from evfusion.backends import ReplaySource
from evfusion.cli import main
from evfusion.config import config_from_dict, load_config
from evfusion.errors import InvalidInputError, PipelineInvariantError
from evfusion.evidence import RiskLevel
from evfusion.pipeline import LogicalClock, Runtime, SampleSpec, check_invariants, run_batch, run_sample
from evfusion.records import dumps_record, read_records

from .support.make_fixtures import FIXTURES
from .support.scenarios import SCENARIOS
from .support.sim import Simulator

GOLDEN = FIXTURES / "golden"
CONFIG = FIXTURES / "config.json"
MANIFEST = FIXTURES / "manifest.jsonl"
GOLDEN_FILES = ("records.jsonl", "outputs.jsonl", "summary.json")


def batch(out, *extra) -> None:
    assert main(["batch", str(MANIFEST), "--config", str(CONFIG), "--out", str(out), *extra]) == 0


@pytest.fixture(scope="module")
def golden_records():
    return {r.sample_id: r for r in read_records(GOLDEN / "records.jsonl")}


def test_three_runs_match_golden_bytes(tmp_path, capsys):
    for i in range(3):
        batch(tmp_path / f"run{i}")
        for name in GOLDEN_FILES:
            assert (tmp_path / f"run{i}" / name).read_bytes() == (GOLDEN / name).read_bytes(), name


def test_parallel_batch_matches_golden(tmp_path, capsys):
    batch(tmp_path, "--workers", "4")
    for name in GOLDEN_FILES:
        assert (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes(), name


def test_simulator_run_matches_recorded_fixtures(golden_records):
    config = load_config(CONFIG, env={})
    sim = Simulator(SCENARIOS)
    runtime = Runtime(
        config,
        config.catalog(),
        {r: sim.chat_client() for r in ("source_a", "source_b", "reasoner")},
        sim.tool_client(),
    )
    for s in SCENARIOS:
        outcome = run_sample(SampleSpec.from_dict(s.spec()), runtime)
        assert dumps_record(outcome.record) == dumps_record(golden_records[s.sample_id]), s.sample_id


def test_every_fixture_sample_is_answered_correctly(golden_records):
    assert len(golden_records) == 5
    for rec in golden_records.values():
        assert rec.is_correct, rec.sample_id
        assert rec.completeness.passed
        check_invariants(rec, load_config(CONFIG, env={}))


def test_speech_sample_flags_segmentation_artifact(golden_records):
    rec = golden_records["speech-interview"]
    risky = [i for i in rec.evidence if i.risk is RiskLevel.SEGMENTATION_ARTIFACT]
    assert [i.origin.name for i in risky] == ["speaker count"]
    assert any(c.resolved for c in rec.contradictions)


def test_planted_contradiction_is_resolved_by_segment_tool(golden_records):
    rec = golden_records["dog-bark-conflict"]
    step2 = [r for r in rec.rounds if r.step.value == "step2"]
    assert step2 and all(req.time_range is not None for rnd in step2 for req in rnd.invoked)
    assert any(c.resolved for c in rec.contradictions)
    assert rec.decision.chosen == "A"


def test_sloppy_reasoning_is_repaired_once(golden_records):
    assert golden_records["music-instrument"].repairs == 1
    assert sum(r.repairs for r in golden_records.values()) == 1


def test_failed_tool_is_logged_not_fatal(golden_records):
    rec = golden_records["street-scene"]
    failed = [r for r in rec.all_tool_results() if not r.ok]
    assert [(r.tool, r.error) for r in failed] == [("scene context", "timeout")]


def test_replay_profiles_reproduce_golden(tmp_path, golden_records):
    records = list(golden_records.values())
    source = ReplaySource([e for r in records for e in r.exchanges], [t for r in records for t in r.all_tool_results()])
    data = json.loads(CONFIG.read_text())
    for prof in data["profiles"].values():
        prof["kind"] = "replay"
    config = config_from_dict(data, FIXTURES)
    outcomes = run_batch(
        [SampleSpec.from_dict(json.loads(line)) for line in MANIFEST.read_text().splitlines()],
        Runtime.from_config(config, source),
    )
    for o in outcomes:
        assert dumps_record(o.record) == dumps_record(golden_records[o.record.sample_id])


def test_missing_selection_fixture_degrades_to_fallback(tmp_path, capsys):
    root = tmp_path / "fx"
    shutil.copytree(FIXTURES, root)
    removed = 0
    for p in (root / "chat").iterdir():
        text = p.read_text()
        if "tempo of the piece" in text and "TASK: answer-selection" in text:
            p.unlink()
            removed += 1
    assert removed == 1
    assert (
        main(
            [
                "batch",
                str(root / "manifest.jsonl"),
                "--config",
                str(root / "config.json"),
                "--out",
                str(tmp_path / "out"),
            ]
        )
        == 0
    )
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["completed"] == 5
    assert summary["failed"] == []
    rec = {r.sample_id: r for r in read_records(tmp_path / "out" / "records.jsonl")}["music-tempo"]
    assert rec.decision.method == "fallback"


def test_invariant_check_catches_repeated_invocation(golden_records):
    rec = golden_records["music-tempo"]
    rnd = rec.rounds[0]
    doubled = dataclasses.replace(rec, rounds=(rnd, dataclasses.replace(rnd, index=rnd.index + 1)))
    with pytest.raises(PipelineInvariantError, match="repeated"):
        check_invariants(doubled, load_config(CONFIG, env={}))


def test_invariant_check_catches_missing_decision(golden_records):
    with pytest.raises(PipelineInvariantError, match="decision"):
        check_invariants(dataclasses.replace(golden_records["music-tempo"], decision=None), load_config(CONFIG, env={}))


def test_sample_spec_accepts_answer_text_and_validates():
    spec = SampleSpec.from_dict(
        {"sample_id": 1, "audio": "x", "question": "q", "choices": ["a", "b"], "duration_s": 2, "answer": "b"}
    )
    assert spec.answer == "B"
    with pytest.raises(InvalidInputError):
        SampleSpec.from_dict({"sample_id": 1, "audio": "x", "question": "q", "choices": ["a"], "duration_s": 2})
    with pytest.raises(InvalidInputError):
        SampleSpec.from_dict({"sample_id": 1, "audio": "x", "question": "q", "choices": ["a", "b"], "duration_s": 0})
    with pytest.raises(InvalidInputError):
        SampleSpec.from_dict({"sample_id": 1})


def test_logical_clock_ticks():
    clock = LogicalClock()
    assert [clock(), clock(), clock()] == [1.0, 2.0, 3.0]
