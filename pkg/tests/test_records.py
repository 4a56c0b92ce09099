from __future__ import annotations

import json
import logging

from evfusion.records import PipelineRecord, dumps_record, read_records, write_records

from .support.corpus import RecordSpec, build_records
from .support.make_fixtures import FIXTURES

GOLDEN = FIXTURES / "golden" / "records.jsonl"


def test_golden_records_round_trip_byte_for_byte():
    lines = GOLDEN.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 5
    for line in lines:
        assert dumps_record(PipelineRecord.from_dict(json.loads(line))) == line


def test_round_trip_preserves_derived_views():
    for rec in read_records(GOLDEN):
        again = PipelineRecord.from_dict(json.loads(dumps_record(rec)))
        assert again.bundle().to_dict() == rec.bundle().to_dict()
        assert (again.agreement, again.predictions, again.is_correct) == (
            rec.agreement,
            rec.predictions,
            rec.is_correct,
        )
        assert [r.to_dict() for r in again.all_tool_results()] == [r.to_dict() for r in rec.all_tool_results()]


def test_write_then_read(tmp_path):
    records = build_records(
        [RecordSpec("majority", True, 0.7, 3, False), RecordSpec("conflicting", False, 0.3, 0, True)]
    )
    path = tmp_path / "r.jsonl"
    assert write_records(records, path) == 2
    back = list(read_records(path))
    assert [dumps_record(r) for r in back] == [dumps_record(r) for r in records]


def test_reader_skips_malformed_lines_and_names_them(tmp_path, caplog):
    good = dumps_record(build_records([RecordSpec("unanimous", True, 0.9, 1, False)])[0])
    newer = json.dumps({**json.loads(good), "schema_version": 99})
    path = tmp_path / "r.jsonl"
    path.write_text("\n".join([good, "{not json", "", '{"question": "no id"}', newer, good]) + "\n")
    with caplog.at_level(logging.WARNING, logger="evfusion.records"):
        back = list(read_records(path))
    assert len(back) == 2
    skipped = [r.getMessage() for r in caplog.records]
    assert len(skipped) == 3
    assert any(":2:" in m for m in skipped) and any(":5:" in m and "newer" in m for m in skipped)


def test_minimal_record_defaults():
    rec = PipelineRecord.from_dict({"sample_id": 3, "question": "q", "choices": ["x", "y"]})
    assert rec.sample_id == "3"
    assert rec.decision is None and rec.is_correct is None
    assert not rec.has_evidence
    assert rec.corroborated_count == 0
