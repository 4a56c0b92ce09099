"""Per-sample debug record: JSONL persistence with a tolerant reader."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TextIO

from .argumentation import (
    AnswerDecision,
    CompletenessReport,
    EvidenceBundle,
    ReasoningDocument,
)
from .backends import ChatExchange
from .contradiction import Contradiction, VerificationHypothesis
from .evidence import ContentType, EvidenceItem, EvidenceStatus
from .intake import SourceReport
from .loop import RoundLog
from .tools import ToolResult
from .unified import AgreementLevel, Disagreement, UnifiedAnalysis, agreement_from_predictions

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True, slots=True)
class PipelineRecord:
    """Everything one sample produced; enough to re-run argumentation alone."""

    sample_id: str
    question: str
    choices: tuple[str, ...]
    audio: str = ""
    duration_s: float = 0.0
    correct: str | None = None
    content: ContentType = ContentType.MIXED
    source_reports: tuple[SourceReport, ...] = ()
    unified: UnifiedAnalysis | None = None
    rounds: tuple[RoundLog, ...] = ()
    step1_stop: str | None = None
    step2_stop: str | None = None
    contradictions: tuple[Contradiction, ...] = ()
    hypotheses: tuple[VerificationHypothesis, ...] = ()
    unverifiable: tuple[str, ...] = ()
    evidence: tuple[EvidenceItem, ...] = ()
    disagreements: tuple[Disagreement, ...] = ()
    decision: AnswerDecision | None = None
    document: ReasoningDocument | None = None
    completeness: CompletenessReport | None = None
    repairs: int = 0
    exchanges: tuple[ChatExchange, ...] = ()
    timings: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    # --- derived views used by analytics -----------------------------------

    @property
    def sources(self) -> tuple[str, ...]:
        return tuple(r.source for r in self.source_reports)

    @property
    def chosen(self) -> str | None:
        return self.decision.chosen if self.decision else None

    @property
    def is_correct(self) -> bool | None:
        if self.correct is None or self.decision is None:
            return None
        return self.decision.chosen == self.correct

    @property
    def predictions(self) -> tuple[str, ...]:
        return tuple(p for r in self.source_reports for p in r.tentative_predictions if p)

    @property
    def agreement(self) -> AgreementLevel:
        if self.unified is not None:
            return self.unified.agreement
        return agreement_from_predictions(self.predictions)

    @property
    def corroborated_count(self) -> int:
        items = self.evidence or (self.unified.items if self.unified else ())
        return sum(1 for i in items if i.status is EvidenceStatus.CORROBORATED)

    def all_tool_results(self) -> list[ToolResult]:
        return [r for rnd in self.rounds for r in rnd.results]

    @property
    def has_evidence(self) -> bool:
        return bool(self.evidence) or bool(self.unified and self.unified.items)

    def bundle(self) -> EvidenceBundle:
        """The unredacted argumentation input rebuilt from the record alone."""
        items = self.evidence or (self.unified.items if self.unified else ())
        disagreements = self.disagreements or (self.unified.disagreements if self.unified else ())
        return EvidenceBundle(
            sample_id=self.sample_id,
            question=self.question,
            choices=self.choices,
            content=self.content,
            sources=self.sources,
            observations=tuple(o for r in self.source_reports for o in r.observations),
            items=tuple(items),
            tool_results=tuple(r for r in self.all_tool_results() if r.ok),
            contradictions=self.contradictions,
            disagreements=tuple(disagreements),
            unverifiable=self.unverifiable,
        )

    # --- serialization ------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "sample_id": self.sample_id,
            "question": self.question,
            "choices": list(self.choices),
            "audio": self.audio,
            "duration_s": round(self.duration_s, 4),
            "correct": self.correct,
            "content": self.content.value,
            "source_reports": [r.to_dict() for r in self.source_reports],
            "unified": self.unified.to_dict() if self.unified else None,
            "rounds": [r.to_dict() for r in self.rounds],
            "step1_stop": self.step1_stop,
            "step2_stop": self.step2_stop,
            "contradictions": [c.to_dict() for c in self.contradictions],
            "hypotheses": [h.to_dict() for h in self.hypotheses],
            "unverifiable": list(self.unverifiable),
            "evidence": [i.to_dict() for i in self.evidence],
            "disagreements": [d.to_dict() for d in self.disagreements],
            "decision": self.decision.to_dict() if self.decision else None,
            "document": self.document.to_dict() if self.document else None,
            "completeness": self.completeness.to_dict() if self.completeness else None,
            "repairs": self.repairs,
            "exchanges": [e.to_dict() for e in self.exchanges],
            "timings": {k: [round(a, 4), round(b, 4)] for k, (a, b) in self.timings.items()},
            "notes": list(self.notes),
        }
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PipelineRecord:
        def opt(key: str, build):
            value = data.get(key)
            return build(value) if value else None

        return cls(
            sample_id=str(data["sample_id"]),
            question=data["question"],
            choices=tuple(data["choices"]),
            audio=data.get("audio", ""),
            duration_s=float(data.get("duration_s", 0.0)),
            correct=data.get("correct"),
            content=ContentType(data.get("content", "mixed")),
            source_reports=tuple(SourceReport.from_dict(r) for r in data.get("source_reports") or ()),
            unified=opt("unified", UnifiedAnalysis.from_dict),
            rounds=tuple(RoundLog.from_dict(r) for r in data.get("rounds") or ()),
            step1_stop=data.get("step1_stop"),
            step2_stop=data.get("step2_stop"),
            contradictions=tuple(Contradiction.from_dict(c) for c in data.get("contradictions") or ()),
            hypotheses=tuple(VerificationHypothesis.from_dict(h) for h in data.get("hypotheses") or ()),
            unverifiable=tuple(data.get("unverifiable") or ()),
            evidence=tuple(EvidenceItem.from_dict(i) for i in data.get("evidence") or ()),
            disagreements=tuple(Disagreement.from_dict(d) for d in data.get("disagreements") or ()),
            decision=opt("decision", AnswerDecision.from_dict),
            document=opt("document", ReasoningDocument.from_dict),
            completeness=opt("completeness", CompletenessReport.from_dict),
            repairs=int(data.get("repairs", 0)),
            exchanges=tuple(ChatExchange.from_dict(e) for e in data.get("exchanges") or ()),
            timings={k: (float(v[0]), float(v[1])) for k, v in (data.get("timings") or {}).items()},
            notes=tuple(data.get("notes") or ()),
        )


def dumps_record(record: PipelineRecord) -> str:
    return json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_record(record: PipelineRecord, fh: TextIO) -> None:
    fh.write(dumps_record(record) + "\n")


def write_records(records: Iterable[PipelineRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            write_record(rec, fh)
            n += 1
    return n


def read_records(path: str | Path) -> Iterator[PipelineRecord]:
    """Yield records, skipping malformed lines with a warning naming the line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                version = int(data.get("schema_version", SCHEMA_VERSION))
                if version > SCHEMA_VERSION:
                    raise ValueError(f"schema version {version} is newer than {SCHEMA_VERSION}")
                yield PipelineRecord.from_dict(data)
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                log.warning("%s:%d: skipping malformed record (%s)", path, lineno, exc)
