"""End-to-end run of one sample: intake, unified analysis, verification loop, argumentation."""

from __future__ import annotations

import json
import logging
import threading
import time
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

from .argumentation import SECTION_ORDER, Argument, argue
from .backends import (
    ChatClient,
    ChatExchange,
    ChatSession,
    Message,
    ReplaySource,
    ToolClient,
    chat_client_for,
    tool_client_for,
)
from .config import RunConfig
from .contradiction import unverifiable
from .errors import BackendError, InvalidInputError, PartialIntakeError, PipelineInvariantError
from .evidence import ContentType, tier_policy
from .intake import (
    ParsedResponse,
    SourceReport,
    choice_label,
    classify_content,
    parse_response,
    plan_queries,
    synthesize_source,
)
from .loop import LoopState, ToolExecutor, run_step1, run_step2
from .records import PipelineRecord, dumps_record
from .tools import ToolCatalog
from .unified import corroborate_sources

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class SampleSpec:
    sample_id: str
    audio: str
    question: str
    choices: tuple[str, ...]
    duration_s: float
    answer: str | None = None
    content: ContentType | None = None

    def __post_init__(self) -> None:
        if len(self.choices) < 2:
            raise InvalidInputError(f"{self.sample_id}: at least two choices are required")
        if not self.duration_s > 0:
            raise InvalidInputError(f"{self.sample_id}: duration_s must be positive")
        labels = [choice_label(i) for i in range(len(self.choices))]
        if self.answer is not None and self.answer not in labels:
            raise InvalidInputError(f"{self.sample_id}: answer {self.answer!r} not among {labels}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SampleSpec:
        """Accepts the answer as a label or as the choice text."""
        try:
            choices = tuple(str(c) for c in data["choices"])
            answer = data.get("answer")
            if answer is not None and answer not in [choice_label(i) for i in range(len(choices))]:
                answer = choice_label(choices.index(answer)) if answer in choices else answer
            content = data.get("content")
            return cls(
                sample_id=str(data["sample_id"]),
                audio=str(data["audio"]),
                question=str(data["question"]),
                choices=choices,
                duration_s=float(data["duration_s"]),
                answer=answer,
                content=ContentType(content) if content else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad sample spec: {exc}") from exc


class LogicalClock:
    """Monotone tick counter standing in for wall time in offline runs."""

    def __init__(self) -> None:
        self._t = 0.0
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            self._t += 1.0
            return self._t


def wall_clock() -> Callable[[], float]:
    start = time.monotonic()
    return lambda: time.monotonic() - start


@dataclass
class Runtime:
    config: RunConfig
    catalog: ToolCatalog
    chat: Mapping[str, ChatClient]
    tools: ToolClient
    replay: ReplaySource | None = None

    @classmethod
    def from_config(cls, config: RunConfig, replay: ReplaySource | None = None) -> Runtime:
        chat = {role: chat_client_for(config.profiles[role], replay) for role in ("source_a", "source_b", "reasoner")}
        return cls(config, config.catalog(), chat, tool_client_for(config.profiles["tools"], replay), replay)

    def clock(self) -> Callable[[], float]:
        return LogicalClock() if self.config.offline else wall_clock()


@dataclass
class SampleOutcome:
    record: PipelineRecord
    output: dict[str, Any]
    argument: Argument | None = None
    notes: list[str] = field(default_factory=list)


def final_output(record: PipelineRecord) -> dict[str, Any]:
    d = record.decision
    return {
        "sample_id": record.sample_id,
        "chosen": d.chosen if d else None,
        "chosen_text": d.chosen_text if d else None,
        "confidence": round(d.confidence, 4) if d else None,
        "reasoning": [s.to_dict() for s in record.document.sections] if record.document else [],
        "completeness": record.completeness.to_dict() if record.completeness else None,
    }


def _intake(
    spec: SampleSpec, sessions: Mapping[str, ChatSession], sources: Sequence[str], notes: list[str]
) -> list[SourceReport]:
    responses: dict[str, list[ParsedResponse]] = {s: [] for s in sources}
    for q in plan_queries(spec.duration_s, sources, spec.question, spec.choices):
        try:
            reply = sessions[q.source].ask([Message("user", q.prompt, audio=spec.audio)])
        except BackendError as exc:
            notes.append(f"intake {q.key} failed: {exc}")
            continue
        responses[q.source].append(parse_response(reply, q.source, q.scope))
    reports = []
    for source in sources:
        try:
            reports.append(synthesize_source(responses[source], source))
        except PartialIntakeError as exc:
            notes.append(str(exc))
            reports.append(exc.partial)
    return reports


def run_sample(spec: SampleSpec, runtime: Runtime) -> SampleOutcome:
    cfg = runtime.config
    clock = runtime.clock()
    sink: list[ChatExchange] = []
    notes: list[str] = []
    timings: dict[str, tuple[float, float]] = {}
    src_a, src_b = cfg.sources

    def session(role: str) -> ChatSession:
        return ChatSession(runtime.chat[role], cfg.profiles[role].endpoint_id, clock, sink, cfg.temperature, cfg.seed)

    sessions = {src_a: session("source_a"), src_b: session("source_b")}
    reasoner = session("reasoner")

    t0 = clock()
    reports = _intake(spec, sessions, (src_a, src_b), notes)
    timings["intake"] = (t0, clock())

    content = spec.content or cfg.content_override or classify_content(reports)

    t0 = clock()
    unified = corroborate_sources(reports[0], reports[1], reasoner, spec.question, spec.choices, cfg.scoring)
    if unified.used_fallback:
        notes.append("unified analysis used lexical fallback")
    timings["unified"] = (t0, clock())

    t0 = clock()
    state = LoopState.from_analysis(
        spec.sample_id, spec.audio, spec.duration_s, spec.question, spec.choices, content, unified
    )
    executor = ToolExecutor(runtime.tools, runtime.catalog, cfg.scoring, cfg.loop.workers)
    run_step1(state, reasoner, executor, runtime.catalog, cfg.loop, cfg.scoring, clock)
    run_step2(state, None, executor, runtime.catalog, cfg.loop, cfg.scoring, clock)
    timings["verification"] = (t0, clock())

    gathered = PipelineRecord(
        sample_id=spec.sample_id,
        question=spec.question,
        choices=spec.choices,
        audio=spec.audio,
        duration_s=spec.duration_s,
        correct=spec.answer,
        content=content,
        source_reports=tuple(reports),
        unified=unified,
        rounds=tuple(state.rounds),
        step1_stop=state.step1_stop.value if state.step1_stop else None,
        step2_stop=state.step2_stop.value if state.step2_stop else None,
        contradictions=tuple(state.contradictions),
        hypotheses=tuple(state.hypotheses),
        unverifiable=tuple(unverifiable(state.contradictions, state.hypotheses)),
        evidence=tuple(state.evidence),
        disagreements=tuple(state.disagreements),
    )
    # Argue from the serialized form so a later replay sees byte-identical input.
    restored = PipelineRecord.from_dict(json.loads(dumps_record(gathered)))

    t0 = clock()
    argument = argue(restored.bundle(), reasoner, cfg.scoring)
    timings["argumentation"] = (t0, clock())
    if argument.document.flags:
        notes.append("reasoning flags: " + ", ".join(argument.document.flags))

    record = PipelineRecord.from_dict(
        {
            **restored.to_dict(),
            "decision": argument.decision.to_dict(),
            "document": argument.document.to_dict(),
            "completeness": argument.completeness.to_dict(),
            "repairs": argument.repairs,
            "exchanges": [e.to_dict() for e in sink],
            "timings": {k: list(v) for k, v in timings.items()},
            "notes": notes,
        }
    )
    check_invariants(record, cfg)
    return SampleOutcome(record, final_output(record), argument, notes)


def check_invariants(record: PipelineRecord, config: RunConfig) -> None:
    """Raise PipelineInvariantError on any breach of the pipeline's hard guarantees."""
    problems = []
    for item in record.evidence:
        cap = tier_policy(item.tier, config.scoring).cap
        if item.confidence > cap + 1e-9:
            problems.append(f"{item.id}: confidence {item.confidence} above {item.tier.value} cap {cap}")
        if item.origin.is_lalm and item.confidence > config.scoring.lalm_hard_cap + 1e-9:
            problems.append(f"{item.id}: LALM confidence above hard cap")
    keys = [r.invocation_key for rnd in record.rounds for r in rnd.invoked]
    if len(keys) != len(set(keys)):
        problems.append("a tool invocation was repeated")
    step1 = [r for r in record.rounds if r.step.value == "step1"]
    step2 = [r for r in record.rounds if r.step.value == "step2"]
    if len(step1) > config.loop.step1_rounds or len(step2) > config.loop.step2_rounds:
        problems.append(f"round limits exceeded ({len(step1)} step-1, {len(step2)} step-2)")
    for rnd in step2:
        if any(r.time_range is None for r in rnd.invoked):
            problems.append("step-2 invocation without a time range")
    if record.decision is None or record.decision.chosen not in [choice_label(i) for i in range(len(record.choices))]:
        problems.append("decision missing or outside the choices")
    if record.document is None or tuple(s.title for s in record.document.sections) != SECTION_ORDER:
        problems.append("reasoning document does not have the seven sections in order")
    if problems:
        raise PipelineInvariantError(f"{record.sample_id}: " + "; ".join(problems))


def run_batch(
    specs: Iterable[SampleSpec],
    runtime: Runtime,
    workers: int = 1,
    on_error: Callable[[SampleSpec, Exception], None] | None = None,
) -> list[SampleOutcome | None]:
    """Run samples on a worker pool; output order follows input order.

    Invariant breaches propagate; other per-sample failures are reported via
    ``on_error`` and leave a None in that slot.
    """
    specs = list(specs)

    def one(spec: SampleSpec) -> SampleOutcome | None:
        try:
            return run_sample(spec, runtime)
        except PipelineInvariantError:
            raise
        except Exception as exc:  # noqa: BLE001 - batch tolerates per-sample failures
            if on_error is None:
                raise
            on_error(spec, exc)
            return None

    if workers <= 1 or len(specs) <= 1:
        return [one(s) for s in specs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, specs))
