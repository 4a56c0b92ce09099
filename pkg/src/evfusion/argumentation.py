"""Answer selection over redacted evidence, seven-section reasoning, completeness repair."""

from __future__ import annotations

import logging
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any

from .backends import ChatSession, Message
from .contradiction import Contradiction
from .errors import BackendError, InvalidInputError, UnredactedEvidenceError
from .evidence import (
    DEFAULT_SCORING,
    ContentType,
    EvidenceItem,
    Observation,
    RiskLevel,
    ScoringConfig,
    evidence_weight,
)
from .intake import labelled
from .text import extract_json, overlap_coefficient, supported_choices, token_set
from .tools import ToolResult
from .unified import Disagreement

log = logging.getLogger(__name__)

ADDRESSED_THRESHOLD = 0.5
MAX_FORMAT_RETRIES = 2
MAX_REPAIRS = 2
# Hallucination suspects and over-segmented counts do not vote.
NON_VOTING_RISKS = frozenset({RiskLevel.HIGH, RiskLevel.SEGMENTATION_ARTIFACT})


class Section(str, Enum):
    WHAT_IS_HEARD = "What Is Heard"
    EVIDENCE_SYNTHESIS = "Evidence Synthesis"
    CONFLICT_RESOLUTION = "Conflict Resolution"
    RELIABILITY_ASSESSMENT = "Reliability Assessment"
    TOOL_CROSS_REFERENCES = "Tool Cross-References"
    PER_CHOICE_EVALUATION = "Per-Choice Evaluation"
    CONCLUSION = "Conclusion"


SECTION_ORDER: tuple[Section, ...] = tuple(Section)


def _norm_title(text: str) -> str:
    return re.sub(r"[^a-z]", "", text.lower())


_TITLE_LOOKUP = {_norm_title(s.value): s for s in Section}
_HEADING_RE = re.compile(
    r"^\s*(?:#{1,6}\s*)?(?:\*\*)?\s*(?:\d+[.)]\s*)?(?P<title>[A-Za-z][A-Za-z \-]+?)\s*(?:\*\*)?\s*:?\s*(?:\*\*)?\s*$"
)


@dataclass(frozen=True, slots=True)
class EvidenceBundle:
    """Everything the argumentation stage sees for one sample."""

    sample_id: str
    question: str
    choices: tuple[str, ...]
    content: ContentType
    sources: tuple[str, ...]
    observations: tuple[Observation, ...]
    items: tuple[EvidenceItem, ...]
    tool_results: tuple[ToolResult, ...] = ()
    contradictions: tuple[Contradiction, ...] = ()
    disagreements: tuple[Disagreement, ...] = ()
    unverifiable: tuple[str, ...] = ()
    redacted: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "question": self.question,
            "choices": list(self.choices),
            "content": self.content.value,
            "sources": list(self.sources),
            "observations": [o.to_dict() for o in self.observations],
            "items": [i.to_dict() for i in self.items],
            "tool_results": [r.to_dict() for r in self.tool_results],
            "contradictions": [c.to_dict() for c in self.contradictions],
            "disagreements": [d.to_dict() for d in self.disagreements],
            "unverifiable": list(self.unverifiable),
            "redacted": self.redacted,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvidenceBundle:
        return cls(
            sample_id=data["sample_id"],
            question=data["question"],
            choices=tuple(data["choices"]),
            content=ContentType(data.get("content", "mixed")),
            sources=tuple(data.get("sources") or ()),
            observations=tuple(Observation.from_dict(o) for o in data.get("observations") or ()),
            items=tuple(EvidenceItem.from_dict(i) for i in data.get("items") or ()),
            tool_results=tuple(ToolResult.from_dict(r) for r in data.get("tool_results") or ()),
            contradictions=tuple(Contradiction.from_dict(c) for c in data.get("contradictions") or ()),
            disagreements=tuple(Disagreement.from_dict(d) for d in data.get("disagreements") or ()),
            unverifiable=tuple(data.get("unverifiable") or ()),
            redacted=bool(data.get("redacted", False)),
        )

    def keep_sources(self, keep: Sequence[str]) -> EvidenceBundle:
        """Drop every LALM observation and item from sources outside ``keep``.

        Tool evidence stays; conflicts that lose a member are dropped.
        """
        keep_set = set(keep)
        items = tuple(i for i in self.items if not i.origin.is_lalm or i.origin.name in keep_set)
        ids = {i.id for i in items}
        return replace(
            self,
            sources=tuple(s for s in self.sources if s in keep_set),
            observations=tuple(o for o in self.observations if o.source in keep_set),
            items=items,
            contradictions=tuple(c for c in self.contradictions if set(c.item_ids) <= ids),
            disagreements=tuple(d for d in self.disagreements if set(d.item_ids) <= ids),
        )

    @property
    def open_conflicts(self) -> list[tuple[str, tuple[str, ...], str]]:
        out = [(c.id, c.item_ids, c.description) for c in self.contradictions]
        out += [(d.id, d.item_ids, d.topic) for d in self.disagreements]
        return out


def redact(bundle: EvidenceBundle) -> EvidenceBundle:
    """Strip every tentative prediction; source labels stay."""
    return replace(
        bundle,
        observations=tuple(replace(o, tentative_prediction=None) for o in bundle.observations),
        redacted=True,
    )


def _check_redacted(bundle: EvidenceBundle) -> None:
    if not bundle.redacted or any(o.tentative_prediction is not None for o in bundle.observations):
        raise UnredactedEvidenceError(f"{bundle.sample_id}: evidence must be redacted before selection")


# --- per-choice support --------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ChoiceSupport:
    label: str
    text: str
    weight: float
    item_ids: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "text": self.text,
            "weight": round(self.weight, 4),
            "item_ids": list(self.item_ids),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ChoiceSupport:
        return cls(data["label"], data["text"], float(data["weight"]), tuple(data.get("item_ids") or ()))


def choice_support(bundle: EvidenceBundle, config: ScoringConfig = DEFAULT_SCORING) -> list[ChoiceSupport]:
    weights = [0.0] * len(bundle.choices)
    ids: list[list[str]] = [[] for _ in bundle.choices]
    for item in bundle.items:
        if item.risk in NON_VOTING_RISKS:
            continue
        w = evidence_weight(item, config)
        for idx in sorted(supported_choices(item.claim, list(bundle.choices))):
            weights[idx] += w
            ids[idx].append(item.id)
    return [
        ChoiceSupport(label, text, weights[i], tuple(ids[i]))
        for i, (label, text) in enumerate(labelled(bundle.choices))
    ]


@dataclass(frozen=True, slots=True)
class AnswerDecision:
    chosen: str
    confidence: float
    per_choice: tuple[ChoiceSupport, ...]
    method: str = "backend"

    def __post_init__(self) -> None:
        labels = [c.label for c in self.per_choice]
        if self.chosen not in labels:
            raise InvalidInputError(f"chosen label {self.chosen!r} not among {labels}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"decision confidence {self.confidence} outside [0, 1]")

    @property
    def chosen_text(self) -> str:
        return next(c.text for c in self.per_choice if c.label == self.chosen)

    def to_dict(self) -> dict[str, Any]:
        return {
            "chosen": self.chosen,
            "confidence": round(self.confidence, 4),
            "per_choice": [c.to_dict() for c in self.per_choice],
            "method": self.method,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AnswerDecision:
        return cls(
            data["chosen"],
            float(data["confidence"]),
            tuple(ChoiceSupport.from_dict(c) for c in data["per_choice"]),
            data.get("method", "backend"),
        )


def _weight_share(support: Sequence[ChoiceSupport], label: str) -> float:
    total = sum(c.weight for c in support)
    if total <= 0:
        return 1.0 / len(support)
    return next(c.weight for c in support if c.label == label) / total


def _argmax(support: Sequence[ChoiceSupport]) -> str:
    best = max(c.weight for c in support)
    return next(c.label for c in support if c.weight == best)


# --- prompts -------------------------------------------------------------------


def _f2(x: float) -> str:
    return f"{round(x, 4):.2f}"


def evidence_lines(bundle: EvidenceBundle, config: ScoringConfig = DEFAULT_SCORING) -> list[str]:
    lines = []
    for item in bundle.items:
        rng = f", {item.time_range[0]:.1f}-{item.time_range[1]:.1f}s" if item.time_range else ""
        lines.append(
            f"- [{item.id}] source={item.origin.name} tier={item.tier.value} status={item.status.value} "
            f"risk={item.risk.value} confidence={_f2(item.confidence)} relevance={_f2(item.relevance)} "
            f"weight={_f2(evidence_weight(item, config))}{rng}: {item.claim}"
        )
    return lines


def conflict_lines(bundle: EvidenceBundle) -> list[str]:
    lines = []
    for c in bundle.contradictions:
        state = f"resolved ({c.resolution})" if c.resolved else "open"
        if c.id in bundle.unverifiable:
            state = "open, no tool could test it"
        flags = f" pitfalls={','.join(sorted(p.value for p in c.pitfall_flags))}" if c.pitfall_flags else ""
        lines.append(f"- {c.id} [{c.kind.value}] {', '.join(c.item_ids)}: {c.description}; {state}{flags}")
    for d in bundle.disagreements:
        state = "resolved by tools" if d.resolved else "open"
        lines.append(f"- {d.id} [source disagreement] {', '.join(d.item_ids)}: {d.topic}; {state}")
    return lines


def build_selection_messages(
    question: str,
    choices: Sequence[str],
    bundle: EvidenceBundle,
    config: ScoringConfig = DEFAULT_SCORING,
) -> list[Message]:
    """The exact answer-selection payload; refuses unredacted bundles."""
    _check_redacted(bundle)
    support = choice_support(bundle, config)
    lines = [
        "TASK: answer-selection",
        f"Question: {question}",
        *(f"({label}) {text}" for label, text in labelled(choices)),
        f"Content type: {bundle.content.value}",
        "",
        "Evidence (with source labels):",
        *(evidence_lines(bundle, config) or ["- none"]),
    ]
    conflicts = conflict_lines(bundle)
    if conflicts:
        lines += ["", "Conflicts:", *conflicts]
    lines += [
        "",
        "Aggregate support per choice (sum of tier weight x confidence x relevance):",
        *(f"- ({c.label}) {_f2(c.weight)}" for c in support),
        "",
        "Pick the best-supported answer. Reply with one line: ANSWER: <label>",
    ]
    return [
        Message("system", "You answer audio questions from weighted evidence."),
        Message("user", "\n".join(lines)),
    ]


_ANSWER_RE = re.compile(r"ANSWER\s*[:=]?\s*\(?([A-Za-z])\)?", re.IGNORECASE)


def parse_label(reply: str, choices: Sequence[str]) -> str | None:
    """The label a reply names, or the raw token when it is not a valid label."""
    text = reply.strip()
    try:
        data = extract_json(text)
        if isinstance(data, Mapping) and "answer" in data:
            text = f"ANSWER: {data['answer']}"
    except ValueError:
        pass
    m = _ANSWER_RE.search(text)
    if m:
        return m.group(1).upper()
    m = re.fullmatch(r"\(?([A-Za-z])\)?[.)]?", text)
    if m:
        return m.group(1).upper()
    lowered = text.lower()
    for label, choice in labelled(choices):
        if choice.lower() == lowered:
            return label
    return None


def select_answer(
    question: str,
    choices: Sequence[str],
    bundle: EvidenceBundle,
    session: ChatSession | None,
    config: ScoringConfig = DEFAULT_SCORING,
) -> AnswerDecision:
    """Backend picks a label; invalid twice, or backend down, falls back to weight argmax."""
    if len(choices) < 2:
        raise InvalidInputError("at least two choices are required")
    messages = build_selection_messages(question, choices, bundle, config)
    support = choice_support(bundle, config)
    valid = [c.label for c in support]

    def decide(label: str, method: str) -> AnswerDecision:
        return AnswerDecision(label, _weight_share(support, label), tuple(support), method)

    if session is None:
        return decide(_argmax(support), "fallback")
    try:
        reply = session.ask(messages)
        label = parse_label(reply, choices)
        if label in valid:
            return decide(label, "backend")
        correction = [
            *messages,
            Message("assistant", reply),
            Message(
                "user",
                f"{label or reply.strip()[:20]!r} is not one of {', '.join(valid)}. "
                "Reply with one line: ANSWER: <label>",
            ),
        ]
        label = parse_label(session.ask(correction), choices)
        if label in valid:
            return decide(label, "retry")
    except BackendError as exc:
        log.warning("%s: answer selection failed, using weight argmax: %s", bundle.sample_id, exc)
    return decide(_argmax(support), "fallback")


# --- reasoning -----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class DocSection:
    title: Section
    body: str
    stub: bool = False

    def to_dict(self) -> dict[str, Any]:
        out = {"title": self.title.value, "body": self.body}
        if self.stub:
            out["stub"] = True
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> DocSection:
        return cls(Section(data["title"]), data["body"], bool(data.get("stub", False)))


@dataclass(frozen=True, slots=True)
class ReasoningDocument:
    sections: tuple[DocSection, ...]
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        titles = tuple(s.title for s in self.sections)
        if titles != SECTION_ORDER:
            raise InvalidInputError(f"sections must be exactly {[s.value for s in SECTION_ORDER]}")
        if any(not s.body.strip() for s in self.sections):
            raise InvalidInputError("section bodies must be non-empty")

    def section(self, title: Section) -> DocSection:
        return next(s for s in self.sections if s.title is title)

    @property
    def text(self) -> str:
        return "\n\n".join(f"## {s.title.value}\n{s.body}" for s in self.sections)

    def to_dict(self) -> dict[str, Any]:
        return {"sections": [s.to_dict() for s in self.sections], "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ReasoningDocument:
        return cls(tuple(DocSection.from_dict(s) for s in data["sections"]), tuple(data.get("flags") or ()))


def parse_sections(text: str) -> dict[Section, str]:
    """Section bodies keyed by title; headings may use #, bold, numbering or a colon."""
    found: dict[Section, list[str]] = {}
    current: Section | None = None
    for line in text.splitlines():
        m = _HEADING_RE.match(line)
        title = _TITLE_LOOKUP.get(_norm_title(m.group("title"))) if m else None
        if title is not None:
            current = title
            found.setdefault(current, [])
            continue
        if current is not None:
            found[current].append(line)
    return {k: "\n".join(v).strip() for k, v in found.items() if "\n".join(v).strip()}


def reasoning_messages(
    bundle: EvidenceBundle,
    decision: AnswerDecision,
    config: ScoringConfig = DEFAULT_SCORING,
    feedback: str | None = None,
) -> list[Message]:
    lines = [
        "TASK: reasoning",
        f"Question: {bundle.question}",
        *(f"({label}) {text}" for label, text in labelled(bundle.choices)),
        f"Selected answer: ({decision.chosen}) {decision.chosen_text}",
        f"Decision confidence: {_f2(decision.confidence)}",
        "",
        "Evidence (with source labels):",
        *(evidence_lines(bundle, config) or ["- none"]),
    ]
    conflicts = conflict_lines(bundle)
    if conflicts:
        lines += ["", "Conflicts:", *conflicts]
    tools = sorted({r.tool for r in bundle.tool_results if r.ok})
    if tools:
        lines += ["", "Tools run: " + ", ".join(tools)]
    lines += [
        "",
        "Explain the selected answer using exactly these sections, each as a '## <title>' heading: "
        + "; ".join(s.value for s in SECTION_ORDER)
        + ". Address every evidence item, every tool and every conflict by id or name.",
    ]
    if feedback:
        lines += ["", feedback]
    return [
        Message("system", "You write structured explanations of audio answers."),
        Message("user", "\n".join(lines)),
    ]


def stub_body(section: Section, bundle: EvidenceBundle, decision: AnswerDecision) -> str:
    """Deterministic filler built from the bundle when the backend never produced a section."""
    lalm = [i for i in bundle.items if i.origin.is_lalm]
    tools = [i for i in bundle.items if not i.origin.is_lalm]
    if section is Section.WHAT_IS_HEARD:
        return "; ".join(f"{i.id}: {i.claim}" for i in lalm) or "No source observations were recorded."
    if section is Section.EVIDENCE_SYNTHESIS:
        return "; ".join(f"{i.id} ({i.status.value}, {_f2(i.confidence)})" for i in bundle.items) or (
            "No evidence was available."
        )
    if section is Section.CONFLICT_RESOLUTION:
        lines = conflict_lines(bundle)
        return "\n".join(lines) if lines else "No conflicts were detected."
    if section is Section.RELIABILITY_ASSESSMENT:
        return "; ".join(f"{i.id}: {i.tier.value}, risk {i.risk.value}" for i in bundle.items) or (
            "No evidence to assess."
        )
    if section is Section.TOOL_CROSS_REFERENCES:
        names = sorted({r.tool for r in bundle.tool_results if r.ok})
        return "; ".join(f"{i.origin.name}: {i.claim}" for i in tools) or (
            ", ".join(names) if names else "No tools were run."
        )
    if section is Section.PER_CHOICE_EVALUATION:
        return "\n".join(f"({c.label}) {c.text}: support {_f2(c.weight)}" for c in decision.per_choice)
    return f"Answer ({decision.chosen}) {decision.chosen_text} with confidence {_f2(decision.confidence)}."


def generate_reasoning(
    bundle: EvidenceBundle,
    decision: AnswerDecision,
    session: ChatSession | None,
    config: ScoringConfig = DEFAULT_SCORING,
    feedback: str | None = None,
    retries: int = MAX_FORMAT_RETRIES,
) -> ReasoningDocument:
    flags: list[str] = []
    if not bundle.items:
        flags.append("empty_evidence")
    sections: dict[Section, str] = {}
    if session is not None:
        messages = reasoning_messages(bundle, decision, config, feedback)
        for attempt in range(retries + 1):
            try:
                reply = session.ask(messages)
            except BackendError as exc:
                log.warning("%s: reasoning call failed: %s", bundle.sample_id, exc)
                flags.append("backend_failure")
                break
            for title, body in parse_sections(reply).items():
                sections.setdefault(title, body)
            missing = [s for s in SECTION_ORDER if s not in sections]
            if not missing:
                break
            if attempt < retries:
                messages = [
                    *messages,
                    Message("assistant", reply),
                    Message(
                        "user",
                        "Missing sections: "
                        + ", ".join(s.value for s in missing)
                        + ". Rewrite the full document with every section.",
                    ),
                ]
    out = []
    for title in SECTION_ORDER:
        if title in sections:
            out.append(DocSection(title, sections[title]))
        else:
            out.append(DocSection(title, stub_body(title, bundle, decision), stub=True))
    if any(s.stub for s in out):
        stubbed = [s.title.value for s in out if s.stub]
        log.warning("%s: stub sections %s", bundle.sample_id, ", ".join(stubbed))
        flags.append("stub_sections")
    return ReasoningDocument(tuple(out), tuple(flags))


# --- completeness --------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class CompletenessReport:
    unreferenced_observations: tuple[str, ...] = ()
    unreferenced_tools: tuple[str, ...] = ()
    unaddressed_conflicts: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return not (self.unreferenced_observations or self.unreferenced_tools or self.unaddressed_conflicts)

    def feedback(self) -> str:
        parts = []
        if self.unreferenced_observations:
            parts.append("observations " + ", ".join(self.unreferenced_observations))
        if self.unreferenced_tools:
            parts.append("tools " + ", ".join(self.unreferenced_tools))
        if self.unaddressed_conflicts:
            parts.append("conflicts " + ", ".join(self.unaddressed_conflicts))
        return "The previous document did not address: " + "; ".join(parts) + "."

    def to_dict(self) -> dict[str, Any]:
        return {
            "unreferenced_observations": list(self.unreferenced_observations),
            "unreferenced_tools": list(self.unreferenced_tools),
            "unaddressed_conflicts": list(self.unaddressed_conflicts),
            "pass": self.passed,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CompletenessReport:
        return cls(
            tuple(data.get("unreferenced_observations") or ()),
            tuple(data.get("unreferenced_tools") or ()),
            tuple(data.get("unaddressed_conflicts") or ()),
        )


def _addressed(claim: str, doc_tokens: frozenset[str]) -> bool:
    toks = token_set(claim)
    return bool(toks) and overlap_coefficient(toks, doc_tokens) >= ADDRESSED_THRESHOLD


def _squash(text: str) -> str:
    return " ".join(text.lower().split())


def completeness_check(doc: ReasoningDocument, bundle: EvidenceBundle) -> CompletenessReport:
    """Every observation, tool and conflict must show up somewhere in the document.

    An observation counts when its id appears or at least half its content
    words do; a tool when its name appears; a conflict when its id appears or
    the Conflict Resolution section addresses all of its items.
    """
    text = doc.text
    lowered = _squash(text)
    doc_tokens = token_set(text)
    by_id = {i.id: i for i in bundle.items}

    missing_obs = [
        i.id for i in bundle.items if i.origin.is_lalm and i.id not in text and not _addressed(i.claim, doc_tokens)
    ]
    tool_names = sorted({r.tool for r in bundle.tool_results if r.ok})
    missing_tools = [t for t in tool_names if _squash(t) not in lowered]

    section_tokens = token_set(doc.section(Section.CONFLICT_RESOLUTION).body)
    section_text = doc.section(Section.CONFLICT_RESOLUTION).body
    missing_conflicts = []
    for cid, item_ids, _ in bundle.open_conflicts:
        if re.search(rf"\b{re.escape(cid)}\b", text):
            continue
        members = [by_id[i] for i in item_ids if i in by_id]
        if members and all(m.id in section_text or _addressed(m.claim, section_tokens) for m in members):
            continue
        missing_conflicts.append(cid)
    return CompletenessReport(tuple(missing_obs), tuple(missing_tools), tuple(missing_conflicts))


@dataclass(frozen=True, slots=True)
class Argument:
    decision: AnswerDecision
    document: ReasoningDocument
    completeness: CompletenessReport
    repairs: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "decision": self.decision.to_dict(),
            "document": self.document.to_dict(),
            "completeness": self.completeness.to_dict(),
            "repairs": self.repairs,
        }


def argue(
    bundle: EvidenceBundle,
    session: ChatSession | None,
    config: ScoringConfig = DEFAULT_SCORING,
    max_repairs: int = MAX_REPAIRS,
) -> Argument:
    """Redact, select, then elaborate; regenerate the whole document while checks fail."""
    redacted = redact(bundle)
    decision = select_answer(bundle.question, bundle.choices, redacted, session, config)
    doc = generate_reasoning(redacted, decision, session, config)
    report = completeness_check(doc, redacted)
    repairs = 0
    while not report.passed and repairs < max_repairs and session is not None:
        repairs += 1
        doc = generate_reasoning(redacted, decision, session, config, feedback=report.feedback())
        report = completeness_check(doc, redacted)
    return Argument(decision, doc, report, repairs)


def render(argument: Argument, bundle: EvidenceBundle) -> str:
    """Human-readable rendering for the terminal."""
    d = argument.decision
    lines = [
        f"Sample {bundle.sample_id}: {bundle.question}",
        *(f"  ({c.label}) {c.text}  [support {_f2(c.weight)}]" for c in d.per_choice),
        f"Answer: ({d.chosen}) {d.chosen_text}  confidence {_f2(d.confidence)}  via {d.method}",
        "",
        argument.document.text,
        "",
        "Completeness: " + ("pass" if argument.completeness.passed else argument.completeness.feedback()),
    ]
    return "\n".join(lines)
