"""Three-stage contradiction detection and verification-hypothesis generation."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any

from .backends import ChatSession, Message
from .errors import BackendError
from .evidence import (
    DEFAULT_SCORING,
    ContentType,
    EvidenceItem,
    EvidenceStatus,
    ReliabilityTier,
    RiskLevel,
    ScoringConfig,
    evidence_weight,
)
from .text import claims_conflict, extract_json, jaccard, negated_terms, quantities, token_set
from .tools import Step, ToolCatalog, ToolRequest, ToolResult, tools_for_step

log = logging.getLogger(__name__)

KEYWORD_OVERLAP_THRESHOLD = 0.30
LALM_FLOOR = 0.05
HYPOTHESIS_PAD_S = 1.0
WIDEN_PAD_S = 3.0

SPEAKER_CLUSTER_TOOLS = frozenset({"speaker count"})
DIARIZATION_TOOLS = frozenset({"diarization + transcription"})
TRANSCRIPT_TOOLS = frozenset({"transcription", "diarization + transcription"})

# Stemmed topic words that point at a segment tool able to settle a conflict.
TOPIC_TOOLS: tuple[tuple[frozenset[str], str], ...] = (
    (
        frozenset(
            {
                "speaker",
                "voice",
                "talk",
                "speak",
                "person",
                "people",
                "conversation",
                "dialogue",
                "male",
                "female",
                "man",
                "woman",
            }
        ),
        "diarization + transcription",
    ),
    (
        frozenset(
            {"word", "say", "said", "transcript", "speech", "sentence", "language", "lyric", "phrase", "mention"}
        ),
        "transcription",
    ),
    (frozenset({"loud", "energy", "volume", "quiet", "dynamic", "silence", "fade"}), "energy dynamics"),
    (
        frozenset(
            {
                "event",
                "noise",
                "door",
                "bird",
                "dog",
                "car",
                "alarm",
                "crowd",
                "applause",
                "laugh",
                "siren",
                "footstep",
                "knock",
                "slam",
            }
        ),
        "event sequence",
    ),
    (
        frozenset(
            {
                "instrument",
                "piano",
                "guitar",
                "drum",
                "violin",
                "bass",
                "string",
                "synth",
                "trumpet",
                "flute",
                "orchestra",
            }
        ),
        "instrument detection",
    ),
    (frozenset({"beat", "tempo", "rhythm", "bpm", "onset", "meter"}), "beat & onset detection"),
    (frozenset({"chord", "harmony", "key", "major", "minor", "harmonic", "tonal"}), "harmonic analysis"),
)
GENERIC_SEGMENT_TOOL = "temporal segments"


class ContradictionKind(str, Enum):
    INTER_TOOL = "inter_tool"
    INTRA_TOOL = "intra_tool"
    HIERARCHY_VIOLATION = "hierarchy_violation"
    LALM_VS_TOOL = "lalm_vs_tool"


class Pitfall(str, Enum):
    ABSENCE_AS_PROOF = "absence_as_proof"
    SINGLE_SOURCE_DISMISSAL = "single_source_dismissal"
    DIARIZATION_OVERSEGMENTATION = "diarization_oversegmentation"
    NON_OVERLAPPING_TRANSCRIPTS = "non_overlapping_transcripts"


@dataclass(frozen=True, slots=True)
class Contradiction:
    id: str
    kind: ContradictionKind
    item_ids: tuple[str, ...]
    description: str
    resolved: bool = False
    pitfall_flags: frozenset[Pitfall] = frozenset()
    resolution: str | None = None
    winner: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out = {
            "id": self.id,
            "kind": self.kind.value,
            "item_ids": list(self.item_ids),
            "description": self.description,
            "resolved": self.resolved,
            "pitfall_flags": sorted(p.value for p in self.pitfall_flags),
        }
        if self.resolution is not None:
            out["resolution"] = self.resolution
        if self.winner is not None:
            out["winner"] = self.winner
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Contradiction:
        return cls(
            id=data["id"],
            kind=ContradictionKind(data["kind"]),
            item_ids=tuple(data["item_ids"]),
            description=data.get("description", ""),
            resolved=bool(data.get("resolved", False)),
            pitfall_flags=frozenset(Pitfall(p) for p in data.get("pitfall_flags") or ()),
            resolution=data.get("resolution"),
            winner=data.get("winner"),
        )


@dataclass(frozen=True, slots=True)
class RiskAssessment:
    item_id: str
    risk: RiskLevel
    rationale: str


@dataclass(frozen=True, slots=True)
class VerificationHypothesis:
    id: str
    statement: str
    tool_calls: tuple[ToolRequest, ...]
    contradiction_id: str

    def __post_init__(self) -> None:
        if not self.tool_calls:
            raise ValueError(f"{self.id}: a hypothesis needs at least one tool call")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "statement": self.statement,
            "tool_calls": [t.to_dict() for t in self.tool_calls],
            "contradiction_id": self.contradiction_id,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> VerificationHypothesis:
        return cls(
            data["id"],
            data.get("statement", ""),
            tuple(ToolRequest.from_dict(t) for t in data["tool_calls"]),
            data["contradiction_id"],
        )


# --- stage 1 -------------------------------------------------------------------


def _tier_of(result: ToolResult, catalog: ToolCatalog) -> ReliabilityTier | None:
    try:
        return catalog.get(result.tool).tier
    except KeyError:
        return None


def stage1_keyword_reclassify(
    items: Sequence[EvidenceItem],
    tool_results: Sequence[ToolResult],
    catalog: ToolCatalog,
    config: ScoringConfig = DEFAULT_SCORING,
) -> list[EvidenceItem]:
    """Nudge LALM confidences by keyword agreement with reproducible tools.

    Each LALM item moves at most once per run: −adjust if any reproducible
    tool summary explicitly conflicts with it, otherwise +adjust if one
    overlaps it by Jaccard ≥ 0.30.  Results are clamped to [0.05, 0.70].
    """
    reproducible = [r for r in tool_results if r.ok and (_tier_of(r, catalog) or ReliabilityTier.LALM).reproducible]
    out = []
    for item in items:
        if not item.origin.is_lalm:
            out.append(item)
            continue
        delta = 0.0
        note = None
        if not item.keyword_adjusted:
            toks = token_set(item.claim)
            for r in reproducible:
                reason = claims_conflict(item.claim, r.summary)
                if reason:
                    delta, note = -config.keyword_adjust, f"keyword-conflict:{r.tool}"
                    break
                if delta == 0.0 and jaccard(toks, token_set(r.summary)) >= KEYWORD_OVERLAP_THRESHOLD:
                    delta, note = config.keyword_adjust, f"keyword-overlap:{r.tool}"
        conf = min(config.lalm_hard_cap, max(LALM_FLOOR, item.confidence + delta))
        if delta:
            out.append(replace(item, confidence=conf, keyword_adjusted=True, flags=item.flags + (note,)))
        else:
            out.append(replace(item, confidence=conf))
    return out


# --- stage 2 -------------------------------------------------------------------


def speaker_guard(cluster_count: int | None, diarization_count: int | None) -> bool:
    """True when a clustering speaker count is at least three times diarization's."""
    if cluster_count is None or diarization_count is None or diarization_count < 1:
        return False
    return cluster_count >= 3 * diarization_count


def speaker_estimate(result: ToolResult) -> int | None:
    value = result.output.get("num_speakers")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return int(value)
    return quantities(result.summary).get("speaker")


def _base_risk(item: EvidenceItem) -> tuple[RiskLevel, str]:
    if item.status is EvidenceStatus.DISAGREEMENT:
        return RiskLevel.HIGH, "sources disagree"
    if item.status is EvidenceStatus.CORROBORATED:
        return RiskLevel.LOW, "corroborated"
    if item.tier is ReliabilityTier.LALM:
        return RiskLevel.MEDIUM, "single-source LALM claim"
    if item.tier is ReliabilityTier.HEURISTIC:
        return RiskLevel.MEDIUM, "heuristic measurement without corroboration"
    return RiskLevel.LOW, f"{item.tier.value} measurement"


def stage2_risk_assessment(items: Sequence[EvidenceItem], tool_results: Sequence[ToolResult]) -> list[RiskAssessment]:
    diar = [n for r in tool_results if r.ok and r.tool in DIARIZATION_TOOLS and (n := speaker_estimate(r)) is not None]
    # Prefer whole-audio diarization; fall back to any segment estimate.
    whole = [
        speaker_estimate(r)
        for r in tool_results
        if r.ok and r.tool in DIARIZATION_TOOLS and r.request.time_range is None and speaker_estimate(r) is not None
    ]
    diar_estimate = (whole or diar or [None])[0]
    artifacts: dict[str, str] = {}
    for r in tool_results:
        if not r.ok or r.tool not in SPEAKER_CLUSTER_TOOLS:
            continue
        count = speaker_estimate(r)
        if speaker_guard(count, diar_estimate):
            artifacts[r.request.digest] = f"clustering count {count} is >= 3x the diarization estimate {diar_estimate}"
    out = []
    for item in items:
        if item.result_key is not None and item.result_key in artifacts:
            out.append(RiskAssessment(item.id, RiskLevel.SEGMENTATION_ARTIFACT, artifacts[item.result_key]))
            continue
        risk, why = _base_risk(item)
        out.append(RiskAssessment(item.id, risk, why))
    return out


def apply_risks(items: Sequence[EvidenceItem], risks: Iterable[RiskAssessment]) -> list[EvidenceItem]:
    by_id = {r.item_id: r.risk for r in risks}
    return [replace(i, risk=by_id.get(i.id, i.risk)) for i in items]


# --- stage 3 -------------------------------------------------------------------


def _pair_kind(a: EvidenceItem, b: EvidenceItem) -> ContradictionKind:
    if a.origin.is_lalm or b.origin.is_lalm:
        return ContradictionKind.LALM_VS_TOOL
    if a.origin.name == b.origin.name:
        return ContradictionKind.INTRA_TOOL
    return ContradictionKind.INTER_TOOL


def is_hierarchy_violation(items: Sequence[EvidenceItem], config: ScoringConfig = DEFAULT_SCORING) -> bool:
    """A lower tier currently outweighs a higher one among conflicting items."""
    for a in items:
        for b in items:
            if a.tier < b.tier and evidence_weight(a, config) > evidence_weight(b, config):
                return True
    return False


def _overlap(r1: tuple[float, float], r2: tuple[float, float]) -> bool:
    return r1[0] < r2[1] and r2[0] < r1[1]


def check_pitfalls(c: Contradiction, by_id: Mapping[str, EvidenceItem]) -> Contradiction:
    members = [by_id[i] for i in c.item_ids if i in by_id]
    flags = set(c.pitfall_flags)
    resolved, resolution = c.resolved, c.resolution

    transcripts = [m for m in members if not m.origin.is_lalm and m.origin.name in TRANSCRIPT_TOOLS]
    if len(transcripts) == len(members) >= 2 and all(m.time_range for m in members):
        disjoint = all(
            not _overlap(a.time_range, b.time_range) for i, a in enumerate(members) for b in members[i + 1 :]
        )
        if disjoint:
            flags.add(Pitfall.NON_OVERLAPPING_TRANSCRIPTS)
            resolved, resolution = True, "transcripts cover disjoint time ranges"

    if any(m.risk is RiskLevel.SEGMENTATION_ARTIFACT for m in members):
        flags.add(Pitfall.DIARIZATION_OVERSEGMENTATION)
        resolved = True
        resolution = resolution or "speaker clustering over-segmented; diarization estimate kept"

    affirmed = [token_set(m.claim) - negated_terms(m.claim) for m in members]
    for i, m in enumerate(members):
        absent = negated_terms(m.claim)
        if absent and any(absent & affirmed[j] for j in range(len(members)) if j != i):
            flags.add(Pitfall.ABSENCE_AS_PROOF)

    lalm_single = [m for m in members if m.origin.is_lalm and m.status is not EvidenceStatus.CORROBORATED]
    if lalm_single and not any(m.tier.reproducible for m in members):
        flags.add(Pitfall.SINGLE_SOURCE_DISMISSAL)

    return replace(c, pitfall_flags=frozenset(flags), resolved=resolved, resolution=resolution)


def rule_detect(items: Sequence[EvidenceItem], config: ScoringConfig = DEFAULT_SCORING) -> list[Contradiction]:
    """Pairwise explicit conflicts between items, skipping LALM-vs-LALM pairs."""
    found = []
    for i, a in enumerate(items):
        for b in items[i + 1 :]:
            if a.origin.is_lalm and b.origin.is_lalm:
                continue
            reason = claims_conflict(a.claim, b.claim)
            if not reason:
                continue
            kind = _pair_kind(a, b)
            if a.tier != b.tier and is_hierarchy_violation((a, b), config):
                kind = ContradictionKind.HIERARCHY_VIOLATION
            found.append(
                Contradiction(
                    id=f"c{len(found) + 1}",
                    kind=kind,
                    item_ids=(a.id, b.id),
                    description=f"{a.claim!r} vs {b.claim!r}: {reason}",
                )
            )
    return found


def stage3_prompt(items: Sequence[EvidenceItem], config: ScoringConfig) -> list[Message]:
    lines = ["TASK: contradiction-detection", "Evidence items:"]
    for item in items:
        rng = f" t={item.time_range[0]:.2f}-{item.time_range[1]:.2f}s" if item.time_range else ""
        lines.append(
            f"[{item.id}] ({item.origin.name}; tier={item.tier.value}; status={item.status.value}; "
            f"confidence={round(item.confidence, 4):.2f}; weight={round(evidence_weight(item, config), 4):.3f}"
            f"{rng}) {item.claim}"
        )
    lines += [
        "",
        "List conflicts between items: inter_tool, intra_tool, hierarchy_violation (a lower "
        "reliability tier outweighing a higher one) or lalm_vs_tool.",
        "Check each for these pitfalls: absence_as_proof (absence of detection taken as proof of "
        "absence), single_source_dismissal (dismissing a single-source claim instead of marking "
        "it speculative), diarization_oversegmentation, non_overlapping_transcripts (transcripts "
        "whose segment timings do not overlap).",
        'Reply with a JSON list of {"kind", "item_ids", "description", "pitfalls", "resolved"}; '
        "an empty list when nothing conflicts.",
    ]
    return [
        Message("system", "You audit audio evidence for contradictions."),
        Message("user", "\n".join(lines)),
    ]


def _parse_stage3(payload: Any, by_id: Mapping[str, EvidenceItem], config: ScoringConfig) -> list[Contradiction]:
    if not isinstance(payload, list):
        raise ValueError("contradiction reply must be a JSON list")
    out = []
    for entry in payload:
        if not isinstance(entry, Mapping):
            continue
        ids = tuple(dict.fromkeys(i for i in entry.get("item_ids") or () if i in by_id))
        if len(ids) < 2:
            continue
        members = [by_id[i] for i in ids]
        try:
            kind = ContradictionKind(str(entry.get("kind", "")).strip().lower())
        except ValueError:
            kind = _pair_kind(members[0], members[1])
        if kind is ContradictionKind.HIERARCHY_VIOLATION and not is_hierarchy_violation(members, config):
            kind = _pair_kind(members[0], members[1])
        pitfalls = set()
        for p in entry.get("pitfalls") or ():
            try:
                pitfalls.add(Pitfall(str(p).strip().lower()))
            except ValueError:
                continue
        out.append(
            Contradiction(
                id=f"c{len(out) + 1}",
                kind=kind,
                item_ids=ids,
                description=str(entry.get("description", "")).strip() or "conflicting evidence",
                resolved=bool(entry.get("resolved", False)),
                pitfall_flags=frozenset(pitfalls),
            )
        )
    return out


def stage3_detect(
    items: Sequence[EvidenceItem],
    tool_results: Sequence[ToolResult],
    session: ChatSession | None,
    config: ScoringConfig = DEFAULT_SCORING,
) -> list[Contradiction]:
    """Backend classification with rule-based pitfall checks; rules alone on failure."""
    by_id = {i.id: i for i in items}
    found: list[Contradiction] | None = None
    if session is not None and items:
        try:
            found = _parse_stage3(extract_json(session.ask(stage3_prompt(items, config))), by_id, config)
        except (BackendError, ValueError) as exc:
            log.warning("contradiction detector falling back to rules: %s", exc)
    if found is None:
        found = rule_detect(items, config)
    return [check_pitfalls(c, by_id) for c in found]


def apply_non_dismissal(items: Sequence[EvidenceItem], contradictions: Sequence[Contradiction]) -> list[EvidenceItem]:
    """High risk only for LALM claims actively contradicted by reproducible tools.

    Every other flagged LALM item becomes Speculative and stays in the set.
    """
    by_id = {i.id: i for i in items}
    active: set[str] = set()
    involved: set[str] = set()
    for c in contradictions:
        involved.update(c.item_ids)
        if c.resolved or Pitfall.ABSENCE_AS_PROOF in c.pitfall_flags:
            continue
        members = [by_id[i] for i in c.item_ids if i in by_id]
        for m in members:
            if m.origin.is_lalm and any(o.id != m.id and not o.origin.is_lalm and o.tier.reproducible for o in members):
                active.add(m.id)
    out = []
    for item in items:
        if not item.origin.is_lalm:
            out.append(item)
        elif item.id in active:
            out.append(replace(item, risk=RiskLevel.HIGH))
        elif item.id in involved or item.risk is RiskLevel.HIGH:
            out.append(replace(item, risk=RiskLevel.SPECULATIVE))
        else:
            out.append(item)
    return out


# --- hypotheses ----------------------------------------------------------------


def _hull(members: Sequence[EvidenceItem], duration_s: float, pad: float) -> tuple[float, float]:
    if not members or any(m.time_range is None for m in members):
        return (0.0, float(duration_s))
    start = min(m.time_range[0] for m in members) - pad
    end = max(m.time_range[1] for m in members) + pad
    return (max(0.0, start), min(float(duration_s), end))


def _candidate_tools(members: Sequence[EvidenceItem], allowed: Sequence[str]) -> list[str]:
    names: list[str] = []
    for m in members:
        if not m.origin.is_lalm and m.origin.name in allowed:
            names.append(m.origin.name)
    toks = set().union(*(token_set(m.claim) for m in members)) if members else set()
    for words, tool in TOPIC_TOOLS:
        if toks & words and tool in allowed:
            names.append(tool)
    if len(dict.fromkeys(names)) < 2 and GENERIC_SEGMENT_TOOL in allowed:
        names.append(GENERIC_SEGMENT_TOOL)
    return list(dict.fromkeys(names))


def generate_hypotheses(
    unresolved: Sequence[Contradiction],
    catalog: ToolCatalog,
    content: ContentType,
    items: Sequence[EvidenceItem],
    audio: str,
    duration_s: float,
    pad_s: float = HYPOTHESIS_PAD_S,
    max_tools: int = 2,
) -> list[VerificationHypothesis]:
    """One hypothesis per unresolved contradiction that a Step-2 tool can test.

    Calls are ordered for the two validation rounds: the primary tool first,
    then the remaining tools and the primary again over a widened window.
    """
    allowed = [s.name for s in tools_for_step(catalog, Step.STEP2, content)]
    by_id = {i.id: i for i in items}
    out = []
    for c in unresolved:
        if c.resolved:
            continue
        members = [by_id[i] for i in c.item_ids if i in by_id]
        tools = _candidate_tools(members, allowed)[:max_tools]
        if not tools:
            continue
        rng = _hull(members, duration_s, pad_s)
        calls = [ToolRequest(t, audio, rng) for t in tools]
        wide = (max(0.0, rng[0] - WIDEN_PAD_S), min(float(duration_s), rng[1] + WIDEN_PAD_S))
        if wide != rng:
            calls.append(ToolRequest(tools[0], audio, wide))
        claims = " / ".join(m.claim for m in members)
        out.append(
            VerificationHypothesis(
                id=f"h{len(out) + 1}",
                statement=(f"{', '.join(tools)} over {rng[0]:.2f}-{rng[1]:.2f}s decides between: {claims}"),
                tool_calls=tuple(calls),
                contradiction_id=c.id,
            )
        )
    return out


def unverifiable(unresolved: Sequence[Contradiction], hypotheses: Sequence[VerificationHypothesis]) -> list[str]:
    covered = {h.contradiction_id for h in hypotheses}
    return [c.id for c in unresolved if not c.resolved and c.id not in covered]
