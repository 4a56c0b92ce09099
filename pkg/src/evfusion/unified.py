"""Cross-source corroboration of the two sources' observations."""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .backends import ChatSession, Message
from .errors import BackendError
from .evidence import (
    DEFAULT_SCORING,
    EvidenceItem,
    EvidenceStatus,
    Observation,
    Origin,
    ReliabilityTier,
    ScoringConfig,
)
from .intake import SourceReport, labelled
from .text import claims_conflict, extract_json, jaccard, relevance_score, supported_choices, token_set

log = logging.getLogger(__name__)

CORROBORATION_THRESHOLD = 0.6

STATUS_RANGES: Mapping[EvidenceStatus, tuple[float, float]] = {
    EvidenceStatus.CORROBORATED: (0.80, 0.95),
    EvidenceStatus.SOURCE_SPECIFIC: (0.50, 0.70),
    EvidenceStatus.DISAGREEMENT: (0.40, 0.60),
}


class AgreementLevel(str, Enum):
    UNANIMOUS = "unanimous"
    MAJORITY = "majority"
    CONFLICTING = "conflicting"


@dataclass(frozen=True, slots=True)
class Disagreement:
    id: str
    item_ids: tuple[str, ...]
    topic: str
    credibility_note: str
    resolved: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "item_ids": list(self.item_ids),
            "topic": self.topic,
            "credibility_note": self.credibility_note,
            "resolved": self.resolved,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Disagreement:
        return cls(
            data["id"],
            tuple(data["item_ids"]),
            data.get("topic", ""),
            data.get("credibility_note", ""),
            bool(data.get("resolved", False)),
        )


@dataclass(frozen=True, slots=True)
class UnifiedAnalysis:
    items: tuple[EvidenceItem, ...]
    disagreements: tuple[Disagreement, ...]
    agreement: AgreementLevel
    used_fallback: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "items": [i.to_dict() for i in self.items],
            "disagreements": [d.to_dict() for d in self.disagreements],
            "agreement": self.agreement.value,
            "used_fallback": self.used_fallback,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> UnifiedAnalysis:
        return cls(
            tuple(EvidenceItem.from_dict(i) for i in data.get("items") or ()),
            tuple(Disagreement.from_dict(d) for d in data.get("disagreements") or ()),
            AgreementLevel(data.get("agreement", "conflicting")),
            bool(data.get("used_fallback", False)),
        )


def agreement_level(report_a: SourceReport, report_b: SourceReport | None = None) -> AgreementLevel:
    """Agreement over the per-query tentative predictions (up to eight).

    Unanimous when every recorded prediction is identical, Majority when one
    choice holds a strict majority, Conflicting otherwise or with no
    predictions at all.
    """
    preds = [p for p in report_a.tentative_predictions if p]
    if report_b is not None:
        preds += [p for p in report_b.tentative_predictions if p]
    return agreement_from_predictions(preds)


def agreement_from_predictions(preds: Sequence[str]) -> AgreementLevel:
    if not preds:
        return AgreementLevel.CONFLICTING
    counts = Counter(preds).most_common()
    if len(counts) == 1:
        return AgreementLevel.UNANIMOUS
    if counts[0][1] * 2 > len(preds):
        return AgreementLevel.MAJORITY
    return AgreementLevel.CONFLICTING


def item_id(obs: Observation) -> str:
    return f"ev:{obs.id}"


def _time_range(obs: Observation) -> tuple[float, float] | None:
    if obs.time_range is not None:
        return obs.time_range
    if not obs.scope.is_full:
        return (obs.scope.start, obs.scope.end)
    return None


def fallback_confidence(status: EvidenceStatus, segment_corroborated: bool, config: ScoringConfig) -> float:
    lo, hi = STATUS_RANGES[status]
    mid = (lo + hi) / 2
    if segment_corroborated:
        mid *= config.corroboration_multiplier
    return min(hi, max(lo, mid))


def _build_item(
    obs: Observation,
    status: EvidenceStatus,
    status_conf: float,
    partners: Sequence[str],
    question: str,
    choices: Sequence[str],
    config: ScoringConfig,
    flags: tuple[str, ...] = (),
) -> EvidenceItem:
    lo, hi = STATUS_RANGES[status]
    clamped = min(hi, max(lo, status_conf))
    if abs(clamped - status_conf) > 1e-12:
        flags = flags + ("confidence_clamped_to_status_range",)
    cap = config.lalm_hard_cap
    return EvidenceItem(
        id=item_id(obs),
        origin=Origin.lalm(obs.source),
        claim=obs.claim,
        tier=ReliabilityTier.LALM,
        status=status,
        confidence=min(cap, clamped),
        relevance=relevance_score(obs.claim, question, list(choices)),
        corroborated_by=tuple(partners),
        direct_answer=bool(supported_choices(obs.claim, list(choices))),
        status_confidence=clamped,
        time_range=_time_range(obs),
        observation_id=obs.id,
        flags=flags,
    )


def _credibility(obs: Observation, report: SourceReport) -> str:
    if obs.id in report.segment_corroborated_ids:
        return f"{report.source} repeats it across full-audio and segment queries"
    return f"{report.source} reports it in a single query"


def lexical_corroboration(
    report_a: SourceReport,
    report_b: SourceReport,
    question: str = "",
    choices: Sequence[str] = (),
    config: ScoringConfig = DEFAULT_SCORING,
) -> tuple[list[EvidenceItem], list[Disagreement]]:
    """Deterministic, order-independent classification by claim tokens."""
    obs_a, obs_b = list(report_a.observations), list(report_b.observations)
    toks = {o.id: token_set(o.claim) for o in obs_a + obs_b}

    conflicts: list[tuple[Observation, Observation, str]] = []
    for a in obs_a:
        for b in obs_b:
            reason = claims_conflict(a.claim, b.claim)
            if reason:
                conflicts.append((a, b, reason))
    in_conflict = {o.id for a, b, _ in conflicts for o in (a, b)}

    candidates = []
    for a in obs_a:
        for b in obs_b:
            if a.id in in_conflict or b.id in in_conflict:
                continue
            sim = jaccard(toks[a.id], toks[b.id])
            if sim >= CORROBORATION_THRESHOLD:
                key = tuple(sorted([a.claim.lower() + "\0" + a.id, b.claim.lower() + "\0" + b.id]))
                candidates.append((-sim, key, a, b))
    candidates.sort(key=lambda c: (c[0], c[1]))
    partner: dict[str, str] = {}
    for _, _, a, b in candidates:
        if a.id in partner or b.id in partner:
            continue
        partner[a.id] = b.id
        partner[b.id] = a.id

    by_report = {o.id: report_a for o in obs_a} | {o.id: report_b for o in obs_b}
    conflict_partners: dict[str, list[str]] = {}
    for a, b, _ in conflicts:
        conflict_partners.setdefault(a.id, []).append(item_id(b))
        conflict_partners.setdefault(b.id, []).append(item_id(a))

    items = []
    for obs in obs_a + obs_b:
        seg = obs.id in by_report[obs.id].segment_corroborated_ids
        if obs.id in in_conflict:
            status, partners = EvidenceStatus.DISAGREEMENT, ()
        elif obs.id in partner:
            status, partners = EvidenceStatus.CORROBORATED, (f"ev:{partner[obs.id]}",)
        else:
            status, partners = EvidenceStatus.SOURCE_SPECIFIC, ()
        conf = fallback_confidence(status, seg, config)
        items.append(_build_item(obs, status, conf, partners, question, choices, config))

    disagreements = [
        Disagreement(
            id=f"d{i + 1}",
            item_ids=(item_id(a), item_id(b)),
            topic=reason,
            credibility_note=f"{_credibility(a, report_a)}; {_credibility(b, report_b)}",
        )
        for i, (a, b, reason) in enumerate(conflicts)
    ]
    return items, disagreements


def unified_prompt(
    report_a: SourceReport, report_b: SourceReport, question: str, choices: Sequence[str]
) -> list[Message]:
    lines = ["TASK: unified-analysis", f"Question: {question}"]
    if choices:
        lines.append("Options: " + "; ".join(f"({l}) {t}" for l, t in labelled(choices)))
    for report in (report_a, report_b):
        lines.append("")
        lines.append(f"Observations from {report.source}:")
        for obs in report.observations:
            marks = []
            if obs.id in report.segment_corroborated_ids:
                marks.append("segment-corroborated")
            if obs.time_range:
                marks.append(f"t={obs.time_range[0]:.2f}-{obs.time_range[1]:.2f}s")
            suffix = f" ({', '.join(marks)})" if marks else ""
            lines.append(f"[{obs.id}] {obs.claim}{suffix}")
    lines += [
        "",
        "Classify every observation by semantic agreement between the two sources.",
        "corroborated: both sources state it (confidence 0.80-0.95); source_specific: only one "
        "source (0.50-0.70); disagreement: the sources make conflicting claims (add a credibility "
        "assessment in note).",
        'Reply with a JSON list of {"claim", "status", "confidence", "sources": [observation ids], "note"}.',
    ]
    return [
        Message("system", "You cross-check audio observations from two independent listeners."),
        Message("user", "\n".join(lines)),
    ]


def _from_backend(
    payload: Any,
    report_a: SourceReport,
    report_b: SourceReport,
    question: str,
    choices: Sequence[str],
    config: ScoringConfig,
) -> tuple[list[EvidenceItem], list[Disagreement]]:
    if not isinstance(payload, list):
        raise ValueError("unified analysis reply must be a JSON list")
    obs_by_id = {o.id: o for o in report_a.observations} | {o.id: o for o in report_b.observations}
    side = {o.id: "a" for o in report_a.observations} | {o.id: "b" for o in report_b.observations}
    assigned: dict[str, tuple[EvidenceStatus, float, tuple[str, ...]]] = {}
    disagreements: list[Disagreement] = []
    for entry in payload:
        if not isinstance(entry, Mapping):
            continue
        try:
            status = EvidenceStatus(str(entry.get("status", "")).strip().lower())
        except ValueError:
            continue
        ids = [i for i in entry.get("sources") or [] if i in obs_by_id and i not in assigned]
        sides = {side[i] for i in ids}
        if status is EvidenceStatus.CORROBORATED and sides != {"a", "b"}:
            status = EvidenceStatus.SOURCE_SPECIFIC
        if status is EvidenceStatus.DISAGREEMENT and len(ids) < 2:
            continue
        if not ids:
            continue
        try:
            conf = float(entry.get("confidence"))
        except (TypeError, ValueError):
            conf = sum(STATUS_RANGES[status]) / 2
        for i in ids:
            partners = tuple(item_id(obs_by_id[j]) for j in ids if j != i and side[j] != side[i])
            if status is not EvidenceStatus.CORROBORATED:
                partners = ()
            assigned[i] = (status, conf, partners)
        if status is EvidenceStatus.DISAGREEMENT:
            disagreements.append(
                Disagreement(
                    id=f"d{len(disagreements) + 1}",
                    item_ids=tuple(item_id(obs_by_id[i]) for i in ids),
                    topic=str(entry.get("claim", "")).strip() or "conflicting claims",
                    credibility_note=str(entry.get("note", "")).strip() or "no assessment given",
                )
            )
    items = []
    for obs in list(report_a.observations) + list(report_b.observations):
        report = report_a if side[obs.id] == "a" else report_b
        if obs.id in assigned:
            status, conf, partners = assigned[obs.id]
            items.append(_build_item(obs, status, conf, partners, question, choices, config))
        else:
            seg = obs.id in report.segment_corroborated_ids
            conf = fallback_confidence(EvidenceStatus.SOURCE_SPECIFIC, seg, config)
            items.append(
                _build_item(
                    obs,
                    EvidenceStatus.SOURCE_SPECIFIC,
                    conf,
                    (),
                    question,
                    choices,
                    config,
                    flags=("unclassified_by_backend",),
                )
            )
    return items, disagreements


def corroborate_sources(
    report_a: SourceReport,
    report_b: SourceReport,
    session: ChatSession | None,
    question: str = "",
    choices: Sequence[str] = (),
    config: ScoringConfig = DEFAULT_SCORING,
) -> UnifiedAnalysis:
    """One reasoning call classifies every observation; lexical matching on failure."""
    agreement = agreement_level(report_a, report_b)
    if not report_a.observations and not report_b.observations:
        return UnifiedAnalysis((), (), agreement)
    if session is not None:
        try:
            reply = session.ask(unified_prompt(report_a, report_b, question, choices))
            items, disagreements = _from_backend(extract_json(reply), report_a, report_b, question, choices, config)
            return UnifiedAnalysis(tuple(items), tuple(disagreements), agreement)
        except (BackendError, ValueError) as exc:
            log.warning("unified analysis falling back to lexical matching: %s", exc)
    items, disagreements = lexical_corroboration(report_a, report_b, question, choices, config)
    return UnifiedAnalysis(tuple(items), tuple(disagreements), agreement, used_fallback=True)
