"""Step 1 evidence gathering and Step 2 targeted validation."""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

from .backends import ChatSession, Message, ToolClient
from .contradiction import (
    HYPOTHESIS_PAD_S,
    Contradiction,
    VerificationHypothesis,
    apply_non_dismissal,
    apply_risks,
    generate_hypotheses,
    stage1_keyword_reclassify,
    stage2_risk_assessment,
    stage3_detect,
)
from .errors import BackendError, InvalidInputError
from .evidence import (
    DEFAULT_SCORING,
    ContentType,
    EvidenceItem,
    EvidenceStatus,
    Origin,
    ReliabilityTier,
    RiskLevel,
    ScoringConfig,
    domain_factor,
    evidence_weight,
    score_evidence,
    tier_policy,
)
from .intake import labelled
from .text import (
    claims_conflict,
    extract_json,
    jaccard,
    overlap_coefficient,
    relevance_score,
    supported_choices,
    token_set,
)
from .tools import (
    Step,
    ToolCatalog,
    ToolRequest,
    ToolResult,
    ToolSpec,
    cap_tool_confidence,
    check_request,
    tools_for_step,
)
from .unified import Disagreement, UnifiedAnalysis

log = logging.getLogger(__name__)

TOOL_CORROBORATION_THRESHOLD = 0.30
SUPPORT_THRESHOLD = 0.5


class LoopStep(str, Enum):
    STEP1 = "step1"
    STEP2 = "step2"
    DONE = "done"


class StopReason(str, Enum):
    CONFIDENCE_SUFFICIENT = "confidence_sufficient"
    NO_NEW_TOOLS = "no_new_tools"
    ROUND_LIMIT = "round_limit"
    ALL_HYPOTHESES_CHECKED = "all_hypotheses_checked"


@dataclass(frozen=True, slots=True)
class LoopConfig:
    step1_rounds: int = 3
    step2_rounds: int = 2
    max_per_round: int = 4
    confidence_threshold: float = 0.45
    hypothesis_pad_s: float = HYPOTHESIS_PAD_S
    workers: int = 8

    def __post_init__(self) -> None:
        if not 1 <= self.step1_rounds <= 3 or not 1 <= self.step2_rounds <= 2:
            raise InvalidInputError("round limits must be 1..3 (step 1) and 1..2 (step 2)")
        if self.max_per_round < 1 or self.workers < 1:
            raise InvalidInputError("max_per_round and workers must be positive")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> LoopConfig:
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        return cls(**known)

    def to_dict(self) -> dict[str, Any]:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(frozen=True, slots=True)
class RoundLog:
    step: LoopStep
    index: int
    proposed: tuple[ToolRequest, ...]
    invoked: tuple[ToolRequest, ...]
    skipped: tuple[ToolRequest, ...]
    results: tuple[ToolResult, ...]
    started: float
    finished: float
    stop_reason: StopReason | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step.value,
            "index": self.index,
            "proposed": [r.to_dict() for r in self.proposed],
            "invoked": [r.to_dict() for r in self.invoked],
            "skipped": [r.to_dict() for r in self.skipped],
            "results": [r.to_dict() for r in self.results],
            "started": round(self.started, 4),
            "finished": round(self.finished, 4),
            "stop_reason": self.stop_reason.value if self.stop_reason else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RoundLog:
        stop = data.get("stop_reason")
        return cls(
            LoopStep(data["step"]),
            int(data["index"]),
            tuple(ToolRequest.from_dict(r) for r in data.get("proposed") or ()),
            tuple(ToolRequest.from_dict(r) for r in data.get("invoked") or ()),
            tuple(ToolRequest.from_dict(r) for r in data.get("skipped") or ()),
            tuple(ToolResult.from_dict(r) for r in data.get("results") or ()),
            float(data.get("started", 0.0)),
            float(data.get("finished", 0.0)),
            StopReason(stop) if stop else None,
        )


@dataclass(frozen=True, slots=True)
class RoundOutcome:
    results: tuple[ToolResult, ...]
    stop_reason: StopReason | None


@dataclass(slots=True)
class LoopState:
    sample_id: str
    audio: str
    duration_s: float
    question: str
    choices: tuple[str, ...]
    content: ContentType
    evidence: list[EvidenceItem]
    disagreements: list[Disagreement] = field(default_factory=list)
    tool_results: list[ToolResult] = field(default_factory=list)
    contradictions: list[Contradiction] = field(default_factory=list)
    hypotheses: list[VerificationHypothesis] = field(default_factory=list)
    rounds: list[RoundLog] = field(default_factory=list)
    round: int = 0
    step: LoopStep = LoopStep.STEP1
    invoked: set[tuple[str, str]] = field(default_factory=set)
    step1_stop: StopReason | None = None
    step2_stop: StopReason | None = None

    @classmethod
    def from_analysis(
        cls,
        sample_id: str,
        audio: str,
        duration_s: float,
        question: str,
        choices: Sequence[str],
        content: ContentType,
        analysis: UnifiedAnalysis,
    ) -> LoopState:
        return cls(
            sample_id=sample_id,
            audio=audio,
            duration_s=duration_s,
            question=question,
            choices=tuple(choices),
            content=content,
            evidence=list(analysis.items),
            disagreements=list(analysis.disagreements),
        )

    @property
    def unresolved(self) -> list[Contradiction]:
        return [c for c in self.contradictions if not c.resolved]


# --- decisions -----------------------------------------------------------------


def answer_relevant(items: Sequence[EvidenceItem]) -> list[EvidenceItem]:
    return [i for i in items if i.relevance > 0]


def max_answer_weight(items: Sequence[EvidenceItem], config: ScoringConfig = DEFAULT_SCORING) -> float:
    return max((evidence_weight(i, config) for i in answer_relevant(items)), default=0.0)


def needs_verification(
    analysis: UnifiedAnalysis | Sequence[EvidenceItem],
    config: LoopConfig = LoopConfig(),
    scoring: ScoringConfig = DEFAULT_SCORING,
    disagreements: Sequence[Disagreement] | None = None,
) -> bool:
    """Unresolved disagreement, or no answer-relevant item weighs in above the threshold."""
    if isinstance(analysis, UnifiedAnalysis):
        items: Sequence[EvidenceItem] = analysis.items
        disagreements = analysis.disagreements if disagreements is None else disagreements
    else:
        items = analysis
    if any(not d.resolved for d in disagreements or ()):
        return True
    return max_answer_weight(items, scoring) < config.confidence_threshold


# --- tool execution ----------------------------------------------------------


class ToolExecutor:
    """Pre-flight checks, client call, confidence capping and relevance fill-in."""

    def __init__(
        self,
        client: ToolClient,
        catalog: ToolCatalog,
        scoring: ScoringConfig = DEFAULT_SCORING,
        workers: int = 8,
    ) -> None:
        self.client = client
        self.catalog = catalog
        self.scoring = scoring
        self.workers = workers

    def run(self, requests: Sequence[ToolRequest], state: LoopState) -> list[ToolResult]:
        if len(requests) <= 1 or self.workers <= 1:
            return [self._one(r, state) for r in requests]
        with ThreadPoolExecutor(max_workers=min(self.workers, len(requests))) as pool:
            return list(pool.map(lambda r: self._one(r, state), requests))

    def _one(self, request: ToolRequest, state: LoopState) -> ToolResult:
        try:
            spec = self.catalog.get(request.tool)
            check_request(request, spec)
        except (KeyError, InvalidInputError) as exc:
            return ToolResult.failed(request, f"rejected pre-flight: {exc}")
        try:
            result = self.client.invoke(request)
        except Exception as exc:  # noqa: BLE001 - a failing tool degrades, never aborts
            log.warning("tool %s failed: %s", request.tool, exc)
            return ToolResult.failed(request, f"{type(exc).__name__}: {exc}")
        if not result.ok:
            return result
        try:
            result = cap_tool_confidence(result, spec, state.content, self.scoring)
        except InvalidInputError as exc:
            return ToolResult.failed(request, str(exc), result.duration_ms)
        if result.relevance < 0:
            result = replace(result, relevance=relevance_score(result.summary, state.question, state.choices))
        return replace(result, relevance=min(1.0, max(0.0, result.relevance)))


# --- evidence from tools -------------------------------------------------------


def tool_item_id(result: ToolResult) -> str:
    return f"tool:{result.tool}:{result.request.digest[:10]}"


def tool_item(
    result: ToolResult,
    spec: ToolSpec,
    content: ContentType,
    choices: Sequence[str],
    corroborated_by: Sequence[str] = (),
    config: ScoringConfig = DEFAULT_SCORING,
) -> EvidenceItem | None:
    """Evidence item for a successful tool result; None for failures or empty output."""
    if not result.ok or not result.summary.strip():
        return None
    direct = bool(supported_choices(result.summary, list(choices)))
    cap = tier_policy(spec.tier, config).cap
    base = min(cap, result.capped_confidence)
    conf = score_evidence(base, spec.tier, bool(corroborated_by), direct, 1.0, config) if base > 0 else 0.0
    status = EvidenceStatus.CORROBORATED if corroborated_by else EvidenceStatus.SOURCE_SPECIFIC
    return EvidenceItem(
        id=tool_item_id(result),
        origin=Origin.tool(spec.name),
        claim=result.summary,
        tier=spec.tier,
        status=status,
        confidence=conf,
        relevance=result.relevance,
        corroborated_by=tuple(corroborated_by),
        direct_answer=direct,
        domain_factor=domain_factor(spec.domains, content, config),
        time_range=result.request.time_range,
        result_key=result.request.digest,
    )


def _agrees(a: str, b: str) -> bool:
    if claims_conflict(a, b):
        return False
    return jaccard(token_set(a), token_set(b)) >= TOOL_CORROBORATION_THRESHOLD


def rescore(
    evidence: Sequence[EvidenceItem],
    results: Sequence[ToolResult],
    catalog: ToolCatalog,
    content: ContentType,
    choices: Sequence[str],
    config: ScoringConfig = DEFAULT_SCORING,
) -> list[EvidenceItem]:
    """Rebuild tool items from all results, with corroboration against every other item.

    LALM items and their keyword/risk state are kept; tool items are derived
    fresh so a later result can corroborate an earlier one.  Risks already
    assigned to tool items survive.
    """
    lalm = [i for i in evidence if i.origin.is_lalm]
    previous = {i.id: i for i in evidence if not i.origin.is_lalm}
    seen: set[str] = set()
    drafts: list[tuple[ToolResult, ToolSpec]] = []
    for r in results:
        if not r.ok or r.tool not in catalog:
            continue
        iid = tool_item_id(r)
        if iid in seen:
            continue
        seen.add(iid)
        drafts.append((r, catalog.get(r.tool)))
    claims = [(i.id, i.claim, None) for i in lalm] + [(tool_item_id(r), r.summary, r.tool) for r, _ in drafts]
    out = list(lalm)
    for r, spec in drafts:
        iid = tool_item_id(r)
        partners = [
            cid
            for cid, claim, tool in claims
            if cid != iid and tool != r.tool and claim.strip() and _agrees(r.summary, claim)
        ]
        item = tool_item(r, spec, content, choices, partners, config)
        if item is None:
            continue
        if iid in previous:
            item = replace(item, risk=previous[iid].risk, flags=previous[iid].flags)
        out.append(item)
    return out


def settle_disagreements(disagreements: Sequence[Disagreement], evidence: Sequence[EvidenceItem]) -> list[Disagreement]:
    """Mark a source disagreement resolved when reproducible tool evidence backs one side only."""
    by_id = {i.id: i for i in evidence}
    tools = [i for i in evidence if not i.origin.is_lalm and i.tier.reproducible]
    out = []
    for d in disagreements:
        if d.resolved:
            out.append(d)
            continue
        members = [by_id[i] for i in d.item_ids if i in by_id]
        backed = {m.id for m in members for t in tools if _side_with(t.claim, m.claim)}
        contradicted = {m.id for m in members for t in tools if claims_conflict(t.claim, m.claim)}
        winners = [m.id for m in members if m.id in backed and m.id not in contradicted]
        losers_all = all(m.id in contradicted or m.id in winners for m in members)
        out.append(replace(d, resolved=True) if len(winners) == 1 and losers_all else d)
    return out


def _side_with(tool_claim: str, claim: str) -> bool:
    if claims_conflict(tool_claim, claim):
        return False
    return overlap_coefficient(token_set(claim), token_set(tool_claim)) >= SUPPORT_THRESHOLD


# --- proposals -----------------------------------------------------------------


def proposal_prompt(
    state: LoopState,
    specs: Sequence[ToolSpec],
    max_per_round: int,
    scoring: ScoringConfig = DEFAULT_SCORING,
) -> list[Message]:
    lines = [
        "TASK: tool-selection",
        f"Question: {state.question}",
        *(f"({label}) {text}" for label, text in labelled(state.choices)),
        f"Content type: {state.content.value}",
        "",
        "Current evidence (confidence / relevance):",
    ]
    for item in state.evidence:
        lines.append(
            f"- [{item.id}] {item.origin.name} ({item.tier.value}) "
            f"{round(item.confidence, 4):.2f} / {round(item.relevance, 4):.2f}: {item.claim}"
        )
    open_d = [d for d in state.disagreements if not d.resolved]
    if open_d:
        lines.append("")
        lines.append("Open disagreements:")
        lines += [f"- {d.id}: {d.topic}" for d in open_d]
    lines += ["", "Available tools:"]
    for spec in specs:
        lines.append(f"- {spec.name} [{spec.tier.value}, {spec.scope.value}]: {spec.description}")
    if state.invoked:
        lines += ["", "Already run: " + ", ".join(sorted(t for t, _ in state.invoked))]
    lines += [
        "",
        f"Pick up to {max_per_round} tools that would raise confidence in the answer. "
        'Reply with a JSON list of {"tool": name, "params": {}}; reply [] when no tool would help.',
    ]
    return [
        Message("system", "You plan audio analysis tool calls."),
        Message("user", "\n".join(lines)),
    ]


def parse_proposals(
    text: str,
    allowed: Sequence[ToolSpec],
    audio: str,
    max_per_round: int,
    step: Step = Step.STEP1,
) -> list[ToolRequest]:
    """Requests restricted to ``allowed``; unknown names are dropped with a warning."""
    try:
        data = extract_json(text)
    except ValueError:
        log.warning("tool proposal was not JSON; treating as empty")
        return []
    if isinstance(data, Mapping):
        data = data.get("tools", data.get("calls", []))
    if not isinstance(data, list):
        return []
    names = {s.name: s for s in allowed}
    out = []
    for entry in data:
        if isinstance(entry, str):
            entry = {"tool": entry}
        if not isinstance(entry, Mapping):
            continue
        name = str(entry.get("tool", "")).strip()
        if name not in names:
            log.warning("dropping proposal for tool %r outside the step catalog", name)
            continue
        params = entry.get("params") or {}
        if not isinstance(params, Mapping):
            params = {}
        rng = None
        if step is Step.STEP2 and isinstance(entry.get("time_range"), (list, tuple)):
            try:
                rng = (float(entry["time_range"][0]), float(entry["time_range"][1]))
            except (TypeError, ValueError, IndexError):
                rng = None
        out.append(ToolRequest(name, audio, rng, dict(params)))
    return out[:max_per_round]


def propose_tools(
    state: LoopState,
    session: ChatSession,
    step_catalog: Sequence[ToolSpec],
    max_per_round: int = 4,
    scoring: ScoringConfig = DEFAULT_SCORING,
) -> list[ToolRequest]:
    try:
        reply = session.ask(proposal_prompt(state, step_catalog, max_per_round, scoring))
    except BackendError as exc:
        log.warning("tool proposal failed: %s", exc)
        return []
    return parse_proposals(reply, step_catalog, state.audio, max_per_round)


def _dedupe(requests: Sequence[ToolRequest], invoked: set[tuple[str, str]]) -> tuple[list, list]:
    fresh, skipped, keys = [], [], set()
    for r in requests:
        key = r.invocation_key
        if key in invoked or key in keys:
            skipped.append(r)
        else:
            keys.add(key)
            fresh.append(r)
    return fresh, skipped


# --- step 1 --------------------------------------------------------------------


def run_step1(
    state: LoopState,
    session: ChatSession,
    executor: ToolExecutor,
    catalog: ToolCatalog,
    config: LoopConfig = LoopConfig(),
    scoring: ScoringConfig = DEFAULT_SCORING,
    clock: Callable[[], float] = lambda: 0.0,
    detector: ChatSession | None = None,
) -> LoopState:
    """Evidence-gathering rounds followed by the three contradiction stages."""
    if state.step is not LoopStep.STEP1:
        raise InvalidInputError(f"run_step1 needs step1 state, got {state.step.value}")
    specs = tools_for_step(catalog, Step.STEP1, state.content)
    if not needs_verification(state.evidence, config, scoring, state.disagreements):
        state.step1_stop = StopReason.CONFIDENCE_SUFFICIENT
    while state.step1_stop is None:
        state.round += 1
        started = clock()
        proposed = propose_tools(state, session, specs, config.max_per_round, scoring)
        fresh, skipped = _dedupe(proposed, state.invoked)
        results: list[ToolResult] = []
        stop: StopReason | None = None
        if not fresh:
            stop = StopReason.NO_NEW_TOOLS
        else:
            state.invoked.update(r.invocation_key for r in fresh)
            results = executor.run(fresh, state)
            state.tool_results.extend(results)
            state.evidence = rescore(state.evidence, state.tool_results, catalog, state.content, state.choices, scoring)
            state.disagreements = settle_disagreements(state.disagreements, state.evidence)
            if state.round >= config.step1_rounds:
                stop = StopReason.ROUND_LIMIT
            elif not needs_verification(state.evidence, config, scoring, state.disagreements):
                stop = StopReason.CONFIDENCE_SUFFICIENT
        state.rounds.append(
            RoundLog(
                LoopStep.STEP1,
                state.round,
                tuple(proposed),
                tuple(fresh),
                tuple(skipped),
                tuple(results),
                started,
                clock(),
                stop,
            )
        )
        state.step1_stop = stop
    run_contradiction_stages(state, catalog, detector or session, config, scoring)
    state.step = LoopStep.STEP2
    state.round = 0
    return state


def run_contradiction_stages(
    state: LoopState,
    catalog: ToolCatalog,
    session: ChatSession | None,
    config: LoopConfig = LoopConfig(),
    scoring: ScoringConfig = DEFAULT_SCORING,
) -> None:
    evidence = stage1_keyword_reclassify(state.evidence, state.tool_results, catalog, scoring)
    evidence = apply_risks(evidence, stage2_risk_assessment(evidence, state.tool_results))
    contradictions = stage3_detect(evidence, state.tool_results, session, scoring)
    state.evidence = apply_non_dismissal(evidence, contradictions)
    state.contradictions = contradictions
    state.hypotheses = generate_hypotheses(
        state.unresolved,
        catalog,
        state.content,
        state.evidence,
        state.audio,
        state.duration_s,
        config.hypothesis_pad_s,
    )


# --- step 2 --------------------------------------------------------------------


def _winner(result: ToolResult, members: Sequence[EvidenceItem]) -> EvidenceItem | None:
    """The single member the targeted result sides with, if any."""
    survivors = [m for m in members if not claims_conflict(result.summary, m.claim)]
    if len(survivors) == 1 and len(members) > 1:
        return survivors[0]
    backed = [m for m in survivors if _side_with(result.summary, m.claim)]
    return backed[0] if len(backed) == 1 else None


def resolve_with(
    contradiction: Contradiction,
    result: ToolResult,
    tier: ReliabilityTier,
    by_id: Mapping[str, EvidenceItem],
) -> tuple[Contradiction, list[EvidenceItem]]:
    """Resolve when the result sides with one claimant and outranks every claimant's confidence."""
    members = [by_id[i] for i in contradiction.item_ids if i in by_id]
    if not result.ok or len(members) < 2:
        return contradiction, []
    winner = _winner(result, members)
    if winner is None or result.capped_confidence <= max(m.confidence for m in members):
        return contradiction, []
    loser_risk = RiskLevel.HIGH if tier.reproducible else RiskLevel.SPECULATIVE
    losers = [
        replace(m, risk=loser_risk, flags=m.flags + (f"overruled_by:{result.tool}",))
        for m in members
        if m.id != winner.id
    ]
    resolved = replace(
        contradiction,
        resolved=True,
        winner=winner.id,
        resolution=f"{result.tool} on {_fmt_range(result.request.time_range)} sides with {winner.id}",
    )
    return resolved, losers


def _fmt_range(rng: tuple[float, float] | None) -> str:
    return "full audio" if rng is None else f"{rng[0]:.2f}-{rng[1]:.2f}s"


def run_step2(
    state: LoopState,
    hypotheses: Sequence[VerificationHypothesis] | None,
    executor: ToolExecutor,
    catalog: ToolCatalog,
    config: LoopConfig = LoopConfig(),
    scoring: ScoringConfig = DEFAULT_SCORING,
    clock: Callable[[], float] = lambda: 0.0,
) -> LoopState:
    """Run hypothesis calls over at most two rounds; round 2 only for what is still open.

    Round 1 executes each hypothesis's first call, round 2 the rest.
    """
    if state.step is not LoopStep.STEP2:
        raise InvalidInputError(f"run_step2 needs step2 state, got {state.step.value}")
    hypotheses = list(state.hypotheses if hypotheses is None else hypotheses)
    allowed = {s.name for s in tools_for_step(catalog, Step.STEP2, state.content)}
    pending = list(hypotheses)
    state.round = 0
    while pending:
        state.round += 1
        started = clock()
        batch: list[tuple[VerificationHypothesis, ToolRequest]] = []
        for h in pending:
            calls = h.tool_calls[:1] if state.round == 1 else h.tool_calls[1:]
            batch += [(h, c) for c in calls if c.tool in allowed and c.time_range is not None]
        proposed = [c for _, c in batch]
        fresh, skipped = _dedupe(proposed, state.invoked)
        if not fresh:
            state.step2_stop = StopReason.ALL_HYPOTHESES_CHECKED
            state.rounds.append(
                RoundLog(
                    LoopStep.STEP2,
                    state.round,
                    tuple(proposed),
                    (),
                    tuple(skipped),
                    (),
                    started,
                    clock(),
                    state.step2_stop,
                )
            )
            break
        state.invoked.update(r.invocation_key for r in fresh)
        results = executor.run(fresh, state)
        state.tool_results.extend(results)
        by_key = {r.request.invocation_key: r for r in results}

        contradictions = {c.id: c for c in state.contradictions}
        by_id = {i.id: i for i in state.evidence}
        for h, call in batch:
            c = contradictions.get(h.contradiction_id)
            r = by_key.get(call.invocation_key)
            if c is None or c.resolved or r is None:
                continue
            resolved, losers = resolve_with(c, r, catalog.get(r.tool).tier, by_id)
            contradictions[c.id] = resolved
            for loser in losers:
                by_id[loser.id] = loser
        state.contradictions = [contradictions[c.id] for c in state.contradictions]
        state.evidence = rescore(
            [by_id.get(i.id, i) for i in state.evidence],
            state.tool_results,
            catalog,
            state.content,
            state.choices,
            scoring,
        )

        open_ids = {c.id for c in state.contradictions if not c.resolved}
        pending = [h for h in pending if h.contradiction_id in open_ids and len(h.tool_calls) > 1]
        if not pending:
            stop = StopReason.ALL_HYPOTHESES_CHECKED
        elif state.round >= config.step2_rounds:
            stop = StopReason.ROUND_LIMIT
        else:
            stop = None
        state.rounds.append(
            RoundLog(
                LoopStep.STEP2,
                state.round,
                tuple(proposed),
                tuple(fresh),
                tuple(skipped),
                tuple(results),
                started,
                clock(),
                stop,
            )
        )
        if stop is not None:
            state.step2_stop = stop
            break
    if state.step2_stop is None:
        state.step2_stop = StopReason.ALL_HYPOTHESES_CHECKED
    state.step = LoopStep.DONE
    return state


def invocation_bound(config: LoopConfig, hypotheses: Sequence[VerificationHypothesis]) -> int:
    """Upper bound on tool invocations for one sample."""
    return config.step1_rounds * config.max_per_round + sum(len(h.tool_calls) for h in hypotheses)
