"""Small builders shared by the unit tests."""

from __future__ import annotations

from collections.abc import Callable, Sequence

from evfusion.backends import ChatRequest, ChatSession, FunctionChatClient
from evfusion.evidence import (
    ContentType,
    EvidenceItem,
    EvidenceStatus,
    Observation,
    Origin,
    ReliabilityTier,
    RiskLevel,
    Scope,
)
from evfusion.intake import SourceReport
from evfusion.tools import ToolRequest, ToolResult


def session(reply: Callable[[ChatRequest], str] | str | Sequence[str], endpoint: str = "reasoner") -> ChatSession:
    """A session answering with a fixed string, a list of strings in turn, or a callable."""
    if isinstance(reply, str):
        fn = lambda _req: reply  # noqa: E731
    elif callable(reply):
        fn = reply
    else:
        queue = list(reply)
        fn = lambda _req: queue.pop(0)  # noqa: E731
    return ChatSession(FunctionChatClient(fn), endpoint, lambda: 0.0, [])


def failing_session(endpoint: str = "reasoner") -> ChatSession:
    def boom(_req: ChatRequest) -> str:
        raise RuntimeError("backend down")

    return ChatSession(FunctionChatClient(boom), endpoint, lambda: 0.0, [])


def lalm(
    id: str,
    claim: str,
    confidence: float = 0.6,
    relevance: float = 0.6,
    source: str = "a",
    status: EvidenceStatus = EvidenceStatus.SOURCE_SPECIFIC,
    risk: RiskLevel = RiskLevel.LOW,
    time_range: tuple[float, float] | None = None,
) -> EvidenceItem:
    return EvidenceItem(
        id=id,
        origin=Origin.lalm(source),
        claim=claim,
        tier=ReliabilityTier.LALM,
        status=status,
        confidence=confidence,
        relevance=relevance,
        risk=risk,
        time_range=time_range,
    )


def tool_item(
    id: str,
    tool: str,
    claim: str,
    tier: ReliabilityTier = ReliabilityTier.ANALYTIC,
    confidence: float = 0.8,
    relevance: float = 0.8,
    result_key: str | None = None,
    time_range: tuple[float, float] | None = None,
    risk: RiskLevel = RiskLevel.LOW,
) -> EvidenceItem:
    return EvidenceItem(
        id=id,
        origin=Origin.tool(tool),
        claim=claim,
        tier=tier,
        status=EvidenceStatus.SOURCE_SPECIFIC,
        confidence=confidence,
        relevance=relevance,
        result_key=result_key,
        time_range=time_range,
        risk=risk,
    )


def result(
    tool: str,
    summary: str,
    confidence: float = 0.8,
    time_range: tuple[float, float] | None = None,
    audio: str = "a.wav",
    **output,
) -> ToolResult:
    req = ToolRequest(tool, audio, time_range)
    return ToolResult(req, {"summary": summary, **output}, confidence, confidence, 0.8)


def observation(source: str, index: int, claim: str, scope: Scope = Scope(), **kw) -> Observation:
    return Observation(id=f"{source}:{scope.tag}:{index}", source=source, scope=scope, claim=claim, **kw)


def report(source: str, claims: Sequence[str], predictions: Sequence[str | None] = ("A",) * 4) -> SourceReport:
    return SourceReport(
        source=source,
        observations=tuple(observation(source, i, c) for i, c in enumerate(claims)),
        segment_corroborated_ids=frozenset(),
        content_vote=ContentType.SPEECH,
        tentative_predictions=tuple(predictions),
    )
