"""Source-model intake: four queries per source, response parsing, synthesis."""

from __future__ import annotations

import json
import re
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from .errors import InvalidInputError, PartialIntakeError
from .evidence import FULL_AUDIO, ContentType, Observation, Scope
from .text import jaccard, plain_token_set

DEDUP_THRESHOLD = 0.6

_TAG_TO_CONTENT = {
    "speech": ContentType.SPEECH,
    "music": ContentType.MUSIC,
    "environmental": ContentType.ENVIRONMENTAL,
    "environment": ContentType.ENVIRONMENTAL,
    "mixed": ContentType.MIXED,
}


@dataclass(frozen=True, slots=True)
class IntakeQuery:
    source: str
    scope: Scope
    prompt: str

    @property
    def key(self) -> str:
        return f"{self.source}:{self.scope.tag}"


def segment_scopes(duration_s: float) -> list[Scope]:
    """Three equal-duration segments tiling [0, duration)."""
    if not duration_s > 0:
        raise InvalidInputError(f"duration must be positive, got {duration_s}")
    bounds = [0.0, duration_s / 3, 2 * duration_s / 3, float(duration_s)]
    return [Scope(i, bounds[i], bounds[i + 1]) for i in range(3)]


def observation_prompt(
    scope: Scope,
    duration_s: float,
    question: str | None = None,
    choices: Sequence[str] = (),
) -> str:
    if scope.is_full:
        where = f"the full audio clip ({duration_s:.2f} s)"
    else:
        where = (
            f"segment {scope.segment + 1} of 3 of the audio clip, covering "
            f"{scope.start:.2f}-{scope.end:.2f} s of the original"
        )
    lines = [
        f"You are listening to {where}.",
        "Report what you actually hear as short factual observations. Do not select an answer in your observations.",
    ]
    if question:
        lines.append(f"Context question (for focus only): {question}")
    if choices:
        lines.append("Options: " + "; ".join(f"({label}) {text}" for label, text in labelled(choices)))
    lines += [
        "",
        "Write each observation as a block:",
        "OBSERVATION: <one claim>",
        "TIME: <start>-<end> (seconds relative to the start of what you hear; optional)",
        "TAG: <speech|music|environmental|other>",
        "",
        "Finish with:",
        "CONTENT: <speech|music|mixed|environmental>",
        "TENTATIVE: <option letter you would pick, logged separately and not used as evidence>",
    ]
    return "\n".join(lines)


def labelled(choices: Sequence[str]) -> list[tuple[str, str]]:
    return [(choice_label(i), text) for i, text in enumerate(choices)]


def choice_label(index: int) -> str:
    return chr(ord("A") + index)


def plan_queries(
    duration_s: float,
    sources: Sequence[str],
    question: str | None = None,
    choices: Sequence[str] = (),
) -> list[IntakeQuery]:
    if not sources:
        raise InvalidInputError("at least one source is required")
    scopes = [FULL_AUDIO, *segment_scopes(duration_s)]
    return [
        IntakeQuery(src, scope, observation_prompt(scope, duration_s, question, choices))
        for src in sources
        for scope in scopes
    ]


@dataclass(frozen=True, slots=True)
class ParsedResponse:
    source: str
    scope: Scope
    observations: tuple[Observation, ...]
    content_vote: ContentType | None = None
    tentative_prediction: str | None = None


_TIME_RE = re.compile(r"(\d+(?:\.\d+)?)\s*(?:s|sec|seconds)?\s*(?:-|–|to)\s*(\d+(?:\.\d+)?)")
_FIELD_RE = re.compile(r"^\s*(OBSERVATION|TIME|TAG|CONTENT|TENTATIVE)\s*:\s*(.*)$", re.IGNORECASE)
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


def _parse_time(text: str) -> tuple[float, float] | None:
    m = _TIME_RE.search(text)
    if not m:
        return None
    start, end = float(m.group(1)), float(m.group(2))
    if not 0 <= start < end:
        return None
    return (start, end)


def _absolute(rng: tuple[float, float] | None, scope: Scope) -> tuple[float, float] | None:
    if rng is None or scope.is_full:
        return rng
    assert scope.start is not None and scope.end is not None
    start = min(scope.start + rng[0], scope.end)
    end = min(scope.start + rng[1], scope.end)
    return (start, end) if start < end else None


def _content(value: Any) -> ContentType | None:
    if not isinstance(value, str):
        return None
    return _TAG_TO_CONTENT.get(value.strip().lower())


def _prediction(value: Any) -> str | None:
    if not isinstance(value, str):
        return None
    m = re.search(r"\b([A-Z])\b", value.strip().upper())
    return m.group(1) if m else None


def parse_response(text: str, source: str, scope: Scope) -> ParsedResponse:
    """Parse one source answer.

    Accepts a JSON object or list, the OBSERVATION/TIME/TAG block format, or
    falls back to one observation per non-empty line.
    """
    stripped = text.strip()
    if stripped.startswith(("{", "[")):
        try:
            return _parse_json(json.loads(stripped), source, scope)
        except (json.JSONDecodeError, TypeError, KeyError, ValueError):
            pass
    return _parse_blocks(stripped, source, scope)


def _make_obs(source, scope, index, claim, tags=(), rng=None, prediction=None) -> Observation:
    return Observation(
        id=f"{source}:{scope.tag}:{index}",
        source=source,
        scope=scope,
        claim=claim.strip(),
        tags=frozenset(t.strip().lower() for t in tags if t and t.strip()),
        time_range=_absolute(rng, scope),
        tentative_prediction=prediction,
    )


def _parse_json(data: Any, source: str, scope: Scope) -> ParsedResponse:
    if isinstance(data, list):
        data = {"observations": data}
    prediction = _prediction(data.get("tentative") or data.get("tentative_prediction"))
    observations = []
    for raw in data.get("observations") or []:
        if isinstance(raw, str):
            raw = {"claim": raw}
        claim = str(raw.get("claim", "")).strip()
        if not claim:
            continue
        rng = raw.get("time_range")
        parsed_rng = None
        if isinstance(rng, (list, tuple)) and len(rng) == 2:
            parsed_rng = (float(rng[0]), float(rng[1]))
            if not 0 <= parsed_rng[0] < parsed_rng[1]:
                parsed_rng = None
        elif isinstance(rng, str):
            parsed_rng = _parse_time(rng)
        tags = raw.get("tags") or ([raw["tag"]] if raw.get("tag") else [])
        observations.append(_make_obs(source, scope, len(observations), claim, tags, parsed_rng, prediction))
    return ParsedResponse(source, scope, tuple(observations), _content(data.get("content")), prediction)


def _parse_blocks(text: str, source: str, scope: Scope) -> ParsedResponse:
    lines = text.splitlines()
    structured = any(_FIELD_RE.match(ln) and _FIELD_RE.match(ln).group(1).upper() == "OBSERVATION" for ln in lines)
    content = None
    prediction = None
    pending: list[dict[str, Any]] = []
    for line in lines:
        m = _FIELD_RE.match(line)
        if m:
            key, value = m.group(1).upper(), m.group(2).strip()
            if key == "CONTENT":
                content = _content(value)
            elif key == "TENTATIVE":
                prediction = _prediction(value)
            elif key == "OBSERVATION" and value:
                pending.append({"claim": value, "tags": [], "rng": None})
            elif key == "TIME" and pending:
                pending[-1]["rng"] = _parse_time(value)
            elif key == "TAG" and pending:
                pending[-1]["tags"].extend(value.split(","))
            continue
        if not structured and line.strip():
            claim = _BULLET_RE.sub("", line).strip()
            if claim:
                pending.append({"claim": claim, "tags": [], "rng": None})
    observations = tuple(
        _make_obs(source, scope, i, p["claim"], p["tags"], p["rng"], prediction) for i, p in enumerate(pending)
    )
    return ParsedResponse(source, scope, observations, content, prediction)


@dataclass(frozen=True, slots=True)
class SourceReport:
    source: str
    observations: tuple[Observation, ...]
    segment_corroborated_ids: frozenset[str]
    content_vote: ContentType
    # One slot per query in scope order (full, seg1, seg2, seg3); None when absent.
    tentative_predictions: tuple[str | None, ...] = ()
    missing_queries: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ids = {o.id for o in self.observations}
        if not self.segment_corroborated_ids <= ids:
            raise InvalidInputError("segment-corroborated ids must reference report observations")

    def to_dict(self) -> dict[str, Any]:
        return {
            "source": self.source,
            "observations": [o.to_dict() for o in self.observations],
            "segment_corroborated_ids": sorted(self.segment_corroborated_ids),
            "content_vote": self.content_vote.value,
            "tentative_predictions": list(self.tentative_predictions),
            "missing_queries": list(self.missing_queries),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SourceReport:
        return cls(
            source=data["source"],
            observations=tuple(Observation.from_dict(o) for o in data.get("observations") or ()),
            segment_corroborated_ids=frozenset(data.get("segment_corroborated_ids") or ()),
            content_vote=ContentType(data.get("content_vote", "mixed")),
            tentative_predictions=tuple(data.get("tentative_predictions") or ()),
            missing_queries=tuple(data.get("missing_queries") or ()),
        )


@dataclass
class _Merged:
    obs: Observation
    scopes: set[str] = field(default_factory=set)


def merge_observations(
    observations: Iterable[Observation], threshold: float = DEDUP_THRESHOLD
) -> list[tuple[Observation, frozenset[str]]]:
    """Greedy dedup by plain-token Jaccard.

    The first occurrence keeps its id and claim; tags are unioned and the set
    of contributing scope tags is returned alongside each kept observation.
    """
    merged: list[_Merged] = []
    tokens: list[frozenset[str]] = []
    for obs in observations:
        toks = plain_token_set(obs.claim)
        hit = None
        for i, existing in enumerate(tokens):
            if jaccard(toks, existing) >= threshold:
                hit = i
                break
        if hit is None:
            merged.append(_Merged(obs, {obs.scope.tag}))
            tokens.append(toks)
            continue
        entry = merged[hit]
        entry.scopes.add(obs.scope.tag)
        entry.obs = Observation(
            id=entry.obs.id,
            source=entry.obs.source,
            scope=entry.obs.scope,
            claim=entry.obs.claim,
            tags=entry.obs.tags | obs.tags,
            time_range=entry.obs.time_range or obs.time_range,
            tentative_prediction=entry.obs.tentative_prediction,
        )
    return [(m.obs, frozenset(m.scopes)) for m in merged]


def _scope_order(resp: ParsedResponse) -> int:
    return -1 if resp.scope.is_full else int(resp.scope.segment)


def synthesize_source(
    responses: Sequence[ParsedResponse],
    source: str,
    threshold: float = DEDUP_THRESHOLD,
) -> SourceReport:
    """Merge one source's four responses.

    An observation seen in the full-audio response and in at least one
    segment response is marked segment-corroborated.  Raises
    :class:`PartialIntakeError` (carrying the partial report) when fewer than
    four responses are supplied.
    """
    ordered = sorted((r for r in responses if r.source == source), key=_scope_order)
    all_obs = [o for r in ordered for o in r.observations]
    merged = merge_observations(all_obs, threshold)
    corroborated = frozenset(obs.id for obs, scopes in merged if "full" in scopes and len(scopes) > 1)
    slots: dict[str, str | None] = {"full": None, "seg1": None, "seg2": None, "seg3": None}
    for r in ordered:
        slots[r.scope.tag] = r.tentative_prediction
    present = {r.scope.tag for r in ordered}
    report = SourceReport(
        source=source,
        observations=tuple(obs for obs, _ in merged),
        segment_corroborated_ids=corroborated,
        content_vote=_source_content(ordered),
        tentative_predictions=tuple(slots.values()),
        missing_queries=tuple(tag for tag in slots if tag not in present),
    )
    if len(present) < 4:
        raise PartialIntakeError(f"{source}: {len(present)} of 4 responses received", partial=report)
    return report


def _source_content(responses: Sequence[ParsedResponse]) -> ContentType:
    votes = [r.content_vote for r in responses if r.content_vote is not None]
    winner = _plurality(votes)
    if winner is not None:
        return winner
    tag_votes = [_TAG_TO_CONTENT[t] for r in responses for o in r.observations for t in o.tags if t in _TAG_TO_CONTENT]
    return _plurality(tag_votes) or ContentType.MIXED


def _plurality(votes: Sequence[ContentType]) -> ContentType | None:
    if not votes:
        return None
    ranked = Counter(votes).most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return None
    return ranked[0][0]


def classify_content(
    reports: Sequence[SourceReport],
    hints: Sequence[ContentType] = (),
) -> ContentType:
    """Majority over the sources' content votes plus any tool hints; ties go to Mixed."""
    if not reports:
        raise InvalidInputError("at least one source report is required")
    votes = [r.content_vote for r in reports] + list(hints)
    return _plurality(votes) or ContentType.MIXED
