"""Observation and evidence types plus the reliability-tier scoring arithmetic."""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import ConfigurationError, InvalidInputError


class ReliabilityTier(str, Enum):
    ANALYTIC = "analytic"
    PROBABILISTIC = "probabilistic"
    HEURISTIC = "heuristic"
    LALM = "lalm"

    @property
    def rank(self) -> int:
        return _TIER_RANK[self]

    @property
    def reproducible(self) -> bool:
        return self in (ReliabilityTier.ANALYTIC, ReliabilityTier.PROBABILISTIC)

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, ReliabilityTier):
            return NotImplemented
        return self.rank < other.rank

    def __le__(self, other: object) -> bool:
        if not isinstance(other, ReliabilityTier):
            return NotImplemented
        return self.rank <= other.rank

    def __gt__(self, other: object) -> bool:
        if not isinstance(other, ReliabilityTier):
            return NotImplemented
        return self.rank > other.rank

    def __ge__(self, other: object) -> bool:
        if not isinstance(other, ReliabilityTier):
            return NotImplemented
        return self.rank >= other.rank


_TIER_RANK = {
    ReliabilityTier.LALM: 0,
    ReliabilityTier.HEURISTIC: 1,
    ReliabilityTier.PROBABILISTIC: 2,
    ReliabilityTier.ANALYTIC: 3,
}


class ContentType(str, Enum):
    SPEECH = "speech"
    MUSIC = "music"
    MIXED = "mixed"
    ENVIRONMENTAL = "environmental"


class EvidenceStatus(str, Enum):
    CORROBORATED = "corroborated"
    SOURCE_SPECIFIC = "source_specific"
    DISAGREEMENT = "disagreement"


class RiskLevel(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    SEGMENTATION_ARTIFACT = "segmentation_artifact"
    SPECULATIVE = "speculative"


class OriginKind(str, Enum):
    LALM_OBSERVATION = "lalm_observation"
    TOOL_MEASUREMENT = "tool_measurement"


@dataclass(frozen=True, slots=True)
class TierPolicy:
    tier: ReliabilityTier
    cap: float
    weight: float
    base: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.cap <= 1.0 or not 0.0 <= self.weight <= 1.0:
            raise ConfigurationError(f"{self.tier.value}: cap and weight must lie in [0, 1]")
        if not 0.0 < self.base <= self.cap:
            raise ConfigurationError(f"{self.tier.value}: base {self.base} must lie in (0, cap={self.cap}]")


DEFAULT_TIER_POLICIES: Mapping[ReliabilityTier, TierPolicy] = {
    ReliabilityTier.ANALYTIC: TierPolicy(ReliabilityTier.ANALYTIC, cap=0.90, weight=1.0, base=0.60),
    ReliabilityTier.PROBABILISTIC: TierPolicy(ReliabilityTier.PROBABILISTIC, cap=0.75, weight=0.75, base=0.50),
    ReliabilityTier.HEURISTIC: TierPolicy(ReliabilityTier.HEURISTIC, cap=0.60, weight=0.50, base=0.40),
    ReliabilityTier.LALM: TierPolicy(ReliabilityTier.LALM, cap=0.70, weight=0.40, base=0.45),
}


@dataclass(frozen=True, slots=True)
class ScoringConfig:
    corroboration_multiplier: float = 1.5
    direct_answer_bonus: float = 1.3
    lalm_hard_cap: float = 0.70
    keyword_adjust: float = 0.15
    out_of_domain_factor: float = 0.6
    tiers: Mapping[ReliabilityTier, TierPolicy] = field(default_factory=lambda: dict(DEFAULT_TIER_POLICIES))

    def __post_init__(self) -> None:
        if self.corroboration_multiplier < 1.0 or self.direct_answer_bonus < 1.0:
            raise ConfigurationError("corroboration and direct-answer multipliers must be >= 1")
        if not 0.0 < self.out_of_domain_factor <= 1.0:
            raise ConfigurationError("out_of_domain_factor must lie in (0, 1]")
        lalm = self.tiers.get(ReliabilityTier.LALM)
        if lalm is not None and abs(lalm.cap - self.lalm_hard_cap) > 1e-12:
            raise ConfigurationError(f"lalm_hard_cap {self.lalm_hard_cap} differs from the lalm tier cap {lalm.cap}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ScoringConfig:
        """Build from a mapping whose keys mirror the field names.

        ``tiers`` maps tier names to partial ``{cap, weight, base}`` records;
        absent keys keep their defaults.
        """
        tiers = dict(DEFAULT_TIER_POLICIES)
        for name, raw in (data.get("tiers") or {}).items():
            try:
                tier = ReliabilityTier(name)
            except ValueError as exc:
                raise ConfigurationError(f"unknown tier {name!r}") from exc
            current = tiers[tier]
            tiers[tier] = TierPolicy(
                tier,
                cap=float(raw.get("cap", current.cap)),
                weight=float(raw.get("weight", current.weight)),
                base=float(raw.get("base", current.base)),
            )
        kwargs: dict[str, Any] = {"tiers": tiers}
        for key in (
            "corroboration_multiplier",
            "direct_answer_bonus",
            "lalm_hard_cap",
            "keyword_adjust",
            "out_of_domain_factor",
        ):
            if key in data:
                kwargs[key] = float(data[key])
        if "lalm_hard_cap" not in kwargs:
            kwargs["lalm_hard_cap"] = tiers[ReliabilityTier.LALM].cap
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> ScoringConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read scoring config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return {
            "corroboration_multiplier": self.corroboration_multiplier,
            "direct_answer_bonus": self.direct_answer_bonus,
            "lalm_hard_cap": self.lalm_hard_cap,
            "keyword_adjust": self.keyword_adjust,
            "out_of_domain_factor": self.out_of_domain_factor,
            "tiers": {
                t.value: {"cap": p.cap, "weight": p.weight, "base": p.base}
                for t, p in sorted(self.tiers.items(), key=lambda kv: -kv[0].rank)
            },
        }


@dataclass(frozen=True, slots=True)
class Scope:
    """Full-audio scope when ``segment`` is None, else segment 0..2 with bounds."""

    segment: int | None = None
    start: float | None = None
    end: float | None = None

    def __post_init__(self) -> None:
        if self.segment is None:
            return
        if self.segment not in (0, 1, 2):
            raise InvalidInputError(f"segment index {self.segment} outside 0..2")
        if self.start is None or self.end is None or not 0 <= self.start < self.end:
            raise InvalidInputError(f"segment bounds must satisfy 0 <= start < end ({self})")

    @property
    def is_full(self) -> bool:
        return self.segment is None

    @property
    def tag(self) -> str:
        return "full" if self.segment is None else f"seg{self.segment + 1}"

    def to_dict(self) -> dict[str, Any]:
        if self.segment is None:
            return {"kind": "full"}
        return {"kind": "segment", "index": self.segment, "start": self.start, "end": self.end}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Scope:
        if data.get("kind", "full") == "full":
            return cls()
        return cls(int(data["index"]), float(data["start"]), float(data["end"]))


FULL_AUDIO = Scope()


@dataclass(frozen=True, slots=True)
class Observation:
    id: str
    source: str
    scope: Scope
    claim: str
    tags: frozenset[str] = frozenset()
    time_range: tuple[float, float] | None = None
    # Analytics only; stripped before anything reaches argumentation.
    tentative_prediction: str | None = None

    def __post_init__(self) -> None:
        if not self.claim.strip():
            raise InvalidInputError(f"observation {self.id} has an empty claim")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "source": self.source,
            "scope": self.scope.to_dict(),
            "claim": self.claim,
            "tags": sorted(self.tags),
        }
        if self.time_range is not None:
            out["time_range"] = list(self.time_range)
        if self.tentative_prediction is not None:
            out["tentative_prediction"] = self.tentative_prediction
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Observation:
        tr = data.get("time_range")
        return cls(
            id=data["id"],
            source=data["source"],
            scope=Scope.from_dict(data.get("scope") or {}),
            claim=data["claim"],
            tags=frozenset(data.get("tags") or ()),
            time_range=(float(tr[0]), float(tr[1])) if tr else None,
            tentative_prediction=data.get("tentative_prediction"),
        )


@dataclass(frozen=True, slots=True)
class Origin:
    kind: OriginKind
    name: str

    @classmethod
    def lalm(cls, source: str) -> Origin:
        return cls(OriginKind.LALM_OBSERVATION, source)

    @classmethod
    def tool(cls, name: str) -> Origin:
        return cls(OriginKind.TOOL_MEASUREMENT, name)

    @property
    def is_lalm(self) -> bool:
        return self.kind is OriginKind.LALM_OBSERVATION


@dataclass(frozen=True, slots=True)
class EvidenceItem:
    id: str
    origin: Origin
    claim: str
    tier: ReliabilityTier
    status: EvidenceStatus
    confidence: float
    relevance: float
    risk: RiskLevel = RiskLevel.LOW
    corroborated_by: tuple[str, ...] = ()
    direct_answer: bool = False
    domain_factor: float = 1.0
    # Confidence before the LALM hard cap; equals ``confidence`` for tools.
    status_confidence: float | None = None
    time_range: tuple[float, float] | None = None
    observation_id: str | None = None
    result_key: str | None = None
    keyword_adjusted: bool = False
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"{self.id}: confidence {self.confidence} outside [0, 1]")
        if not 0.0 <= self.relevance <= 1.0:
            raise InvalidInputError(f"{self.id}: relevance {self.relevance} outside [0, 1]")
        if not 0.0 < self.domain_factor <= 1.0:
            raise InvalidInputError(f"{self.id}: domain factor {self.domain_factor} outside (0, 1]")
        if self.origin.is_lalm and self.confidence > 0.70 + 1e-12:
            raise InvalidInputError(f"{self.id}: LALM confidence {self.confidence} above 0.70")

    @property
    def source(self) -> str:
        return self.origin.name

    def with_(self, **changes: Any) -> EvidenceItem:
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "origin": {"kind": self.origin.kind.value, "name": self.origin.name},
            "claim": self.claim,
            "tier": self.tier.value,
            "status": self.status.value,
            "confidence": _r4(self.confidence),
            "relevance": _r4(self.relevance),
            "risk": self.risk.value,
            "corroborated_by": list(self.corroborated_by),
            "direct_answer": self.direct_answer,
            "domain_factor": _r4(self.domain_factor),
        }
        if self.status_confidence is not None:
            out["status_confidence"] = _r4(self.status_confidence)
        if self.time_range is not None:
            out["time_range"] = [_r4(self.time_range[0]), _r4(self.time_range[1])]
        if self.observation_id is not None:
            out["observation_id"] = self.observation_id
        if self.result_key is not None:
            out["result_key"] = self.result_key
        if self.keyword_adjusted:
            out["keyword_adjusted"] = True
        if self.flags:
            out["flags"] = list(self.flags)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvidenceItem:
        tr = data.get("time_range")
        origin = data["origin"]
        sc = data.get("status_confidence")
        return cls(
            id=data["id"],
            origin=Origin(OriginKind(origin["kind"]), origin["name"]),
            claim=data["claim"],
            tier=ReliabilityTier(data["tier"]),
            status=EvidenceStatus(data["status"]),
            confidence=float(data["confidence"]),
            relevance=float(data["relevance"]),
            risk=RiskLevel(data.get("risk", "low")),
            corroborated_by=tuple(data.get("corroborated_by") or ()),
            direct_answer=bool(data.get("direct_answer", False)),
            domain_factor=float(data.get("domain_factor", 1.0)),
            status_confidence=float(sc) if sc is not None else None,
            time_range=(float(tr[0]), float(tr[1])) if tr else None,
            observation_id=data.get("observation_id"),
            result_key=data.get("result_key"),
            keyword_adjusted=bool(data.get("keyword_adjusted", False)),
            flags=tuple(data.get("flags") or ()),
        )


def _r4(x: float) -> float:
    return round(float(x), 4)


def tier_policy(tier: ReliabilityTier, config: ScoringConfig) -> TierPolicy:
    try:
        return config.tiers[tier]
    except KeyError as exc:
        raise ConfigurationError(f"scoring config has no policy for tier {tier.value!r}") from exc


def score_evidence(
    base: float,
    tier: ReliabilityTier,
    corroborated: bool,
    direct_answer: bool,
    domain_factor: float = 1.0,
    config: ScoringConfig | None = None,
) -> float:
    """Confidence for one item: bonuses compose multiplicatively, then one clamp.

    >>> score_evidence(0.60, ReliabilityTier.ANALYTIC, True, True)
    0.9
    """
    config = config or DEFAULT_SCORING
    policy = tier_policy(tier, config)
    if not 0.0 < base <= policy.cap + 1e-12:
        raise InvalidInputError(f"base {base} outside (0, {policy.cap}] for tier {tier.value}")
    if not 0.0 < domain_factor <= 1.0:
        raise InvalidInputError(f"domain factor {domain_factor} outside (0, 1]")
    value = base * domain_factor
    if corroborated:
        value *= config.corroboration_multiplier
    if direct_answer:
        value *= config.direct_answer_bonus
    value = min(policy.cap, value)
    if tier is ReliabilityTier.LALM:
        value = min(config.lalm_hard_cap, value)
    return value


def evidence_weight(item: EvidenceItem, config: ScoringConfig | None = None) -> float:
    """Tier weight times confidence times relevance."""
    config = config or DEFAULT_SCORING
    return tier_policy(item.tier, config).weight * item.confidence * item.relevance


def domain_factor(
    tool_domains: frozenset[ContentType] | set[ContentType],
    content: ContentType,
    config: ScoringConfig | None = None,
) -> float:
    if not tool_domains:
        raise InvalidInputError("tool domains must be non-empty")
    config = config or DEFAULT_SCORING
    if content in tool_domains:
        return 1.0
    if content is ContentType.MIXED and tool_domains & {ContentType.SPEECH, ContentType.MUSIC}:
        return 1.0
    return config.out_of_domain_factor


DEFAULT_SCORING = ScoringConfig()
