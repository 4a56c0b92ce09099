"""Tool catalog: tier, scope, domains and step membership for the 25 tools."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import CatalogError, InvalidInputError
from .evidence import (
    DEFAULT_SCORING,
    ContentType,
    ReliabilityTier,
    ScoringConfig,
    domain_factor,
    tier_policy,
)


class ToolScope(str, Enum):
    WHOLE_AUDIO = "whole_audio"
    SEGMENT_LEVEL = "segment_level"
    BOTH = "both"


class Step(str, Enum):
    STEP1 = "step1"
    STEP2 = "step2"


EXPECTED_COUNTS = {
    (Step.STEP1, False): 12,
    (Step.STEP1, True): 23,
    (Step.STEP2, False): 5,
    (Step.STEP2, True): 8,
}

_ALL_CONTENT = frozenset(ContentType)
_SPEECH = frozenset({ContentType.SPEECH})
_MUSIC = frozenset({ContentType.MUSIC})


@dataclass(frozen=True, slots=True)
class ToolSpec:
    name: str
    tier: ReliabilityTier
    scope: ToolScope
    domains: frozenset[ContentType]
    music_only: bool = False
    interpreted: bool = False
    # False keeps a tool enabled (invocable by hypotheses or explicit request)
    # while hiding it from the agent's step catalogs.
    selectable: bool = True
    description: str = ""

    def __post_init__(self) -> None:
        if self.music_only and ContentType.MUSIC not in self.domains:
            raise CatalogError(f"{self.name}: music_only tool must list music among its domains")
        if not self.domains:
            raise CatalogError(f"{self.name}: domains must be non-empty")

    @property
    def segment_capable(self) -> bool:
        return self.scope in (ToolScope.SEGMENT_LEVEL, ToolScope.BOTH)

    @property
    def whole_capable(self) -> bool:
        return self.scope in (ToolScope.WHOLE_AUDIO, ToolScope.BOTH)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "tier": self.tier.value,
            "scope": self.scope.value,
            "domains": sorted(d.value for d in self.domains),
            "music_only": self.music_only,
            "interpreted": self.interpreted,
            "selectable": self.selectable,
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ToolSpec:
        return cls(
            name=data["name"],
            tier=ReliabilityTier(data["tier"]),
            scope=ToolScope(data["scope"]),
            domains=frozenset(ContentType(d) for d in data["domains"]),
            music_only=bool(data.get("music_only", False)),
            interpreted=bool(data.get("interpreted", False)),
            selectable=bool(data.get("selectable", True)),
            description=data.get("description", ""),
        )


@dataclass(frozen=True, slots=True)
class ToolCatalog:
    specs: tuple[ToolSpec, ...]
    validated: bool = False

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def __contains__(self, name: object) -> bool:
        return any(s.name == name for s in self.specs)

    def get(self, name: str) -> ToolSpec:
        for spec in self.specs:
            if spec.name == name:
                return spec
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def to_json(self) -> str:
        return json.dumps([s.to_dict() for s in self.specs], indent=2)

    @classmethod
    def from_json(cls, text: str) -> ToolCatalog:
        return cls(tuple(ToolSpec.from_dict(d) for d in json.loads(text)))

    @classmethod
    def load(cls, path: str | Path) -> ToolCatalog:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _spec(name, tier, scope, domains, music_only=False, interpreted=False, selectable=True, desc=""):
    return ToolSpec(name, tier, scope, frozenset(domains), music_only, interpreted, selectable, desc)


A, P, H, L = (
    ReliabilityTier.ANALYTIC,
    ReliabilityTier.PROBABILISTIC,
    ReliabilityTier.HEURISTIC,
    ReliabilityTier.LALM,
)
W, S, B = ToolScope.WHOLE_AUDIO, ToolScope.SEGMENT_LEVEL, ToolScope.BOTH
_SPEECH_ENV = {ContentType.SPEECH, ContentType.ENVIRONMENTAL}
_GENERAL = {ContentType.SPEECH, ContentType.MUSIC, ContentType.ENVIRONMENTAL}


def build_default_catalog() -> ToolCatalog:
    """The 25 enabled tools, in usefulness order with the four unobserved tools last."""
    specs = (
        _spec("speech LLM query (Qwen3)", L, W, _GENERAL, desc="free-form question to Qwen3-Omni"),
        _spec("transcription", P, B, _SPEECH, desc="ASR transcript with word timings"),
        _spec("diarization + transcription", P, B, _SPEECH, desc="who spoke when, with text"),
        _spec("speech LLM query (StepAudio)", L, W, _GENERAL, desc="free-form question to StepAudioR1"),
        _spec("melody transcription", P, W, _MUSIC, True, True, desc="pitch contour and notes"),
        _spec("instrument detection", P, B, _MUSIC, True, True, desc="instrument tags with scores"),
        _spec("harmonic analysis", A, B, _MUSIC, True, desc="harmonic/percussive split, chroma, key"),
        _spec("beat & onset detection", A, B, _MUSIC, True, True, desc="beat grid and onsets"),
        _spec("environment detection", H, W, _SPEECH_ENV, desc="reverberation and room type"),
        _spec("synthetic speech detection", P, W, _SPEECH, interpreted=True, desc="spoof likelihood"),
        _spec("energy dynamics", A, B, _ALL_CONTENT, desc="RMS envelope and dynamic range"),
        _spec("spectral features", A, W, _ALL_CONTENT, desc="centroid, bandwidth, MFCC summary"),
        _spec("audio quality", A, W, _ALL_CONTENT, interpreted=True, desc="loudness, clipping, SNR"),
        _spec("scene context", H, W, {ContentType.ENVIRONMENTAL}, desc="acoustic scene label"),
        _spec("chord progression", H, W, _MUSIC, True, True, desc="template chord labels"),
        _spec("speaker count", P, W, _SPEECH, desc="embedding clustering speaker count"),
        _spec("event sequence", P, B, _SPEECH_ENV, interpreted=True, desc="timed sound events"),
        _spec("temporal segments", A, S, _ALL_CONTENT, interpreted=True, desc="segment comparison"),
        _spec(
            "audio effects",
            A,
            W,
            _ALL_CONTENT,
            interpreted=True,
            selectable=False,
            desc="reverb, delay and EQ estimates",
        ),
        _spec("tempo tracking", A, W, _MUSIC, True, True, desc="windowed tempo curve"),
        _spec("rhythm analysis", H, W, _MUSIC, True, True, desc="tempogram meter rules"),
        _spec("source separation", P, W, _MUSIC, True, desc="stem separation and stem energies"),
        _spec("vocal technique", H, W, _MUSIC, True, True, desc="vibrato and register"),
        _spec("instrument sequence", P, W, _MUSIC, True, desc="windowed instrument tags"),
        _spec("rhythm patterns", H, W, _MUSIC, True, True, desc="tempogram template matching"),
    )
    return ToolCatalog(specs)


@dataclass(frozen=True, slots=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def valid(self) -> bool:
        return not self.violations


def _step_members(specs: Iterable[ToolSpec], step: Step, with_music: bool) -> list[ToolSpec]:
    out = []
    for spec in specs:
        if not spec.selectable:
            continue
        if spec.music_only and not with_music:
            continue
        if step is Step.STEP1 and spec.whole_capable:
            out.append(spec)
        elif step is Step.STEP2 and spec.segment_capable:
            out.append(spec)
    return out


def validate_catalog(catalog: ToolCatalog) -> ValidationReport:
    violations = []
    counts = Counter(catalog.names)
    for name, n in sorted(counts.items()):
        if n > 1:
            violations.append(f"duplicate tool name {name!r} ({n} entries)")
    for spec in catalog.specs:
        if spec.music_only and ContentType.MUSIC not in spec.domains:
            violations.append(f"{spec.name}: music_only without music domain")
    for (step, with_music), expected in EXPECTED_COUNTS.items():
        got = len(_step_members(catalog.specs, step, with_music))
        if got != expected:
            label = "step-1" if step is Step.STEP1 else "step-2"
            if with_music:
                label += " (music)"
            violations.append(f"{label} count {got} ≠ {expected}")
    return ValidationReport(tuple(violations))


def validated(catalog: ToolCatalog) -> ToolCatalog:
    report = validate_catalog(catalog)
    if not report.valid:
        raise CatalogError("; ".join(report.violations))
    return replace(catalog, validated=True)


def tools_for_step(catalog: ToolCatalog, step: Step, content: ContentType) -> list[ToolSpec]:
    if not catalog.validated:
        raise CatalogError("catalog must be validated before step selection")
    with_music = content in (ContentType.MUSIC, ContentType.MIXED)
    return _step_members(catalog.specs, step, with_music)


def _canon(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def params_digest(params: Mapping[str, Any]) -> str:
    return hashlib.sha256(_canon(params).encode()).hexdigest()[:16]


@dataclass(frozen=True, slots=True)
class ToolRequest:
    tool: str
    audio: str
    time_range: tuple[float, float] | None = None
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def invocation_key(self) -> tuple[str, str]:
        """(tool, params-digest) identity used for duplicate suppression."""
        payload = dict(self.params)
        if self.time_range is not None:
            payload["__time_range"] = [round(self.time_range[0], 4), round(self.time_range[1], 4)]
        return (self.tool, params_digest(payload))

    @property
    def digest(self) -> str:
        return hashlib.sha256(_canon(self.to_dict()).encode()).hexdigest()

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool": self.tool,
            "audio": self.audio,
            "time_range": [round(t, 4) for t in self.time_range] if self.time_range else None,
            "params": dict(sorted(self.params.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ToolRequest:
        tr = data.get("time_range")
        return cls(
            tool=data["tool"],
            audio=data["audio"],
            time_range=(float(tr[0]), float(tr[1])) if tr else None,
            params=dict(data.get("params") or {}),
        )


def check_request(request: ToolRequest, spec: ToolSpec) -> None:
    """Pre-flight scope check; segment-only tools need a time range."""
    if spec.scope is ToolScope.SEGMENT_LEVEL and request.time_range is None:
        raise InvalidInputError(f"{spec.name} is segment-level and needs a time_range")
    if request.time_range is not None:
        start, end = request.time_range
        if not 0 <= start < end:
            raise InvalidInputError(f"bad time range {request.time_range} for {spec.name}")


@dataclass(frozen=True, slots=True)
class ToolResult:
    request: ToolRequest
    output: Mapping[str, Any]
    raw_confidence: float
    capped_confidence: float
    relevance: float
    duration_ms: int = 0
    ok: bool = True
    error: str | None = None

    @property
    def summary(self) -> str:
        return str(self.output.get("summary", ""))

    @property
    def tool(self) -> str:
        return self.request.tool

    def to_dict(self) -> dict[str, Any]:
        out = {
            "request": self.request.to_dict(),
            "output": dict(self.output),
            "raw_confidence": round(self.raw_confidence, 4),
            "capped_confidence": round(self.capped_confidence, 4),
            "relevance": round(self.relevance, 4),
            "duration_ms": self.duration_ms,
            "ok": self.ok,
        }
        if self.error is not None:
            out["error"] = self.error
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ToolResult:
        return cls(
            request=ToolRequest.from_dict(data["request"]),
            output=dict(data.get("output") or {}),
            raw_confidence=float(data.get("raw_confidence", 0.0)),
            capped_confidence=float(data.get("capped_confidence", 0.0)),
            relevance=float(data.get("relevance", 0.0)),
            duration_ms=int(data.get("duration_ms", 0)),
            ok=bool(data.get("ok", True)),
            error=data.get("error"),
        )

    @classmethod
    def failed(cls, request: ToolRequest, reason: str, duration_ms: int = 0) -> ToolResult:
        return cls(request, {"summary": ""}, 0.0, 0.0, 0.0, duration_ms, ok=False, error=reason)


def cap_tool_confidence(
    result: ToolResult,
    spec: ToolSpec,
    content: ContentType,
    config: ScoringConfig | None = None,
) -> ToolResult:
    config = config or DEFAULT_SCORING
    if not 0.0 <= result.raw_confidence <= 1.0:
        raise InvalidInputError(f"raw confidence {result.raw_confidence} outside [0, 1]")
    cap = tier_policy(spec.tier, config).cap
    capped = min(cap, result.raw_confidence * domain_factor(spec.domains, content, config))
    return replace(result, capped_confidence=capped)


def format_catalog(catalog: ToolCatalog, content: ContentType | None = None) -> str:
    """One row per enabled tool followed by the step catalogs' sizes.

    The ``steps`` column shows membership for ``content`` (speech and music
    when not given).
    """
    catalog = catalog if catalog.validated else validated(catalog)
    contents = (content,) if content else (ContentType.SPEECH, ContentType.MUSIC)
    members = {(step, c): {s.name for s in tools_for_step(catalog, step, c)} for step in Step for c in contents}
    lines = [f"{'tool':<30} {'tier':<13} {'scope':<13} mus int  steps"]
    for spec in catalog.specs:
        steps = sorted({step.value for (step, c), names in members.items() if spec.name in names})
        lines.append(
            f"{spec.name:<30} {spec.tier.value:<13} {spec.scope.value:<13} "
            f"{'Y' if spec.music_only else '-':<3} {'Y' if spec.interpreted else '-':<4} "
            f"{','.join(steps) or '-'}"
        )
    lines.append("")
    lines.append(f"{len(catalog)} enabled tools")
    for (step, c), names in members.items():
        lines.append(f"{step.value} [{c.value}]: {len(names)} tools")
    return "\n".join(lines)
