"""Run configuration: JSON file, ``FW_``-prefixed environment overrides, CLI flags."""

from __future__ import annotations

import json
import os
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .backends import DEFAULT_TEMPERATURE, BackendKind, BackendProfile
from .errors import ConfigurationError, InvalidInputError
from .evidence import ContentType, ScoringConfig
from .loop import LoopConfig
from .tools import ToolCatalog, build_default_catalog, validated

ROLES = ("source_a", "source_b", "reasoner", "tools")
ENV_PREFIX = "FW_"
_PATH_FIELDS = ("fixture_path",)


@dataclass(frozen=True, slots=True)
class RunConfig:
    profiles: Mapping[str, BackendProfile]
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    catalog_path: str | None = None
    out_dir: str = "out"
    seed: int | None = 0
    content_override: ContentType | None = None
    workers: int = 1
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        missing = [r for r in ROLES if r not in self.profiles]
        if missing:
            raise ConfigurationError(f"no backend profile for role(s): {', '.join(missing)}")
        unknown = sorted(set(self.profiles) - set(ROLES))
        if unknown:
            raise ConfigurationError(f"unknown role(s): {', '.join(unknown)}")
        a, b = self.profiles["source_a"].endpoint_id, self.profiles["source_b"].endpoint_id
        if a == b:
            raise ConfigurationError(f"the two sources need distinct endpoint ids (both {a!r})")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    @property
    def sources(self) -> tuple[str, str]:
        return (self.profiles["source_a"].endpoint_id, self.profiles["source_b"].endpoint_id)

    @property
    def offline(self) -> bool:
        """True when every backend is a fixture or a replay, so time can be logical."""
        return all(p.kind is not BackendKind.REMOTE_HTTP for p in self.profiles.values())

    def catalog(self) -> ToolCatalog:
        try:
            base = ToolCatalog.load(self.catalog_path) if self.catalog_path else build_default_catalog()
            return validated(base)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigurationError(f"cannot load tool catalog {self.catalog_path}: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "profiles": {r: p.to_dict() for r, p in self.profiles.items()},
            "scoring": self.scoring.to_dict(),
            "loop": self.loop.to_dict(),
            "catalog": self.catalog_path,
            "out": self.out_dir,
            "seed": self.seed,
            "content_override": self.content_override.value if self.content_override else None,
            "workers": self.workers,
            "temperature": self.temperature,
        }


def _resolve(path: str | None, base: Path) -> str | None:
    if path is None:
        return None
    p = Path(path)
    return str(p if p.is_absolute() else (base / p))


def _content(value: Any) -> ContentType | None:
    if value in (None, "", "none"):
        return None
    try:
        return ContentType(str(value).lower())
    except ValueError as exc:
        raise ConfigurationError(f"unknown content type {value!r}") from exc


def config_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".") -> RunConfig:
    base = Path(base_dir)
    raw_profiles = data.get("profiles") or {}
    if not isinstance(raw_profiles, Mapping):
        raise ConfigurationError("'profiles' must map roles to backend profiles")
    profiles = {}
    for role, raw in raw_profiles.items():
        raw = dict(raw)
        for key in _PATH_FIELDS:
            if raw.get(key):
                raw[key] = _resolve(raw[key], base)
        profiles[role] = BackendProfile.from_dict(raw.get("endpoint_id", role), raw)
    try:
        loop = LoopConfig.from_dict(data.get("loop") or {})
    except (InvalidInputError, TypeError) as exc:
        raise ConfigurationError(f"bad loop settings: {exc}") from exc
    try:
        seed = data.get("seed", 0)
        return RunConfig(
            profiles=profiles,
            scoring=ScoringConfig.from_dict(data.get("scoring") or {}),
            loop=loop,
            catalog_path=_resolve(data.get("catalog"), base),
            out_dir=str(data.get("out", "out")),
            seed=int(seed) if seed is not None else None,
            content_override=_content(data.get("content_override")),
            workers=int(data.get("workers", 1)),
            temperature=float(data.get("temperature", DEFAULT_TEMPERATURE)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad configuration value: {exc}") from exc


def apply_env(data: Mapping[str, Any], env: Mapping[str, str] | None = None) -> dict[str, Any]:
    """Overlay ``FW_SEED``, ``FW_OUT``, ``FW_WORKERS``, ``FW_CONTENT_OVERRIDE``, ``FW_CATALOG``,
    ``FW_TEMPERATURE`` and ``FW_PROFILE_<ROLE>_<FIELD>`` onto a raw config mapping."""
    env = os.environ if env is None else env
    out = json.loads(json.dumps(dict(data)))
    simple = {
        "SEED": "seed",
        "OUT": "out",
        "WORKERS": "workers",
        "CONTENT_OVERRIDE": "content_override",
        "CATALOG": "catalog",
        "TEMPERATURE": "temperature",
    }
    for key, value in sorted(env.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX) :]
        if name in simple:
            out[simple[name]] = value
        elif name.startswith("PROFILE_"):
            rest = name[len("PROFILE_") :].lower()
            role = next((r for r in ROLES if rest.startswith(r + "_")), None)
            if role is None:
                raise ConfigurationError(f"{key}: no role matches (expected one of {', '.join(ROLES)})")
            fld = rest[len(role) + 1 :]
            out.setdefault("profiles", {}).setdefault(role, {})[fld] = value
    return out


def load_config(
    path: str | Path | None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """File, then environment, then explicit overrides (CLI flags), later winning."""
    data: dict[str, Any] = {}
    base = Path(".")
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"config {path} must hold a JSON object")
        base = Path(path).parent
    data = apply_env(data, env)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return config_from_dict(data, base)


def with_overrides(config: RunConfig, **changes: Any) -> RunConfig:
    return replace(config, **{k: v for k, v in changes.items() if v is not None})
