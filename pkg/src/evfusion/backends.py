"""Chat-completion and tool-invocation clients.

Three flavours share one interface each:

* ``RemoteHttp`` speaks JSON over HTTP (chat-completions convention for chat,
  ``{tool, audio, time_range, params}`` for tools) with bounded retries.
* ``Fixture`` looks responses up in a directory of JSON files named by the
  request digest and never touches the network.
* ``Replay`` feeds back the exchanges recorded in pipeline logs, in order,
  and reports the first request whose digest differs from the recording.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from collections import defaultdict, deque
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

import httpx

from .errors import (
    BackendError,
    BackendTimeout,
    ConfigurationError,
    FixtureMiss,
    ReplayDivergence,
    ReplayExhausted,
)
from .tools import ToolRequest, ToolResult

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.6
RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


class BackendKind(str, Enum):
    REMOTE_HTTP = "remote_http"
    FIXTURE = "fixture"
    REPLAY = "replay"


@dataclass(frozen=True, slots=True)
class BackendProfile:
    kind: BackendKind
    endpoint_id: str
    url: str | None = None
    fixture_path: str | None = None
    model: str | None = None
    timeout_s: float = 120.0
    retries: int = 2
    max_in_flight: int = 8
    backoff_s: float = 0.5

    def __post_init__(self) -> None:
        if self.kind is BackendKind.REMOTE_HTTP and not self.url:
            raise ConfigurationError(f"{self.endpoint_id}: remote profile needs a url")
        if self.kind in (BackendKind.FIXTURE, BackendKind.REPLAY) and not self.fixture_path:
            raise ConfigurationError(f"{self.endpoint_id}: {self.kind.value} profile needs fixture_path")
        if self.retries < 0 or self.max_in_flight < 1:
            raise ConfigurationError(f"{self.endpoint_id}: retries >= 0 and max_in_flight >= 1")

    @classmethod
    def from_dict(cls, endpoint_id: str, data: Mapping[str, Any]) -> BackendProfile:
        try:
            kind = BackendKind(data.get("kind", "fixture"))
        except ValueError as exc:
            raise ConfigurationError(f"{endpoint_id}: unknown backend kind {data.get('kind')!r}") from exc
        return cls(
            kind=kind,
            endpoint_id=data.get("endpoint_id", endpoint_id),
            url=data.get("url"),
            fixture_path=data.get("fixture_path"),
            model=data.get("model"),
            timeout_s=float(data.get("timeout_s", 120.0)),
            retries=int(data.get("retries", 2)),
            max_in_flight=int(data.get("max_in_flight", 8)),
            backoff_s=float(data.get("backoff_s", 0.5)),
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, "endpoint_id": self.endpoint_id}
        for key in ("url", "fixture_path", "model"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        out.update(timeout_s=self.timeout_s, retries=self.retries, max_in_flight=self.max_in_flight)
        return out


@dataclass(frozen=True, slots=True)
class Message:
    role: str
    content: str
    audio: str | None = None

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")

    def to_dict(self) -> dict[str, Any]:
        out = {"role": self.role, "content": self.content}
        if self.audio is not None:
            out["audio"] = self.audio
        return out

    def to_wire(self) -> dict[str, Any]:
        if self.audio is None:
            return {"role": self.role, "content": self.content}
        return {
            "role": self.role,
            "content": [
                {"type": "text", "text": self.content},
                {"type": "audio_url", "audio_url": {"url": self.audio}},
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Message:
        return cls(data["role"], data["content"], data.get("audio"))


def _canonical(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def _norm_ws(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True, slots=True)
class ChatRequest:
    endpoint: str
    messages: tuple[Message, ...]
    temperature: float = DEFAULT_TEMPERATURE
    seed: int | None = None

    def __post_init__(self) -> None:
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("a chat request needs at least one user message")

    @property
    def digest(self) -> str:
        # Sampling parameters are excluded on purpose.
        payload = {
            "endpoint": self.endpoint,
            "messages": [{"role": m.role, "content": _norm_ws(m.content), "audio": m.audio} for m in self.messages],
        }
        return hashlib.sha256(_canonical(payload)).hexdigest()


@dataclass(frozen=True, slots=True)
class ChatExchange:
    endpoint: str
    digest: str
    messages: tuple[Message, ...]
    temperature: float
    seed: int | None
    response: str
    latency_ms: int
    ok: bool = True
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out = {
            "endpoint": self.endpoint,
            "digest": self.digest,
            "messages": [m.to_dict() for m in self.messages],
            "sampling": {"temperature": self.temperature, "seed": self.seed},
            "response": self.response,
            "latency_ms": self.latency_ms,
            "ok": self.ok,
        }
        if self.error is not None:
            out["error"] = self.error
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ChatExchange:
        sampling = data.get("sampling") or {}
        return cls(
            endpoint=data["endpoint"],
            digest=data["digest"],
            messages=tuple(Message.from_dict(m) for m in data.get("messages") or ()),
            temperature=float(sampling.get("temperature", DEFAULT_TEMPERATURE)),
            seed=sampling.get("seed"),
            response=data.get("response", ""),
            latency_ms=int(data.get("latency_ms", 0)),
            ok=bool(data.get("ok", True)),
            error=data.get("error"),
        )


class ChatClient(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class ToolClient(Protocol):
    def invoke(self, request: ToolRequest) -> ToolResult: ...


def _retrying(profile: BackendProfile, sleep: Callable[[float], None], call: Callable[[], Any]) -> Any:
    attempts = profile.retries + 1
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            return call()
        except httpx.TimeoutException as exc:
            last = BackendTimeout(f"{profile.endpoint_id}: timed out after {profile.timeout_s}s")
            last.__cause__ = exc
        except httpx.HTTPStatusError as exc:
            status = exc.response.status_code
            last = BackendError(f"{profile.endpoint_id}: HTTP {status}")
            last.__cause__ = exc
            if status not in RETRYABLE_STATUS:
                raise last from exc
        except httpx.TransportError as exc:
            last = BackendError(f"{profile.endpoint_id}: transport error {exc}")
            last.__cause__ = exc
        if attempt + 1 < attempts:
            delay = profile.backoff_s * (2**attempt)
            log.warning("%s: attempt %d failed (%s); retrying", profile.endpoint_id, attempt + 1, last)
            sleep(delay)
    assert last is not None
    raise last


class RemoteChatClient:
    def __init__(
        self,
        profile: BackendProfile,
        http: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.profile = profile
        self._http = http or httpx.Client(timeout=profile.timeout_s)
        self._sleep = sleep
        self._gate = threading.BoundedSemaphore(profile.max_in_flight)

    def complete(self, request: ChatRequest) -> str:
        body: dict[str, Any] = {
            "model": self.profile.model or self.profile.endpoint_id,
            "messages": [m.to_wire() for m in request.messages],
            "temperature": request.temperature,
        }
        if request.seed is not None:
            body["seed"] = request.seed

        def call() -> str:
            resp = self._http.post(self.profile.url, json=body, timeout=self.profile.timeout_s)
            resp.raise_for_status()
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"{self.profile.endpoint_id}: malformed completion body") from exc
            if isinstance(content, list):
                content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
            return str(content or "")

        with self._gate:
            return _retrying(self.profile, self._sleep, call)


class FixtureChatClient:
    """Deterministic lookup in ``<dir>/<digest>.json``."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)

    def path_for(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def complete(self, request: ChatRequest) -> str:
        digest = request.digest
        path = self.path_for(digest)
        if not path.is_file():
            raise FixtureMiss(digest, request.endpoint)
        data = json.loads(path.read_text(encoding="utf-8"))
        return data["response"]


def write_chat_fixture(directory: str | Path, request: ChatRequest, response: str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{request.digest}.json"
    payload = {
        "endpoint": request.endpoint,
        "digest": request.digest,
        "messages": [m.to_dict() for m in request.messages],
        "response": response,
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


class ReplayChatClient:
    """Serves recorded exchanges per endpoint in their original order."""

    def __init__(self, exchanges: Iterable[ChatExchange]) -> None:
        self._queues: dict[str, deque[ChatExchange]] = defaultdict(deque)
        for ex in exchanges:
            self._queues[ex.endpoint].append(ex)
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            queue = self._queues.get(request.endpoint)
            if not queue:
                raise ReplayExhausted(f"no recorded exchange left for endpoint {request.endpoint!r}")
            recorded = queue[0]
            if recorded.digest != request.digest:
                raise ReplayDivergence(request.endpoint, recorded.digest, request.digest)
            queue.popleft()
        if not recorded.ok:
            raise BackendError(recorded.error or "recorded failure")
        return recorded.response

    def remaining(self) -> dict[str, int]:
        return {k: len(v) for k, v in self._queues.items() if v}


class RecordedChatClient:
    """Answers by digest from logged exchanges, in any order."""

    def __init__(self, exchanges: Iterable[ChatExchange]) -> None:
        self._by_digest = {e.digest: e for e in exchanges if e.ok}

    def complete(self, request: ChatRequest) -> str:
        found = self._by_digest.get(request.digest)
        if found is None:
            raise FixtureMiss(request.digest, request.endpoint)
        return found.response


class FunctionChatClient:
    """Adapter turning a plain callable into a chat client (tests, simulators)."""

    def __init__(self, fn: Callable[[ChatRequest], str]) -> None:
        self._fn = fn

    def complete(self, request: ChatRequest) -> str:
        return self._fn(request)


class RecordingChatClient:
    """Wraps a client; on every call writes a fixture file for the exchange."""

    def __init__(self, inner: ChatClient, directory: str | Path) -> None:
        self.inner = inner
        self.directory = Path(directory)

    def complete(self, request: ChatRequest) -> str:
        response = self.inner.complete(request)
        write_chat_fixture(self.directory, request, response)
        return response


class ChatSession:
    """Per-sample chat front end that logs every exchange for the debug record."""

    def __init__(
        self,
        client: ChatClient,
        endpoint: str,
        clock: Callable[[], float],
        sink: list[ChatExchange],
        temperature: float = DEFAULT_TEMPERATURE,
        seed: int | None = None,
    ) -> None:
        self.client = client
        self.endpoint = endpoint
        self.clock = clock
        self.sink = sink
        self.temperature = temperature
        self.seed = seed
        self._lock = threading.Lock()

    def ask(self, messages: Sequence[Message]) -> str:
        """Send one request; failures are logged and re-raised as BackendError."""
        request = ChatRequest(self.endpoint, tuple(messages), self.temperature, self.seed)
        started = self.clock()
        try:
            response = self.client.complete(request)
        except BackendError as exc:
            self._record(request, "", started, ok=False, error=str(exc))
            raise
        except Exception as exc:  # noqa: BLE001
            self._record(request, "", started, ok=False, error=f"{type(exc).__name__}: {exc}")
            raise BackendError(str(exc)) from exc
        self._record(request, response, started)
        return response

    def _record(self, request: ChatRequest, response: str, started: float, ok=True, error=None) -> None:
        latency = int(round((self.clock() - started) * 1000))
        ex = ChatExchange(
            request.endpoint,
            request.digest,
            request.messages,
            request.temperature,
            request.seed,
            response,
            latency,
            ok,
            error,
        )
        with self._lock:
            self.sink.append(ex)


# --- tools -------------------------------------------------------------------


def tool_fixture_key(request: ToolRequest, any_range: bool = False) -> str:
    payload = {
        "tool": request.tool,
        "audio": hashlib.sha256(request.audio.encode()).hexdigest()[:16],
        "time_range": "*" if any_range else request.to_dict()["time_range"],
        "params": dict(sorted(request.params.items())),
    }
    return hashlib.sha256(_canonical(payload)).hexdigest()


def result_from_payload(request: ToolRequest, payload: Mapping[str, Any], duration_ms: int = 0) -> ToolResult:
    """Wire body ``{output: {summary, ...}, confidence, relevance?}`` to a ToolResult.

    Capping happens later; ``capped_confidence`` starts equal to the raw value
    and a missing relevance is left negative for the caller to fill in.
    """
    if payload.get("error"):
        return ToolResult.failed(request, str(payload["error"]), duration_ms)
    output = dict(payload.get("output") or {})
    output.setdefault("summary", str(payload.get("summary", "")))
    raw = float(payload.get("confidence", 0.0))
    raw = min(1.0, max(0.0, raw))
    rel = payload.get("relevance")
    return ToolResult(
        request=request,
        output=output,
        raw_confidence=raw,
        capped_confidence=raw,
        relevance=float(rel) if rel is not None else -1.0,
        duration_ms=duration_ms,
    )


class RemoteToolClient:
    def __init__(
        self,
        profile: BackendProfile,
        http: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.profile = profile
        self._http = http or httpx.Client(timeout=profile.timeout_s)
        self._sleep = sleep
        self._clock = clock
        self._gate = threading.BoundedSemaphore(profile.max_in_flight)

    def invoke(self, request: ToolRequest) -> ToolResult:
        body = request.to_dict()
        started = self._clock()

        def call() -> dict[str, Any]:
            resp = self._http.post(self.profile.url, json=body, timeout=self.profile.timeout_s)
            if resp.status_code == 404:
                return {"error": f"unknown tool {request.tool!r} at endpoint"}
            resp.raise_for_status()
            return resp.json()

        try:
            with self._gate:
                payload = _retrying(self.profile, self._sleep, call)
        except BackendError as exc:
            return ToolResult.failed(request, str(exc), int((self._clock() - started) * 1000))
        except ValueError as exc:
            return ToolResult.failed(request, f"malformed tool body: {exc}")
        return result_from_payload(request, payload, int((self._clock() - started) * 1000))


class FixtureToolClient:
    """Results stored as ``<dir>/tools/<key>.json``.

    An exact key (tool, audio digest, time range, params) is tried first, then
    the same key with a wildcard time range.
    """

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory) / "tools"

    def invoke(self, request: ToolRequest) -> ToolResult:
        for any_range in (False, True):
            path = self.directory / f"{tool_fixture_key(request, any_range)}.json"
            if path.is_file():
                payload = json.loads(path.read_text(encoding="utf-8"))
                return result_from_payload(request, payload.get("result", payload))
        return ToolResult.failed(request, f"fixture miss {tool_fixture_key(request)}")


def write_tool_fixture(
    directory: str | Path, request: ToolRequest, payload: Mapping[str, Any], any_range: bool = False
) -> Path:
    target = Path(directory) / "tools"
    target.mkdir(parents=True, exist_ok=True)
    path = target / f"{tool_fixture_key(request, any_range)}.json"
    body = {"request": request.to_dict(), "result": dict(payload)}
    path.write_text(json.dumps(body, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


class ReplayToolClient:
    """Returns recorded tool results keyed by request digest."""

    def __init__(self, results: Iterable[ToolResult]) -> None:
        self._by_digest: dict[str, deque[ToolResult]] = defaultdict(deque)
        for r in results:
            self._by_digest[r.request.digest].append(r)

    def invoke(self, request: ToolRequest) -> ToolResult:
        queue = self._by_digest.get(request.digest)
        if not queue:
            return ToolResult.failed(request, f"replay has no result for {request.digest}")
        return queue.popleft()


class FunctionToolClient:
    def __init__(self, fn: Callable[[ToolRequest], Mapping[str, Any] | ToolResult]) -> None:
        self._fn = fn

    def invoke(self, request: ToolRequest) -> ToolResult:
        out = self._fn(request)
        if isinstance(out, ToolResult):
            return out
        return result_from_payload(request, out)


class RecordingToolClient:
    def __init__(self, inner: ToolClient, directory: str | Path) -> None:
        self.inner = inner
        self.directory = directory

    def invoke(self, request: ToolRequest) -> ToolResult:
        result = self.inner.invoke(request)
        payload: dict[str, Any]
        if result.ok:
            payload = {"output": dict(result.output), "confidence": result.raw_confidence}
            if result.relevance >= 0:
                payload["relevance"] = result.relevance
        else:
            payload = {"error": result.error or "failed"}
        write_tool_fixture(self.directory, request, payload)
        return result


@dataclass
class ReplaySource:
    """Exchanges and tool results pulled from pipeline records."""

    exchanges: list[ChatExchange] = field(default_factory=list)
    tool_results: list[ToolResult] = field(default_factory=list)


def chat_client_for(profile: BackendProfile, replay: ReplaySource | None = None) -> ChatClient:
    if profile.kind is BackendKind.REMOTE_HTTP:
        return RemoteChatClient(profile)
    if profile.kind is BackendKind.FIXTURE:
        return FixtureChatClient(profile.fixture_path)
    return ReplayChatClient(
        [e for e in (replay or _load_replay(profile.fixture_path)).exchanges if e.endpoint == profile.endpoint_id]
    )


def tool_client_for(profile: BackendProfile, replay: ReplaySource | None = None) -> ToolClient:
    if profile.kind is BackendKind.REMOTE_HTTP:
        return RemoteToolClient(profile)
    if profile.kind is BackendKind.FIXTURE:
        return FixtureToolClient(profile.fixture_path)
    return ReplayToolClient((replay or _load_replay(profile.fixture_path)).tool_results)


def chat_complete(profile: BackendProfile, request: ChatRequest) -> str:
    return chat_client_for(profile).complete(request)


def tool_invoke(profile: BackendProfile, request: ToolRequest) -> ToolResult:
    return tool_client_for(profile).invoke(request)


def _load_replay(path: str | Path | None) -> ReplaySource:
    from .records import read_records

    source = ReplaySource()
    for rec in read_records(path):
        source.exchanges.extend(rec.exchanges)
        source.tool_results.extend(rec.all_tool_results())
    return source
