"""LLM integration for mgdbg.

Every model call goes through a Gateway, which renders a template, sends it
to a Backend and keeps a PromptRecord of the exchange. Backends:

- LiveHTTPBackend: OpenAI-compatible ``/chat/completions`` over requests,
  retrying refused connections and 429/5xx replies with backoff.
- ReplayBackend: answers only from a recorded JSON-lines cache.
- ScriptedStub: answers from a list of replies or a responder function.

Any backend given a ``cache_path`` (except replay) appends its exchanges to
that file, which a later ReplayBackend can serve offline.
"""

import json
import logging
import re
import threading
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, TypeVar, Union

import requests
from requests.adapters import HTTPAdapter, Retry
from markdown_it import MarkdownIt

from mgdbg.errors import (
    ConfigError,
    FormatError,
    LLMTimeout,
    NoCodeBlock,
    ReplayMiss,
    ScriptExhausted,
    TransportError,
)
from mgdbg.llm.prompts import TEMPLATE_IDS, render_prompt
from mgdbg.utils import digest

logger = logging.getLogger(__name__)

T = TypeVar("T")

BACKEND_KINDS = ("live_http", "replay_cache", "scripted_stub")
RETRY_STATUSES = (429, 500, 502, 503, 504)


@dataclass(frozen=True)
class LLMConfig:
    endpoint: str = "http://localhost:8000/v1"
    model_id: str = "deepseek-coder-v2-lite-instruct"
    temperature: float = 0.8
    max_tokens: int = 2048
    request_timeout: float = 120.0
    max_format_retries: int = 3
    max_retries: int = 2
    retry_backoff: float = 0.5
    api_key: str = field(default="", repr=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError(f"temperature must be within [0, 2], got {self.temperature}")
        if self.max_tokens <= 0:
            raise ConfigError("max_tokens must be positive")
        if self.max_format_retries <= 0:
            raise ConfigError("max_format_retries must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must not be negative")

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "LLMConfig":
        return cls(
            endpoint=section.get("endpoint", cls.endpoint),
            model_id=section.get("model", cls.model_id),
            temperature=float(section.get("temperature", cls.temperature)),
            max_tokens=int(section.get("max_tokens", cls.max_tokens)),
            request_timeout=float(section.get("request_timeout", cls.request_timeout)),
            max_format_retries=int(section.get("max_format_retries", cls.max_format_retries)),
            max_retries=int(section.get("max_retries", cls.max_retries)),
            retry_backoff=float(section.get("retry_backoff", cls.retry_backoff)),
            api_key=section.get("api_key", ""),
        )


def prompt_hash(
    template_id: str, system: str, user: str, model_id: str, temperature: float
) -> str:
    return digest(template_id, system, user, model_id, round(float(temperature), 4))


@dataclass(frozen=True)
class PromptRecord:
    template_id: str
    rendered_system: str
    rendered_user: str
    response: str
    content_hash: str
    model_id: str = ""
    temperature: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PromptRecord":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


class Backend:
    """Base class for model backends."""

    kind = ""

    def __init__(self, cache_path: Optional[Union[str, Path]] = None) -> None:
        self.cache_path = Path(cache_path) if cache_path else None
        self._lock = threading.Lock()

    def respond(self, cfg: LLMConfig, template_id: str, system: str, user: str) -> str:
        """Return the raw assistant text. To be implemented by subclasses."""
        raise NotImplementedError("Subclasses must implement respond")

    def record(self, record: PromptRecord) -> None:
        if self.cache_path is None:
            return
        with self._lock:
            self.cache_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.cache_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


class LiveHTTPBackend(Backend):
    """OpenAI-compatible chat-completions endpoint."""

    kind = "live_http"

    def __init__(
        self,
        cache_path: Optional[Union[str, Path]] = None,
        max_retries: int = 2,
        retry_backoff: float = 0.5,
    ) -> None:
        super().__init__(cache_path)
        self.session = requests.Session()
        retry = Retry(
            total=max_retries,
            backoff_factor=retry_backoff,
            status_forcelist=RETRY_STATUSES,
            allowed_methods=frozenset({"POST"}),
            raise_on_status=False,
        )
        adapter = HTTPAdapter(max_retries=retry)
        self.session.mount("http://", adapter)
        self.session.mount("https://", adapter)

    def respond(self, cfg: LLMConfig, template_id: str, system: str, user: str) -> str:
        url = f"{cfg.endpoint.rstrip('/')}/chat/completions"
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        messages = [{"role": "system", "content": system}] if system else []
        messages.append({"role": "user", "content": user})
        payload = {
            "model": cfg.model_id,
            "messages": messages,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }

        try:
            response = self.session.post(
                url, json=payload, headers=headers, timeout=cfg.request_timeout
            )
        except requests.Timeout as e:
            raise LLMTimeout(f"no reply from {url} within {cfg.request_timeout}s") from e
        except requests.RequestException as e:
            raise TransportError(f"request to {url} failed: {e}") from e

        if response.status_code == 401:
            raise TransportError("invalid API key (HTTP 401); set MGDBG_API_KEY")
        if response.status_code == 429:
            raise TransportError("rate limit exceeded (HTTP 429)")
        if response.status_code != 200:
            raise TransportError(f"HTTP {response.status_code} from {url}: {response.text[:200]}")

        try:
            data = response.json()
            return data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise TransportError(f"unexpected response body from {url}") from e


class ReplayBackend(Backend):
    """Serves recorded responses; never touches the network."""

    kind = "replay_cache"

    def __init__(self, cache_path: Union[str, Path]) -> None:
        super().__init__(None)
        self.source_path = Path(cache_path)
        self._responses: Dict[str, List[str]] = defaultdict(list)
        self._cursor: Dict[str, int] = defaultdict(int)
        if self.source_path.exists():
            with open(self.source_path, "r", encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        record = PromptRecord.from_dict(json.loads(line))
                        self._responses[record.content_hash].append(record.response)
        else:
            logger.warning("replay cache %s does not exist", self.source_path)

    def __len__(self) -> int:
        return sum(len(v) for v in self._responses.values())

    def respond(self, cfg: LLMConfig, template_id: str, system: str, user: str) -> str:
        key = prompt_hash(template_id, system, user, cfg.model_id, cfg.temperature)
        with self._lock:
            stored = self._responses.get(key)
            if not stored:
                raise ReplayMiss(key)
            # Repeated identical prompts replay in recording order.
            index = min(self._cursor[key], len(stored) - 1)
            self._cursor[key] += 1
            return stored[index]


Responder = Callable[[str, str, str], str]


class ScriptedStub(Backend):
    """Test double: a fixed list of replies, or a function of the prompt."""

    kind = "scripted_stub"

    def __init__(
        self,
        script: Union[Sequence[str], Responder],
        cache_path: Optional[Union[str, Path]] = None,
    ) -> None:
        super().__init__(cache_path)
        self._responder = script if callable(script) else None
        self._script = list(script) if not callable(script) else []
        self._position = 0

    def respond(self, cfg: LLMConfig, template_id: str, system: str, user: str) -> str:
        if self._responder is not None:
            return self._responder(template_id, system, user)
        with self._lock:
            if self._position >= len(self._script):
                raise ScriptExhausted(f"script of {len(self._script)} replies exhausted")
            reply = self._script[self._position]
            self._position += 1
            return reply


def complete(
    cfg: LLMConfig, backend: Backend, system: str, user: str, template_id: str = "debug"
) -> PromptRecord:
    """One model call, recorded to the backend cache when it has one."""
    response = backend.respond(cfg, template_id, system, user)
    record = PromptRecord(
        template_id=template_id,
        rendered_system=system,
        rendered_user=user,
        response=response,
        content_hash=prompt_hash(template_id, system, user, cfg.model_id, cfg.temperature),
        model_id=cfg.model_id,
        temperature=cfg.temperature,
    )
    backend.record(record)
    return record


class Gateway:
    """Front door to one backend for one debugging session.

    Holds the audit trail of every exchange made through it, and the
    messages of requests the backend could not deliver.
    """

    def __init__(self, cfg: LLMConfig, backend: Backend) -> None:
        self.cfg = cfg
        self.backend = backend
        self.records: List[PromptRecord] = []
        self.backend_errors: List[str] = []

    def complete(self, template_id: str, system: str, user: str) -> str:
        if template_id not in TEMPLATE_IDS:
            raise ValueError(f"unknown template id {template_id!r}")
        try:
            record = complete(self.cfg, self.backend, system, user, template_id)
        except (TransportError, LLMTimeout) as e:
            self.backend_errors.append(str(e))
            raise
        self.records.append(record)
        return record.response

    def ask(self, template_id: str, slots: Mapping[str, str], parse: Callable[[str], T]) -> T:
        """Render, send and parse, re-sending the same prompt on FormatError."""
        system, user = render_prompt(template_id, slots)
        error: Optional[FormatError] = None
        for attempt in range(1, self.cfg.max_format_retries + 1):
            reply = self.complete(template_id, system, user)
            try:
                return parse(reply)
            except FormatError as e:
                error = e
                logger.debug("%s reply unusable (try %d): %s", template_id, attempt, e)
        assert error is not None
        raise error

    def census(self) -> Dict[str, int]:
        counts: Dict[str, int] = defaultdict(int)
        for record in self.records:
            counts[record.template_id] += 1
        return dict(counts)


def make_backend(
    kind: str,
    cache_path: Optional[Union[str, Path]] = None,
    script: Any = None,
    cfg: Optional[LLMConfig] = None,
) -> Backend:
    """Build a backend from a CLI-style kind name (live, replay, stub).

    `cfg` supplies the retry settings of the live backend.
    """
    kind = {"live": "live_http", "replay": "replay_cache", "stub": "scripted_stub"}.get(kind, kind)
    if kind == "live_http":
        cfg = cfg or LLMConfig()
        return LiveHTTPBackend(cache_path, cfg.max_retries, cfg.retry_backoff)
    if kind == "replay_cache":
        if cache_path is None:
            raise ConfigError("the replay backend needs a cache file")
        return ReplayBackend(cache_path)
    if kind == "scripted_stub":
        return ScriptedStub(script if script is not None else [], cache_path)
    raise ConfigError(f"unknown backend {kind!r}; expected one of {', '.join(BACKEND_KINDS)}")


_markdown = MarkdownIt("commonmark")
_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def extract_code_block(reply: str) -> str:
    """Contents of the last fenced code block in `reply`."""
    blocks = [
        token.content
        for token in _markdown.parse(reply)
        if token.type == "fence" and token.content.strip()
    ]
    if not blocks:
        # Fences opened mid-line are not markdown fences but models write them.
        blocks = _FENCE_RE.findall(reply)
    if not blocks:
        raise NoCodeBlock("reply contains no fenced code block")
    return blocks[-1].strip("\n")


def text_before_last_block(reply: str) -> str:
    head, sep, _ = reply.rpartition("```")
    if not sep:
        return reply.strip()
    head, sep, _ = head.rpartition("```")
    return head.strip() if sep else reply.strip()
