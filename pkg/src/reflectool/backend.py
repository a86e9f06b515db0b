"""Generation backends: the HTTP chat-completions client and the scripted
deterministic playback used for tests and offline runs."""

from __future__ import annotations

import json
import logging
import os
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from reflectool.errors import BackendError, FormatError

logger = logging.getLogger(__name__)

API_KEY_ENV = "REFLECTOOL_API_KEY"

# Policy and verifier calls run greedy; candidate sampling needs diversity.
DEFAULT_TEMPERATURE = 0.0
CANDIDATE_TEMPERATURE = 0.7


@dataclass(frozen=True)
class GenerationRequest:
    """One invocation of the generation policy.

    ``role`` labels the purpose of the call (policy, reflect, suggest, merge,
    verify, sql); the scripted backend uses it to select its reply stream and
    networked backends ignore it.
    """

    system_prompt: str
    user_prompt: str
    role: str = "policy"
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = 1024
    n_samples: int = 1


class Backend(ABC):
    """Contract every generation backend satisfies."""

    #: whether one instance may serve concurrent task runs
    supports_concurrency: bool = True

    @abstractmethod
    def generate(self, req: GenerationRequest) -> str:
        """Return one completion."""

    @abstractmethod
    def sample(self, req: GenerationRequest, n: int) -> list[str]:
        """Return exactly ``n`` completions, order preserved."""


@dataclass
class ScriptEntry:
    """One authored reply in a playback script.

    ``require`` lists substrings that must appear in the prompt for the entry
    to play; a miss consumes the entry and raises, so scripts can assert that
    retrieved demonstrations or experience text actually reached the prompt.
    """

    match_tag: str
    sequence_index: int
    replies: list[str]
    require: tuple[str, ...] = ()


def load_script(path: str | Path) -> list[ScriptEntry]:
    """Read a JSON list of script entries; FormatError on schema violations."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read script {path}: {exc}") from exc
    if not isinstance(data, list):
        raise FormatError(f"script {path} must be a JSON list")
    entries = []
    for i, raw in enumerate(data):
        try:
            entry = ScriptEntry(
                match_tag=str(raw["match_tag"]),
                sequence_index=int(raw.get("sequence_index", i)),
                replies=[str(r) for r in raw["replies"]],
                require=tuple(str(s) for s in raw.get("require", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"script {path} entry {i}: {exc}") from exc
        if not entry.replies:
            raise FormatError(f"script {path} entry {i}: replies must be non-empty")
        entries.append(entry)
    return entries


class ScriptedBackend(Backend):
    """Replays authored entries strictly in order within each role stream.

    A pure function of (script, call sequence): two runs with the same script
    and call order produce byte-identical outputs. The cursor is mutable, so
    use one instance per run.
    """

    supports_concurrency = False

    def __init__(self, entries: list[ScriptEntry]):
        self._streams: dict[str, list[ScriptEntry]] = {}
        for entry in sorted(entries, key=lambda e: e.sequence_index):
            self._streams.setdefault(entry.match_tag, []).append(entry)
        self._cursors: dict[str, int] = {tag: 0 for tag in self._streams}
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        return cls(load_script(path))

    def _next_entry(self, req: GenerationRequest) -> ScriptEntry:
        self.calls.append(req.role)
        stream = self._streams.get(req.role)
        if stream is None:
            raise BackendError(f"no script entries for role {req.role!r}")
        cursor = self._cursors[req.role]
        if cursor >= len(stream):
            raise BackendError(f"script exhausted for role {req.role!r}")
        entry = stream[cursor]
        self._cursors[req.role] = cursor + 1
        prompt = req.system_prompt + "\n" + req.user_prompt
        for needle in entry.require:
            if needle not in prompt:
                raise BackendError(
                    f"script requirement not met for role {req.role!r}: "
                    f"{needle!r} absent from prompt"
                )
        return entry

    def generate(self, req: GenerationRequest) -> str:
        return self._next_entry(req).replies[0]

    def sample(self, req: GenerationRequest, n: int) -> list[str]:
        if n < 1:
            raise ValueError("n must be >= 1")
        entry = self._next_entry(req)
        if req.temperature == 0:
            return [entry.replies[0]] * n
        return [entry.replies[i % len(entry.replies)] for i in range(n)]


@dataclass
class HttpBackend(Backend):
    """OpenAI-compatible chat-completions client.

    POSTs ``{base_url}/v1/chat/completions``; transient failures (network,
    429, 5xx) are retried up to ``max_retries`` times with exponential
    backoff starting at ``backoff_base`` seconds.
    """

    base_url: str
    model: str = "default"
    api_key: str | None = None
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    seed: int | None = None
    _client: httpx.Client = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.base_url = self.base_url.rstrip("/")
        if self.api_key is None:
            self.api_key = os.environ.get(API_KEY_ENV)
        self._client = httpx.Client(timeout=self.timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, req: GenerationRequest, n: int) -> list[str]:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "n": n,
        }
        if self.seed is not None:
            payload["seed"] = self.seed
        url = f"{self.base_url}/v1/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(url, headers=self._headers(), json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
            else:
                if resp.status_code == 200:
                    return self._extract(resp)
                if resp.status_code in (429,) or resp.status_code >= 500:
                    last_error = BackendError(
                        f"transient HTTP {resp.status_code}: {resp.text[:200]}"
                    )
                else:
                    raise BackendError(
                        f"HTTP {resp.status_code}: {resp.text[:200]}"
                    )
            if attempt < self.max_retries:
                delay = self.backoff_base * (2**attempt)
                logger.warning(
                    "retrying chat completion (attempt %d/%d) after %.2fs: %s",
                    attempt + 1,
                    self.max_retries,
                    delay,
                    last_error,
                )
                time.sleep(delay)
        raise BackendError(f"chat completion failed after retries: {last_error}")

    @staticmethod
    def _extract(resp: httpx.Response) -> list[str]:
        try:
            body = resp.json()
            return [choice["message"]["content"] for choice in body["choices"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc

    def generate(self, req: GenerationRequest) -> str:
        return self._post(req, 1)[0]

    def sample(self, req: GenerationRequest, n: int) -> list[str]:
        if n < 1:
            raise ValueError("n must be >= 1")
        texts = self._post(req, n)
        # Servers that ignore `n` return a single choice; top up one by one.
        while len(texts) < n:
            texts.extend(self._post(req, 1))
        return texts[:n]
