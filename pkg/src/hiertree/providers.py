"""Chat-completion providers behind a common interface.

A provider turns one rendered prompt into one text completion. The gateway
handles caching, templates, and parsing; providers only do transport.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx

from .errors import CacheMiss, ProviderUnavailable, SchemaMismatch, Transport

API_URL_ENV = "HIERTREE_API_URL"
API_KEY_ENV = "HIERTREE_API_KEY"


@dataclass(frozen=True)
class ProviderRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 512
    system: str = ""
    # Structured context (request kind, class list, summary). Scripted test
    # providers key off it; network providers ignore it.
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    provider_id: str


class DescriptionProvider(Protocol):
    provider_id: str

    def complete(self, request: ProviderRequest) -> ProviderResponse: ...


class HttpChatProvider:
    """OpenAI-style chat-completion client.

    POSTs {model, messages, temperature, max_tokens} with bearer auth and
    retries transport failures with exponential backoff.
    """

    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        model: str = "gpt-3.5-turbo",
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.url = url or os.environ.get(API_URL_ENV, "")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        if not self.url:
            raise ProviderUnavailable(
                f"no chat endpoint configured (flag/config or {API_URL_ENV})"
            )
        self.model = model
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.provider_id = f"http:{self.model}"
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.prompt})
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = self._client.post(self.url, json=body)
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = Transport(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProviderUnavailable(
                    f"chat endpoint returned {resp.status_code}: {resp.text[:200]}"
                )
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise SchemaMismatch(f"unexpected chat response shape: {exc}") from exc
            return ProviderResponse(text=text, provider_id=self.provider_id)
        raise Transport(f"chat endpoint unreachable after {self.max_attempts} attempts: {last_error}")


class ScriptedProvider:
    """Deterministic in-memory provider for tests and offline pipelines.

    `respond` is either a callable mapping a request to the response text, a
    dict keyed by exact prompt, or a list consumed in order.
    """

    def __init__(self, respond: Callable[[ProviderRequest], str] | dict[str, str] | list[str]):
        self._respond = respond
        self._queue_pos = 0
        self.calls: list[ProviderRequest] = []
        self.provider_id = "scripted"

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        self.calls.append(request)
        if callable(self._respond):
            text = self._respond(request)
        elif isinstance(self._respond, dict):
            try:
                text = self._respond[request.prompt]
            except KeyError:
                raise ProviderUnavailable(f"no scripted response for prompt: {request.prompt[:80]!r}")
        else:
            if self._queue_pos >= len(self._respond):
                raise ProviderUnavailable("scripted response queue exhausted")
            text = self._respond[self._queue_pos]
            self._queue_pos += 1
        return ProviderResponse(text=text, provider_id=self.provider_id)


class ReplayProvider:
    """Provider that only ever serves recorded fixtures.

    The gateway satisfies requests from its fixture/cache layers before asking
    the provider, so reaching this method means the recording is missing. It
    performs no network activity by construction.
    """

    provider_id = "replay"

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        raise CacheMiss(
            "replay mode has no recorded response for this prompt "
            f"(kind={request.meta.get('kind')!r})"
        )
