"""Completion provider contract plus the implementations shipped in-repo.

A provider is anything with ``complete(request) -> str``. The engine never
requires one: without a provider, semantic re-anchoring and LM-backed
annotation types report "provider unavailable" while everything else keeps
working.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Any, Callable, Protocol, runtime_checkable

from .model import AnchorContext

ENDPOINT_ENV = "CODETATIONS_PROVIDER_ENDPOINT"
KEY_ENV = "CODETATIONS_PROVIDER_KEY"


class ProviderError(RuntimeError):
    """Transport or protocol failure while talking to a provider."""


@dataclass(frozen=True)
class CompletionRequest:
    instructions: str
    document: str = ""
    anchor_context: AnchorContext | None = None


@runtime_checkable
class CompletionProvider(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


class ScriptedProvider:
    """Deterministic provider for tests: replies from a fixed queue, or from a
    callable computed per request."""

    def __init__(self, replies: list[str] | Callable[[CompletionRequest], str]):
        self._replies = replies
        self._calls: list[CompletionRequest] = []

    @property
    def calls(self) -> list[CompletionRequest]:
        return self._calls

    def complete(self, request: CompletionRequest) -> str:
        self._calls.append(request)
        if callable(self._replies):
            return self._replies(request)
        if not self._replies:
            raise ProviderError("scripted provider ran out of replies")
        return self._replies.pop(0)


class MockProvider:
    """Offline stand-in usable from the CLI: echoes the cached anchor text for
    re-anchoring requests and answers YES to yes/no questions."""

    def complete(self, request: CompletionRequest) -> str:
        if request.instructions.startswith("Answer YES or NO"):
            return "YES"
        if request.anchor_context is not None:
            return request.anchor_context.anchor_text
        return ""


class HttpProvider:
    """Adapter for a real completion endpoint.

    POSTs ``{"instructions", "document", "anchorContext"}`` as JSON and
    expects either a raw text body or ``{"text": ...}`` back.
    """

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 30.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, request: CompletionRequest) -> str:
        payload: dict[str, Any] = {
            "instructions": request.instructions,
            "document": request.document,
        }
        if request.anchor_context is not None:
            payload["anchorContext"] = {
                "anchorText": request.anchor_context.anchor_text,
                "prefix": request.anchor_context.prefix,
                "suffix": request.anchor_context.suffix,
            }
        req = urllib.request.Request(
            self.endpoint,
            data=json.dumps(payload).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        if self.api_key:
            req.add_header("Authorization", f"Bearer {self.api_key}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read().decode("utf-8")
        except (urllib.error.URLError, OSError) as exc:
            raise ProviderError(f"provider endpoint unreachable: {exc}") from exc
        try:
            parsed = json.loads(body)
        except json.JSONDecodeError:
            return body
        if isinstance(parsed, dict) and isinstance(parsed.get("text"), str):
            return parsed["text"]
        return body


def resolve_provider(name: str | None, settings: dict[str, Any] | None = None) -> CompletionProvider | None:
    """Pick a provider from an explicit name, config settings, or environment.

    ``name`` may be "none", "mock", or "http". With no name, an HTTP provider
    is built when an endpoint is configured (settings or environment);
    otherwise the engine runs provider-less.
    """
    settings = settings or {}
    endpoint = settings.get("endpoint") or os.environ.get(ENDPOINT_ENV)
    api_key = settings.get("key") or os.environ.get(KEY_ENV)
    if name is None:
        name = settings.get("provider")
    if name in (None, ""):
        return HttpProvider(endpoint, api_key) if endpoint else None
    if name == "none":
        return None
    if name == "mock":
        return MockProvider()
    if name == "http":
        if not endpoint:
            raise ValueError(
                f"http provider requires an endpoint ({ENDPOINT_ENV} or config)"
            )
        return HttpProvider(endpoint, api_key)
    raise ValueError(f"unknown provider {name!r}")
