"""Minimal chat-completion client shared by the remote forecaster and policy."""
from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass

import httpx

log = logging.getLogger(__name__)

ENV_URL = "ITCMA_LLM_URL"
ENV_MODEL = "ITCMA_LLM_MODEL"
ENV_KEY = "ITCMA_LLM_KEY"
DEFAULT_TIMEOUT = 30.0


class ChatError(RuntimeError):
    """The endpoint could not produce a completion."""


@dataclass(frozen=True)
class ChatConfig:
    base_url: str
    model: str = "default"
    api_key: str | None = None
    timeout: float = DEFAULT_TIMEOUT
    retries: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, timeout: float = DEFAULT_TIMEOUT) -> "ChatConfig":
        url = os.environ.get(ENV_URL)
        if not url:
            raise ChatError(f"{ENV_URL} is not set")
        return cls(
            base_url=url,
            model=os.environ.get(ENV_MODEL, "default"),
            api_key=os.environ.get(ENV_KEY),
            timeout=timeout,
        )


class ChatClient:
    """POSTs ``{base_url}/chat/completions``; retries 5xx and transport errors.

    A request is attempted ``1 + retries`` times with exponential backoff.
    At most ``max_in_flight`` requests run concurrently per client.
    """

    def __init__(self, config: ChatConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._http = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def close(self) -> None:
        self._http.close()

    def complete(self, messages: list[dict], temperature: float = 0.0) -> str:
        payload = {"model": self.config.model, "messages": messages, "temperature": temperature}
        last: Exception | None = None
        with self._slots:
            for attempt in range(self.config.retries + 1):
                if attempt:
                    time.sleep(self.config.backoff * 2 ** (attempt - 1))
                try:
                    resp = self._http.post("/chat/completions", json=payload)
                except httpx.HTTPError as exc:
                    last = exc
                    log.warning("chat request failed (attempt %d): %s", attempt + 1, exc)
                    continue
                if resp.status_code >= 500:
                    last = ChatError(f"HTTP {resp.status_code}")
                    log.warning("chat endpoint returned %d (attempt %d)", resp.status_code, attempt + 1)
                    continue
                if resp.status_code >= 400:
                    raise ChatError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise ChatError(f"malformed completion body: {exc}") from exc
        raise ChatError(f"gave up after {self.config.retries + 1} attempts: {last}")
