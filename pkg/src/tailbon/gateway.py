"""Sampler backed by HTTP generation and reward-scoring services.

Generation speaks the chat-completions dialect (``POST {gen_base_url}/chat/completions``);
scoring is ``POST {reward_base_url}/score`` with ``{"prompt", "response"}``
returning ``{"reward": <number>}``. Every outbound request, failed or not,
is appended to a JSONL transcript.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import urlparse

import httpx
import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_TOKEN_ENV = "TAILBON_AUTH_TOKEN"


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class MalformedResponseError(GatewayError):
    pass


def _check_url(url: str) -> None:
    parts = urlparse(url)
    if parts.scheme not in ("http", "https") or not parts.netloc:
        raise ValueError(f"not a usable http(s) URL: {url!r}")


@dataclass(frozen=True)
class GatewayConfig:
    gen_base_url: str
    reward_base_url: str
    gen_model: str = "default"
    reward_model: str = ""
    max_state_tokens: int = 100
    max_response_tokens: int = 2048
    temperature: float = 1.0
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_concurrency: int = 4
    auth_token_env: str = field(default_factory=lambda: os.environ.get("TAILBON_AUTH_TOKEN_VAR", DEFAULT_TOKEN_ENV))
    transcript_path: Optional[str] = None

    def __post_init__(self):
        _check_url(self.gen_base_url)
        _check_url(self.reward_base_url)
        if self.max_state_tokens < 1:
            raise ValueError("max_state_tokens must be >= 1")
        if self.max_retries < 0 or self.max_concurrency < 1:
            raise ValueError("max_retries must be >= 0 and max_concurrency >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "GatewayConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown gateway config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TranscriptRecord:
    kind: str
    request_id: str
    prompt: str
    state: str = ""
    response: str = ""
    reward: Optional[float] = None
    started: float = 0.0
    finished: float = 0.0
    attempts: int = 0
    error: Optional[str] = None


class TranscriptStore:
    """Append-only JSONL file; in-memory only when ``path`` is None."""

    def __init__(self, path: Optional[str | Path] = None):
        self.path = Path(path) if path else None
        self.records: list[TranscriptRecord] = []
        self._lock = threading.Lock()

    def append(self, record: TranscriptRecord) -> None:
        if record.reward is not None and not math.isfinite(record.reward):
            raise ValueError("transcript rewards must be finite")
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(asdict(record)) + "\n")


@dataclass(frozen=True)
class GatewayState:
    id: int
    prompt: str
    text: str


def truncate_tokens(text: str, cap: int) -> str:
    """Whitespace-token truncation, used when the backend reports no token counts."""
    tokens = text.split()
    return text if len(tokens) <= cap else " ".join(tokens[:cap])


class GatewaySampler:
    """Spawns states and draws scored responses over HTTP.

    ``client`` may be any ``httpx.Client``; tests pass one built on
    ``httpx.MockTransport``. ``sleep`` is the backoff clock.
    """

    def __init__(self, config: GatewayConfig, *, prompt: Optional[str] = None,
                 client: Optional[httpx.Client] = None, sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.prompt = prompt
        token = os.environ.get(config.auth_token_env)
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.client = client or httpx.Client(timeout=config.timeout)
        self._headers = headers
        self._sleep = sleep
        self.transcript = TranscriptStore(config.transcript_path)
        self._lock = threading.Lock()
        self._req = 0
        self._states = 0
        self.generation_calls = 0
        self.scoring_calls = 0

    # -- plumbing ---------------------------------------------------------

    def _request_id(self) -> str:
        with self._lock:
            self._req += 1
            return f"req-{self._req:06d}"

    def _post(self, url: str, payload: dict, record: TranscriptRecord) -> dict:
        """POST with retries on transport errors, 429 and 5xx; records every attempt's outcome."""
        record.started = time.time()
        attempts = 0
        last = ""
        try:
            while True:
                attempts += 1
                try:
                    resp = self.client.post(url, json=payload, headers={**self._headers, "X-Request-Id": record.request_id})
                    if resp.status_code == 429 or resp.status_code >= 500:
                        last = f"HTTP {resp.status_code}"
                    elif resp.status_code >= 400:
                        raise GatewayError(f"{url} rejected the request: HTTP {resp.status_code}")
                    else:
                        try:
                            return resp.json()
                        except ValueError as exc:
                            raise MalformedResponseError(f"{url} returned non-JSON body") from exc
                except httpx.TransportError as exc:
                    last = f"{type(exc).__name__}: {exc}"
                if attempts > self.config.max_retries:
                    raise TransportError(f"{url} failed after {attempts} attempts ({last})", attempts)
                delay = self.config.backoff_base * 2 ** (attempts - 1)
                logger.warning("request %s failed (%s); retrying in %.2fs", record.request_id, last, delay)
                self._sleep(delay)
        finally:
            record.attempts = attempts
            record.finished = time.time()

    @contextmanager
    def _recorded(self, record: TranscriptRecord):
        """Persist ``record`` once the caller has filled it in, failures included."""
        try:
            yield record
        except Exception as exc:
            record.error = f"{type(exc).__name__}: {exc}"
            raise
        finally:
            self.transcript.append(record)

    def _generate(self, messages: list[dict], max_tokens: int, record: TranscriptRecord) -> tuple[str, Optional[int]]:
        with self._lock:
            self.generation_calls += 1
        payload = {"model": self.config.gen_model, "messages": messages,
                   "max_tokens": max_tokens, "temperature": self.config.temperature}
        body = self._post(self.config.gen_base_url.rstrip("/") + "/chat/completions", payload, record)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError("generation response lacks choices[0].message.content") from exc
        if not isinstance(text, str):
            raise MalformedResponseError("generation content is not a string")
        usage = body.get("usage") if isinstance(body, dict) else None
        used = usage.get("completion_tokens") if isinstance(usage, dict) else None
        return text, used

    def _score(self, prompt: str, response: str, record: TranscriptRecord) -> float:
        with self._lock:
            self.scoring_calls += 1
        body = self._post(self.config.reward_base_url.rstrip("/") + "/score",
                          {"prompt": prompt, "response": response}, record)
        reward = body.get("reward") if isinstance(body, dict) else None
        if isinstance(reward, bool) or not isinstance(reward, (int, float)) or not math.isfinite(reward):
            raise MalformedResponseError(f"scoring response has no finite numeric 'reward': {body!r}")
        return float(reward)

    # -- sampler interface ------------------------------------------------

    def spawn_state(self, prompt: Optional[str] = None) -> GatewayState:
        prompt = prompt if prompt is not None else self.prompt
        if not prompt:
            raise ValueError("spawn_state needs a non-empty prompt")
        with self._recorded(TranscriptRecord("state", self._request_id(), prompt)) as record:
            text, used = self._generate([{"role": "user", "content": prompt}], self.config.max_state_tokens, record)
            if used is None or used > self.config.max_state_tokens:
                text = truncate_tokens(text, self.config.max_state_tokens)
            record.state = text
        with self._lock:
            sid = self._states
            self._states += 1
        return GatewayState(sid, prompt, text)

    def draw_reward(self, state: GatewayState) -> float:
        messages = [{"role": "user", "content": state.prompt}, {"role": "assistant", "content": state.text}]
        with self._recorded(TranscriptRecord("response", self._request_id(), state.prompt, state=state.text)) as gen:
            continuation, _ = self._generate(messages, self.config.max_response_tokens, gen)
            gen.response = response = state.text + continuation
        score = TranscriptRecord("score", self._request_id(), state.prompt, state=state.text, response=response)
        with self._recorded(score):
            score.reward = self._score(state.prompt, response, score)
        return score.reward

    def draw_rewards(self, state: GatewayState, n: int) -> np.ndarray:
        """``n`` independent draws with up to ``max_concurrency`` in flight; results in call order."""
        if self.config.max_concurrency == 1 or n == 1:
            return np.array([self.draw_reward(state) for _ in range(n)])
        with ThreadPoolExecutor(self.config.max_concurrency) as pool:
            return np.array(list(pool.map(lambda _: self.draw_reward(state), range(n))))

    def close(self) -> None:
        self.client.close()
