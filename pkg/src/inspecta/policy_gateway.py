"""Policy model access: an OpenAI-compatible HTTP client and a scripted mock.

Both expose a single ``complete(request) -> PolicyResponse`` method so the
orchestrator never knows which one it is talking to. The HTTP client handles
credential sourcing from the environment, bounded concurrency, retry with
exponential backoff for transient failures, and token logprob extraction for
answer-confidence margins.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field

import requests

log = logging.getLogger(__name__)

ENV_ENDPOINT = "INSPECTA_ENDPOINT"
ENV_MODEL = "INSPECTA_MODEL"
ENV_API_KEY = "INSPECTA_API_KEY"

_VALID_ROLES = ("system", "user", "assistant")
_ANSWER_RE = re.compile(r"<answer>\s*(Yes|No)", re.IGNORECASE)


class GatewayError(RuntimeError):
    """Base class for policy gateway failures."""


class GatewayAuthError(GatewayError):
    """Missing or rejected credentials. Never retried."""


class GatewayTimeoutError(GatewayError):
    """The request timed out. Retried up to the attempt budget."""


class GatewayTransportError(GatewayError):
    """Network failure or retryable server status (429, 5xx)."""


class GatewayProtocolError(GatewayError):
    """The server replied with something that is not a valid completion."""


@dataclass(frozen=True)
class PolicyRequest:
    """One chat completion request.

    ``messages`` is a sequence of (role, content) pairs; ``images`` are PNG
    payloads attached to the last user message as data URIs.
    """

    messages: tuple
    images: tuple = ()
    temperature: float = 0.0
    max_tokens: int = 512
    want_logprobs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(tuple(m) for m in self.messages))
        object.__setattr__(self, "images", tuple(self.images))
        if not self.messages:
            raise ValueError("request needs at least one message")
        for role, content in self.messages:
            if role not in _VALID_ROLES:
                raise ValueError(f"unknown message role {role!r}")
            if not isinstance(content, str):
                raise ValueError("message content must be a string")
        for png in self.images:
            if not isinstance(png, bytes):
                raise ValueError("images must be PNG byte strings")
        if not (self.temperature >= 0.0 and self.temperature == self.temperature):
            raise ValueError("temperature must be finite and non-negative")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class TokenLogprob:
    token: str
    logprob: float
    top_alternatives: tuple = ()


@dataclass(frozen=True)
class PolicyResponse:
    text: str
    token_logprobs: tuple | None = None


def redact_headers(headers: dict) -> dict:
    """Copy of the header map safe to log."""
    cleaned = dict(headers)
    for key in cleaned:
        if key.lower() == "authorization":
            cleaned[key] = "Bearer ***"
    return cleaned


def _requests_transport(url, headers, payload, timeout):
    """Default transport; returns (status_code, body_text)."""
    try:
        resp = requests.post(url, headers=headers, json=payload, timeout=timeout)
    except requests.Timeout as exc:
        raise GatewayTimeoutError(f"request to {url} timed out") from exc
    except requests.RequestException as exc:
        raise GatewayTransportError(str(exc)) from exc
    return resp.status_code, resp.text


def _parse_completion(body: str) -> PolicyResponse:
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise GatewayProtocolError(f"response is not JSON: {exc}") from exc
    try:
        choice = data["choices"][0]
        text = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise GatewayProtocolError("response lacks choices[0].message.content") from exc
    if not isinstance(text, str):
        raise GatewayProtocolError("completion content is not a string")

    token_logprobs = None
    logprob_block = choice.get("logprobs") if isinstance(choice, dict) else None
    if isinstance(logprob_block, dict) and isinstance(logprob_block.get("content"), list):
        tokens = []
        for item in logprob_block["content"]:
            try:
                alternatives = tuple(
                    (alt["token"], float(alt["logprob"]))
                    for alt in item.get("top_logprobs", ())
                )
                tokens.append(
                    TokenLogprob(item["token"], float(item["logprob"]), alternatives)
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise GatewayProtocolError("malformed logprob entry") from exc
        token_logprobs = tuple(tokens)
    return PolicyResponse(text, token_logprobs)


class HttpPolicyClient:
    """OpenAI-compatible chat completion client.

    Credentials fall back to the INSPECTA_ENDPOINT / INSPECTA_MODEL /
    INSPECTA_API_KEY environment variables and are checked before any network
    traffic. Timeouts, connection failures, and HTTP 429/5xx are retried with
    exponential backoff; auth rejections and protocol errors are not.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        *,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        backoff_factor: float = 2.0,
        max_in_flight: int = 8,
        transport=None,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint or os.environ.get(ENV_ENDPOINT)
        self.model = model or os.environ.get(ENV_MODEL)
        self.api_key = api_key or os.environ.get(ENV_API_KEY)
        if max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.total_retries = 0
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()

    def _build_payload(self, request: PolicyRequest) -> dict:
        messages = [{"role": role, "content": content} for role, content in request.messages]
        if request.images:
            target = None
            for message in reversed(messages):
                if message["role"] == "user":
                    target = message
                    break
            if target is None:
                raise GatewayError("images supplied but no user message to attach them to")
            parts = [{"type": "text", "text": target["content"]}]
            for png in request.images:
                encoded = base64.b64encode(png).decode("ascii")
                parts.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:image/png;base64,{encoded}"},
                    }
                )
            target["content"] = parts
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.want_logprobs:
            payload["logprobs"] = True
            payload["top_logprobs"] = 5
        return payload

    def complete(self, request: PolicyRequest) -> PolicyResponse:
        if not self.endpoint or not self.model:
            raise GatewayAuthError(
                f"endpoint and model are required; set {ENV_ENDPOINT} and {ENV_MODEL}"
            )
        if not self.api_key:
            raise GatewayAuthError(f"no API key; set {ENV_API_KEY}")
        payload = self._build_payload(request)
        headers = {
            "Authorization": f"Bearer {self.api_key}",
            "Content-Type": "application/json",
        }

        last_error: GatewayError | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                delay = self.backoff_base * self.backoff_factor ** (attempt - 1)
                self._sleep(delay)
                with self._lock:
                    self.total_retries += 1
            try:
                with self._gate:
                    status, body = self._transport(
                        self.endpoint, headers, payload, self.timeout
                    )
            except (GatewayTimeoutError, GatewayTransportError) as exc:
                last_error = exc
                log.warning("attempt %d failed: %s", attempt + 1, exc)
                continue
            if status in (401, 403):
                raise GatewayAuthError(f"authentication rejected (HTTP {status})")
            if status == 429 or status >= 500:
                last_error = GatewayTransportError(f"HTTP {status}")
                log.warning("attempt %d got HTTP %d", attempt + 1, status)
                continue
            if status != 200:
                raise GatewayProtocolError(f"unexpected HTTP {status}: {body[:200]}")
            response = _parse_completion(body)
            self.log_exchange(headers, payload, status)
            return response
        assert last_error is not None
        raise last_error

    def log_exchange(self, headers: dict, payload: dict, status: int) -> None:
        log.debug(
            "POST %s status=%d headers=%s roles=%s",
            self.endpoint,
            status,
            redact_headers(headers),
            [m["role"] for m in payload.get("messages", ())],
        )


@dataclass
class ScriptedPolicy:
    """Deterministic mock policy replaying a fixed reply sequence.

    Each entry is a PolicyResponse or an exception to raise in its place.
    Requests are recorded for assertions; running past the script is an
    error so silent truncation cannot masquerade as model behavior.
    """

    replies: list
    requests: list = field(default_factory=list)
    _cursor: int = 0

    def __post_init__(self):
        self.replies = list(self.replies)

    @property
    def remaining(self) -> int:
        return len(self.replies) - self._cursor

    def complete(self, request: PolicyRequest) -> PolicyResponse:
        self.requests.append(request)
        if self._cursor >= len(self.replies):
            raise GatewayError(
                f"scripted policy exhausted after {len(self.replies)} replies"
            )
        reply = self.replies[self._cursor]
        self._cursor += 1
        if isinstance(reply, Exception):
            raise reply
        return reply


def scripted_response(text: str, logp_yes=None, logp_no=None) -> PolicyResponse:
    """Build a mock response, synthesizing answer-token logprobs when given.

    With both logprobs present and an answer tag in the text, the reply
    carries a token sequence whose answer token lists the opposite label in
    its alternatives, so margin extraction follows the same code path as a
    live response.
    """
    if logp_yes is None or logp_no is None:
        return PolicyResponse(text, None)
    match = _ANSWER_RE.search(text)
    if match is None:
        return PolicyResponse(text, None)
    start, end = match.span(1)
    emitted_is_yes = match.group(1).lower() == "yes"
    own = logp_yes if emitted_is_yes else logp_no
    other = logp_no if emitted_is_yes else logp_yes
    other_text = "No" if emitted_is_yes else "Yes"
    tokens = []
    if start > 0:
        tokens.append(TokenLogprob(text[:start], -1e-4, ()))
    tokens.append(
        TokenLogprob(match.group(1), own, ((match.group(1), own), (other_text, other)))
    )
    if end < len(text):
        tokens.append(TokenLogprob(text[end:], -1e-4, ()))
    return PolicyResponse(text, tuple(tokens))


def response_from_script(entry) -> PolicyResponse:
    """Turn a script-file reply into a response.

    Entries are plain strings, or objects ``{"text": ..., "logprobs":
    {"yes": f, "no": f}}`` when the reply should carry answer logprobs.
    """
    if isinstance(entry, str):
        return PolicyResponse(entry)
    if isinstance(entry, dict) and isinstance(entry.get("text"), str):
        logprobs = entry.get("logprobs") or {}
        return scripted_response(entry["text"], logprobs.get("yes"), logprobs.get("no"))
    raise GatewayError(f"invalid scripted reply: {entry!r}")


def answer_logprobs(response: PolicyResponse):
    """Extract (logp_yes, logp_no) at the answer token, or None.

    Finds the first ``<answer> Yes|No`` in the reconstructed token stream,
    takes the emitted label's logprob from the token covering the label
    start, and the opposite label's from that token's alternatives via a
    case-insensitive bidirectional prefix match (tokenizers may emit "Y" or
    " Yes" for the same word).
    """
    tokens = response.token_logprobs
    if not tokens:
        return None
    text = "".join(t.token for t in tokens)
    match = _ANSWER_RE.search(text)
    if match is None:
        return None
    target = match.start(1)
    emitted = match.group(1).lower()

    chosen = None
    offset = 0
    for token in tokens:
        upper = offset + len(token.token)
        if offset <= target < upper:
            chosen = token
            break
        offset = upper
    if chosen is None:
        return None

    opposite = "no" if emitted == "yes" else "yes"
    alt_logprob = None
    for alt_text, alt_lp in chosen.top_alternatives:
        stripped = alt_text.strip().lower()
        if not stripped:
            continue
        if stripped.startswith(opposite) or opposite.startswith(stripped):
            alt_logprob = alt_lp
            break
    if alt_logprob is None:
        return None
    if emitted == "yes":
        return (chosen.logprob, alt_logprob)
    return (alt_logprob, chosen.logprob)
