"""Chat-shaped HTTP wire protocol shared by the remote planner, tools and providers.

Request:  ``{"model": str, "messages": [{"role", "content"}], "image"?: base64}``
Response: ``{"content": str}``

Tool-style calls embed their arguments in ``content`` as a fenced JSON block
and expect a JSON object back inside the response content.
"""

from __future__ import annotations

import base64
import json
import os
import re
import time
from dataclasses import dataclass, field

import httpx

from .exceptions import TransportError

TOKEN_ENV = "DERMFLOW_API_TOKEN"
TRANSIENT_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})

_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n?(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class RemoteEndpoint:
    url: str
    model: str = ""
    token: str | None = field(default=None, repr=False)
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: tuple[float, ...] = (1.0, 2.0)

    def auth_token(self) -> str | None:
        return self.token if self.token is not None else os.environ.get(TOKEN_ENV)


def build_request(messages, image: bytes | None, endpoint: RemoteEndpoint) -> dict:
    body = {"model": endpoint.model, "messages": [dict(m) for m in messages]}
    if image is not None:
        body["image"] = base64.b64encode(image).decode("ascii")
    return body


def remote_chat(messages, image: bytes | None, endpoint: RemoteEndpoint, *, client=None, sleep=time.sleep) -> str:
    """POST one chat request; retries transient failures with the endpoint's backoff schedule."""
    body = build_request(messages, image, endpoint)
    headers = {}
    token = endpoint.auth_token()
    if token:
        headers["Authorization"] = f"Bearer {token}"
    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=endpoint.timeout)
    last: TransportError | None = None
    try:
        for attempt in range(endpoint.max_attempts):
            if attempt:
                delay = endpoint.backoff[min(attempt - 1, len(endpoint.backoff) - 1)] if endpoint.backoff else 0.0
                sleep(delay)
            try:
                resp = client.post(endpoint.url, json=body, headers=headers, timeout=endpoint.timeout)
            except httpx.TimeoutException as exc:
                last = TransportError(f"timeout calling {endpoint.url}: {exc}", "timeout")
                continue
            except httpx.HTTPError as exc:
                last = TransportError(f"cannot reach {endpoint.url}: {exc}", "connection")
                continue
            if resp.status_code != 200:
                last = TransportError(f"{endpoint.url} returned {resp.status_code}", "status", resp.status_code)
                if resp.status_code in TRANSIENT_STATUS:
                    continue
                raise last
            try:
                content = resp.json()["content"]
            except (ValueError, KeyError, TypeError):
                raise TransportError(f"malformed response from {endpoint.url}", "malformed") from None
            if not isinstance(content, str):
                raise TransportError(f"non-text content from {endpoint.url}", "malformed")
            return content
    finally:
        if own_client:
            client.close()
    raise last


def structured_message(payload) -> dict:
    return {"role": "user", "content": "```json\n" + json.dumps(payload, sort_keys=True) + "\n```"}


def extract_json(raw: str, kind=(list, dict)):
    """First well-formed JSON value of type ``kind`` in ``raw``.

    Fenced blocks are tried first, then every bracket position in the raw text.
    Returns None when nothing parses.
    """
    decoder = json.JSONDecoder()
    texts = [m.group(1) for m in _FENCE.finditer(raw)] + [raw]
    for text in texts:
        for i, ch in enumerate(text):
            if ch not in "[{":
                continue
            try:
                value, _ = decoder.raw_decode(text, i)
            except json.JSONDecodeError:
                continue
            if isinstance(value, kind):
                return value
    return None


def normalize_score(value) -> float:
    """Map a score reported either as a fraction or a percentage onto [0, 1]."""
    v = float(value)
    if 1.0 < v <= 100.0:
        v /= 100.0
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"score {value!r} is neither a fraction nor a percentage")
    return v
