import base64
import json

import httpx
import pytest

from dermflow.exceptions import TransportError
from dermflow.wire import TOKEN_ENV, RemoteEndpoint, extract_json, normalize_score, remote_chat, structured_message

URL = "http://model.local/chat"


def scripted(*responses, seen=None):
    """Mock transport replaying ``responses`` (status int, dict body, or exception)."""
    queue = list(responses)

    def handler(request):
        if seen is not None:
            seen.append(request)
        r = queue.pop(0)
        if isinstance(r, Exception):
            raise r
        if isinstance(r, int):
            return httpx.Response(r, json={"error": "x"})
        return httpx.Response(200, json=r)

    return httpx.Client(transport=httpx.MockTransport(handler))


def test_retry_then_success_with_backoff_schedule():
    sleeps = []
    client = scripted(500, 503, {"content": "ok"})
    out = remote_chat([{"role": "user", "content": "hi"}], None, RemoteEndpoint(URL), client=client,
                      sleep=sleeps.append)
    assert out == "ok" and sleeps == [1.0, 2.0]


def test_gives_up_after_three_attempts():
    sleeps, seen = [], []
    client = scripted(httpx.ConnectError("down"), httpx.ConnectError("down"), httpx.ConnectError("down"),
                      seen=seen)
    with pytest.raises(TransportError) as err:
        remote_chat([], None, RemoteEndpoint(URL), client=client, sleep=sleeps.append)
    assert err.value.category == "connection" and len(seen) == 3 and sleeps == [1.0, 2.0]


def test_timeout_category():
    client = scripted(*[httpx.ReadTimeout("slow")] * 3)
    with pytest.raises(TransportError) as err:
        remote_chat([], None, RemoteEndpoint(URL), client=client, sleep=lambda s: None)
    assert err.value.category == "timeout"


def test_permanent_status_not_retried():
    seen = []
    client = scripted(401, seen=seen)
    with pytest.raises(TransportError) as err:
        remote_chat([], None, RemoteEndpoint(URL), client=client, sleep=lambda s: None)
    assert err.value.status == 401 and len(seen) == 1


def test_malformed_body():
    client = scripted({"text": "wrong key"})
    with pytest.raises(TransportError) as err:
        remote_chat([], None, RemoteEndpoint(URL), client=client)
    assert err.value.category == "malformed"


def test_request_shape_image_and_token(monkeypatch):
    monkeypatch.setenv(TOKEN_ENV, "s3cret")
    seen = []
    remote_chat([{"role": "user", "content": "q"}], b"\x89img", RemoteEndpoint(URL, model="m"),
                client=scripted({"content": "a"}, seen=seen))
    body = json.loads(seen[0].content)
    assert body["model"] == "m" and body["messages"] == [{"role": "user", "content": "q"}]
    assert base64.b64decode(body["image"]) == b"\x89img"
    assert seen[0].headers["authorization"] == "Bearer s3cret"


def test_no_image_key_when_absent(monkeypatch):
    monkeypatch.delenv(TOKEN_ENV, raising=False)
    seen = []
    remote_chat([], None, RemoteEndpoint(URL), client=scripted({"content": "a"}, seen=seen))
    assert "image" not in json.loads(seen[0].content)
    assert "authorization" not in seen[0].headers


def test_token_not_in_repr():
    assert "hunter2" not in repr(RemoteEndpoint(URL, token="hunter2"))


class TestExtractJson:
    def test_fenced_first(self):
        raw = 'Sure! [1]\n```json\n[{"tool": "panderm"}]\n```'
        assert extract_json(raw, list) == [{"tool": "panderm"}]

    def test_bare_in_prose(self):
        assert extract_json('I will call {"a": [1, 2]} now', dict) == {"a": [1, 2]}

    def test_kind_filter_and_none(self):
        assert extract_json('{"a": 1}', list) is None
        assert extract_json("no json here", (list, dict)) is None

    def test_structured_message_roundtrip(self):
        msg = structured_message({"tool": "make", "params": {"features": ["scale"]}})
        assert extract_json(msg["content"], dict) == {"params": {"features": ["scale"]}, "tool": "make"}


@pytest.mark.parametrize("raw, want", [(0.93, 0.93), (93, 0.93), ("87.5", 0.875), (1, 1.0), (0, 0.0)])
def test_normalize_score(raw, want):
    assert normalize_score(raw) == pytest.approx(want)


def test_normalize_score_rejects():
    with pytest.raises(ValueError):
        normalize_score(-0.1)
    with pytest.raises(ValueError):
        normalize_score(250)
