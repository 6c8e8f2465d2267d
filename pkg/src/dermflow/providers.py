"""Remote embedding and re-ranking providers over the chat wire protocol."""

from __future__ import annotations

import numpy as np

from .exceptions import TransportError
from .wire import RemoteEndpoint, extract_json, remote_chat, structured_message


def _call(endpoint, payload, key, client=None):
    content = remote_chat([structured_message(payload)], None, endpoint, client=client)
    value = extract_json(content, dict)
    if value is None or key not in value:
        raise TransportError(f"response has no {key!r} field", "malformed")
    return value[key]


class RemoteEmbedder:
    """Sends ``{"embed": [texts]}``; expects ``{"embeddings": [[...], ...]}``."""

    def __init__(self, endpoint: RemoteEndpoint, dimension: int, client=None):
        self.endpoint = endpoint
        self.dimension = dimension
        self.client = client

    def embed(self, texts: list[str]) -> np.ndarray:
        vecs = np.asarray(_call(self.endpoint, {"embed": list(texts)}, "embeddings", self.client), dtype=np.float64)
        if vecs.shape != (len(texts), self.dimension):
            raise TransportError(f"embedding shape {vecs.shape} != {(len(texts), self.dimension)}", "malformed")
        return vecs


class RemoteReranker:
    """Sends ``{"rerank": {"query", "documents"}}``; expects ``{"scores": [...]}``."""

    def __init__(self, endpoint: RemoteEndpoint, client=None):
        self.endpoint = endpoint
        self.client = client

    def score(self, query: str, documents: list[str]) -> list[float]:
        payload = {"rerank": {"query": query, "documents": list(documents)}}
        return [float(s) for s in _call(self.endpoint, payload, "scores", self.client)]
