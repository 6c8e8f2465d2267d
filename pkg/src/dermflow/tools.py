"""Tool descriptors, the registry, and the seven specialist tools.

Perception tools (classifier, concept annotator, two VQA models) take their
raw answers from a *source*: either a :class:`FixtureStore` of canned results
or a :class:`RemoteToolClient` speaking the chat wire protocol. Post-processing
(sorting, thresholding, score normalization) is the same for both.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .evidence import (
    PARAM_SCHEMAS,
    SCORED_TOOLS,
    EvidenceChain,
    ToolCall,
    ToolOutput,
    canonical_params,
    validate_params,
)
from .exceptions import (
    DispatchError,
    RegistrationError,
    TransportError,
    UnknownInputError,
    ValidationError,
)
from .findings import best_diagnosis
from .retrieval.cases import DEFAULT_CASE_K, case_output
from .wire import RemoteEndpoint, extract_json, normalize_score, remote_chat, structured_message

DEFAULT_CONCEPT_THRESHOLD = 0.5
DESCRIBE_QUESTION = "describe the lesion"
IMAGE_EMBED_TOOL = "dermlip_embed"

_DESCRIPTIONS = {
    "panderm": "Zero-shot disease classifier; ranks candidate labels with calibrated scores.",
    "make": "Dermoscopic concept annotator; scores each feature and reports those present.",
    "dermo_gpt": "Dermatology VQA model for morphological description.",
    "qwen_vl": "General-purpose VQA model for complementary questions.",
    "case_rag": "Retrieves visually similar diagnosed cases by image embedding.",
    "guideline_rag": "Hybrid search over clinical guideline chunks; returns sections and URLs.",
    "ontology": "Disease taxonomy lookup: hierarchy, children, siblings or fuzzy search.",
}


@dataclass(frozen=True)
class ToolDescriptor:
    tool_id: str
    param_schema: dict
    produces_confidence: bool
    description: str

    def __post_init__(self):
        if self.tool_id in SCORED_TOOLS and not self.produces_confidence:
            raise ValidationError(f"{self.tool_id} must declare produces_confidence")


def descriptor(tool_id: str) -> ToolDescriptor:
    schema = {k: kind for k, (kind, _) in PARAM_SCHEMAS[tool_id].items()}
    return ToolDescriptor(tool_id, schema, tool_id in SCORED_TOOLS, _DESCRIPTIONS[tool_id])


class ToolRegistry:
    """Maps tool ids to implementations. Built once, then read-only."""

    def __init__(self):
        self._tools: dict[str, tuple[ToolDescriptor, object]] = {}

    def register(self, desc: ToolDescriptor, impl) -> "ToolRegistry":
        if desc.tool_id in self._tools:
            raise RegistrationError(f"tool {desc.tool_id!r} already registered")
        self._tools[desc.tool_id] = (desc, impl)
        return self

    def __contains__(self, tool_id):
        return tool_id in self._tools

    def tool_ids(self) -> list[str]:
        return list(self._tools)

    def descriptors(self) -> list[ToolDescriptor]:
        return [d for d, _ in self._tools.values()]

    def dispatch(self, call: ToolCall, image_ref: str) -> ToolOutput:
        if call.tool_id not in self._tools:
            raise DispatchError(f"tool {call.tool_id!r} is not registered")
        validate_params(call.tool_id, call.params)
        _, impl = self._tools[call.tool_id]
        out = impl(call.params, image_ref)
        if not isinstance(out, ToolOutput):
            raise DispatchError(f"tool {call.tool_id!r} returned {type(out).__name__}, not ToolOutput")
        return out


# -- sources ---------------------------------------------------------------


def _image_key(image_ref: str) -> str:
    return Path(image_ref).name


class FixtureStore:
    """Canned tool results keyed on (tool_id, image basename, canonical params)."""

    def __init__(self, records=()):
        self._table: dict[tuple[str, str, str], object] = {}
        for rec in records:
            self.add(rec["tool_id"], rec["image_ref"], rec.get("params", {}), rec["result"])

    def add(self, tool_id, image_ref, params, result):
        key = (tool_id, _image_key(image_ref), canonical_params(params))
        if key in self._table:
            raise ValidationError(f"duplicate fixture for {key}")
        self._table[key] = result

    @classmethod
    def load(cls, path) -> "FixtureStore":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(json.loads(line))
        return cls(records)

    def __len__(self):
        return len(self._table)

    def fetch(self, tool_id: str, image_ref: str, params: dict):
        key = (tool_id, _image_key(image_ref), canonical_params(params))
        try:
            return self._table[key]
        except KeyError:
            raise UnknownInputError(f"no fixture for {tool_id} on {key[1]!r} with params {key[2]}") from None


class RemoteToolClient:
    """Sends ``{"tool", "params"}`` as a structured block and reads a JSON object back."""

    def __init__(self, endpoint: RemoteEndpoint, client=None):
        self.endpoint = endpoint
        self.client = client

    def _read_image(self, image_ref):
        p = Path(image_ref)
        return p.read_bytes() if p.is_file() else None

    def fetch(self, tool_id: str, image_ref: str, params: dict):
        content = remote_chat(
            [structured_message({"tool": tool_id, "params": params})],
            self._read_image(image_ref),
            self.endpoint,
            client=self.client,
        )
        value = extract_json(content, dict)
        if value is None or "result" not in value:
            raise TransportError(f"{tool_id}: response carries no result object", "malformed")
        return value["result"]

    def chat(self, question: str, image_ref: str) -> str:
        return remote_chat([{"role": "user", "content": question}], self._read_image(image_ref),
                           self.endpoint, client=self.client)


# -- perception tools ------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    label: str
    score: float

    def __post_init__(self):
        if not self.label.strip():
            raise ValidationError("prediction label is empty")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"prediction score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class AnnotationSet:
    present: tuple[str, ...]
    scores: dict


class PanDermClassifier:
    def __init__(self, source):
        self.source = source

    def classify(self, image_ref: str, candidates: list[str]) -> list[Prediction]:
        if not candidates:
            raise ValidationError("candidate label set is empty")
        raw = self.source.fetch("panderm", image_ref, {"candidates": list(candidates)})
        allowed = {c.casefold(): c for c in candidates}
        preds = []
        for entry in raw:
            label = entry["label"]
            if label.casefold() not in allowed:
                raise ValidationError(f"classifier returned {label!r}, not among the candidates")
            preds.append(Prediction(allowed[label.casefold()], normalize_score(entry["score"])))
        preds.sort(key=lambda p: (-p.score, p.label))
        return preds

    def __call__(self, params, image_ref) -> ToolOutput:
        preds = self.classify(image_ref, params["candidates"])
        if not preds:
            raise ValidationError("classifier returned no predictions")
        result = {"predictions": [{"label": p.label, "score": p.score} for p in preds]}
        return ToolOutput(result, preds[0].score, ())


class MakeAnnotator:
    def __init__(self, source, threshold: float = DEFAULT_CONCEPT_THRESHOLD):
        self.source = source
        self.threshold = threshold

    def annotate_concepts(self, image_ref: str, features: list[str]) -> AnnotationSet:
        if not features:
            raise ValidationError("feature set is empty")
        raw = self.source.fetch("make", image_ref, {"features": list(features)})
        reported = {k.casefold(): normalize_score(v) for k, v in raw["scores"].items()}
        scores = {f: reported.get(f.casefold(), 0.0) for f in features}
        present = tuple(f for f in features if scores[f] >= self.threshold)
        return AnnotationSet(present, scores)

    def __call__(self, params, image_ref) -> ToolOutput:
        ann = self.annotate_concepts(image_ref, params["features"])
        return ToolOutput({"present": list(ann.present), "scores": ann.scores, "threshold": self.threshold})


class VqaTool:
    def __init__(self, backend: str, source):
        if backend not in ("dermo_gpt", "qwen_vl"):
            raise ValidationError(f"unknown VQA backend {backend!r}")
        self.backend = backend
        self.source = source

    def vqa(self, image_ref: str, question: str) -> str:
        if not question.strip():
            raise ValidationError("question is empty")
        if isinstance(self.source, RemoteToolClient):
            return self.source.chat(question, image_ref)
        raw = self.source.fetch(self.backend, image_ref, {"question": question})
        return raw["text"] if isinstance(raw, dict) else str(raw)

    def __call__(self, params, image_ref) -> ToolOutput:
        return ToolOutput({"text": self.vqa(image_ref, params["question"])})


# -- retrieval and knowledge tools -----------------------------------------


class ImageEmbedder:
    """Image -> case-embedding vector, via a fixture store or remote client."""

    def __init__(self, source):
        self.source = source

    def embed_image(self, image_ref: str) -> list[float]:
        raw = self.source.fetch(IMAGE_EMBED_TOOL, image_ref, {})
        return raw["embedding"] if isinstance(raw, dict) else raw


class CaseRagTool:
    def __init__(self, index, embedder: ImageEmbedder, default_k: int = DEFAULT_CASE_K):
        self.index = index
        self.embedder = embedder
        self.default_k = default_k

    def __call__(self, params, image_ref) -> ToolOutput:
        vec = self.embedder.embed_image(image_ref)
        return case_output(self.index.search(vec, params.get("k", self.default_k)))


class GuidelineRagTool:
    def __init__(self, retriever):
        self.retriever = retriever

    def __call__(self, params, image_ref) -> ToolOutput:
        return self.retriever.retrieve(params["query"])


class OntologyTool:
    def __init__(self, index, threshold: float = 0.4):
        self.index = index
        self.threshold = threshold

    def __call__(self, params, image_ref) -> ToolOutput:
        return ToolOutput(self.index.query(params["mode"], params["name"], self.threshold))


# -- default calls ---------------------------------------------------------


def load_features(path=None) -> list[str]:
    if path is None:
        text = resources.files("dermflow.data").joinpath("concepts.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return [l.strip() for l in text.splitlines() if l.strip() and not l.startswith("#")]


@dataclass(frozen=True)
class CallDefaults:
    """Default parameters used when a tool is called without planner-specific ones."""

    candidates: tuple[str, ...]
    features: tuple[str, ...]
    case_k: int = DEFAULT_CASE_K
    describe_question: str = DESCRIBE_QUESTION

    def call(self, tool_id: str, chain: EvidenceChain | None = None, question: str | None = None,
             normalize=None) -> ToolCall | None:
        """Default call for ``tool_id``; None if the tool needs context the chain lacks."""
        if tool_id == "panderm":
            return ToolCall("panderm", {"candidates": list(self.candidates)})
        if tool_id == "make":
            return ToolCall("make", {"features": list(self.features)})
        if tool_id == "case_rag":
            return ToolCall("case_rag", {"k": self.case_k})
        if tool_id in ("dermo_gpt", "qwen_vl"):
            return ToolCall(tool_id, {"question": question or self.describe_question})
        best = best_diagnosis(chain, normalize) if chain is not None else None
        if tool_id == "guideline_rag":
            topic = best[0] if best else "skin lesion"
            return ToolCall("guideline_rag", {"query": f"{topic} clinical features"})
        if tool_id == "ontology":
            if best is None:
                return None
            return ToolCall("ontology", {"mode": "hierarchy", "name": best[0]})
        raise ValidationError(f"unknown tool_id {tool_id!r}")
