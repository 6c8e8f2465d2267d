"""Configuration loading and assembly of the full tool stack from a config dict."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .critic import Critic, CriticThresholds
from .evidence import TOOL_IDS
from .exceptions import ConfigurationError
from .ontology import OntologyIndex, load_ontology
from .orchestrator import Orchestrator, OrchestratorConfig
from .planner import RemotePlanner, RuleBasedPlanner
from .providers import RemoteEmbedder, RemoteReranker
from .retrieval.cases import CaseIndex
from .retrieval.guidelines import GuidelineRetriever, HashingEmbedder, JaccardReranker, load_stopwords
from .tools import (
    CallDefaults,
    CaseRagTool,
    FixtureStore,
    GuidelineRagTool,
    ImageEmbedder,
    MakeAnnotator,
    OntologyTool,
    PanDermClassifier,
    RemoteToolClient,
    ToolRegistry,
    VqaTool,
    descriptor,
    load_features,
)
from .wire import RemoteEndpoint

PATH_KEYS = (
    ("concepts",),
    ("fixtures",),
    ("ontology", "taxonomy"),
    ("case_retrieval", "corpus"),
    ("guideline_retrieval", "corpus"),
    ("guideline_retrieval", "stopwords"),
)


def data_dir() -> Path:
    return Path(str(resources.files("dermflow.data")))


def _resolve_paths(cfg: dict, base: Path) -> None:
    for keys in PATH_KEYS:
        node = cfg
        for k in keys[:-1]:
            node = node.get(k)
            if not isinstance(node, dict):
                break
        else:
            value = node.get(keys[-1])
            if isinstance(value, str) and not Path(value).is_absolute():
                node[keys[-1]] = str((base / value).resolve())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Shipped defaults, merged with an optional JSON file and an overrides dict.

    Relative paths are resolved against the directory of the file that set them.
    """
    default_path = data_dir() / "default_config.json"
    cfg = json.loads(default_path.read_text(encoding="utf-8"))
    _resolve_paths(cfg, default_path.parent)
    if path is not None:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
        _resolve_paths(user, Path(path).parent)
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def endpoint_from(section: dict) -> RemoteEndpoint:
    if not section.get("url"):
        raise ConfigurationError(f"remote backend selected but no url configured: {section}")
    return RemoteEndpoint(
        url=section["url"],
        model=section.get("model", ""),
        timeout=float(section.get("timeout", 60.0)),
        max_attempts=int(section.get("max_attempts", 3)),
    )


@dataclass
class Stack:
    config: OrchestratorConfig
    planner: object
    registry: ToolRegistry
    critic: Critic
    ontology: OntologyIndex
    defaults: CallDefaults

    def orchestrator(self) -> Orchestrator:
        return Orchestrator(self.config, self.planner, self.registry, self.critic)


def orchestrator_config(cfg: dict, disable=(), ablation: bool | None = None) -> OrchestratorConfig:
    disable = set(disable)
    unknown = disable - set(TOOL_IDS)
    if unknown:
        raise ConfigurationError(f"cannot disable unknown tool(s): {sorted(unknown)}")
    enabled = frozenset(cfg["enabled_tools"]) - disable
    return OrchestratorConfig(
        k_max=int(cfg["k_max"]),
        enabled_tools=enabled,
        thresholds=CriticThresholds(**cfg["thresholds"]),
        parallelism_limit=int(cfg["parallelism_limit"]),
        call_timeout=float(cfg["call_timeout"]),
        ablation=bool(disable) if ablation is None else ablation,
    )


def build_guideline_retriever(cfg: dict) -> GuidelineRetriever:
    g = cfg["guideline_retrieval"]
    emb_cfg, rr_cfg = cfg["embedder"], cfg["reranker"]
    if emb_cfg["backend"] == "remote":
        embedder = RemoteEmbedder(endpoint_from(emb_cfg), g["dimension"])
    else:
        embedder = HashingEmbedder(g["dimension"])
    reranker = RemoteReranker(endpoint_from(rr_cfg)) if rr_cfg["backend"] == "remote" else JaccardReranker()
    retriever = GuidelineRetriever(
        embedder=embedder,
        reranker=reranker,
        stopwords=load_stopwords(g.get("stopwords")),
        dimension=g["dimension"],
        dense_k=g["dense_k"],
        keyword_k=g["keyword_k"],
        top_n=g["top_n"],
        top_m=g["top_m"],
        k_rrf=g["k_rrf"],
        k1=g["bm25_k1"],
        b=g["bm25_b"],
    )
    return retriever.load(g["corpus"])


def build_stack(cfg: dict, disable=(), ablation: bool | None = None) -> Stack:
    orch_cfg = orchestrator_config(cfg, disable, ablation)
    onto = load_ontology(cfg["ontology"]["taxonomy"])
    fuzzy = cfg["ontology"].get("fuzzy_threshold", 0.4)
    case_cfg = cfg["case_retrieval"]
    defaults = CallDefaults(
        candidates=tuple(n.name for n in onto.leaves()),
        features=tuple(load_features(cfg.get("concepts"))),
        case_k=int(case_cfg["k"]),
    )

    tools_cfg = cfg["tools"]
    if tools_cfg["backend"] == "remote":
        source = RemoteToolClient(endpoint_from(tools_cfg))
    else:
        source = FixtureStore.load(cfg["fixtures"])

    cases = CaseIndex.load(case_cfg["corpus"], ontology=onto if case_cfg.get("validate_ontology") else None)
    if cases.dimension != case_cfg["dimension"]:
        raise ConfigurationError(f"case corpus dimension {cases.dimension} != configured {case_cfg['dimension']}")

    impls = {
        "panderm": lambda: PanDermClassifier(source),
        "make": lambda: MakeAnnotator(source, float(cfg["concept_threshold"])),
        "dermo_gpt": lambda: VqaTool("dermo_gpt", source),
        "qwen_vl": lambda: VqaTool("qwen_vl", source),
        "case_rag": lambda: CaseRagTool(cases, ImageEmbedder(source), int(case_cfg["k"])),
        "guideline_rag": lambda: GuidelineRagTool(build_guideline_retriever(cfg)),
        "ontology": lambda: OntologyTool(onto, fuzzy),
    }
    registry = ToolRegistry()
    for tool_id in TOOL_IDS:
        if tool_id in orch_cfg.enabled_tools:
            registry.register(descriptor(tool_id), impls[tool_id]())

    planner_cfg = cfg["planner"]
    if planner_cfg["backend"] == "remote":
        planner = RemotePlanner(endpoint_from(planner_cfg), defaults, registry.descriptors())
    else:
        planner = RuleBasedPlanner(defaults, onto)
    critic = Critic(orch_cfg.thresholds, onto, defaults)
    return Stack(orch_cfg, planner, registry, critic, onto, defaults)
