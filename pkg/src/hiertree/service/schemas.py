"""Pydantic request/response models for the HTTP service."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class FusionParams(BaseModel):
    """Score-fusion knobs; `lambda` and `tau` follow the usual spellings."""

    model_config = ConfigDict(populate_by_name=True)

    momentum: float = Field(0.9, alias="lambda", ge=0.0, le=1.0)
    tolerance: float = Field(0.0, alias="tau", ge=0.0)
    max_depth_used: Optional[int] = Field(None, ge=1)


class BuildParams(BaseModel):
    group_ratio: float = Field(0.05, gt=0.0, le=1.0)
    leaf_threshold: int = Field(2, ge=1)
    direct_threshold: int = Field(10, ge=1)
    max_depth: int = Field(6, ge=1)
    seed: int = 0
    line_level_rows: bool = False


class ProviderParams(BaseModel):
    """Where comparative descriptions come from.

    `replay` serves recorded fixtures only; `http` talks to a chat-completion
    endpoint (bearer token from config/env) and records into `cache_dir`.
    """

    kind: Literal["replay", "http"] = "replay"
    fixtures_dir: Optional[str] = None
    cache_dir: Optional[str] = None
    api_url: Optional[str] = None
    api_key: Optional[str] = None
    model: str = "gpt-3.5-turbo"
    temperature: float = Field(0.0, ge=0.0)
    max_tokens: int = Field(512, ge=1)
    max_in_flight: int = Field(4, ge=1)
    # JSON file overriding the built-in prompt templates, keyed by strategy
    templates_path: Optional[str] = None


class EmbedderParams(BaseModel):
    """Text/image encoder: `synthetic` (planted geometry from a spec file) or
    `http` (encoder service with an on-disk cache)."""

    kind: Literal["synthetic", "http"] = "synthetic"
    spec_path: Optional[str] = None
    dim: int = Field(32, ge=2)
    seed: int = 0
    endpoint: Optional[str] = None
    cache_dir: Optional[str] = None


class BuildTreeRequest(BaseModel):
    labels_path: str
    provider: ProviderParams = ProviderParams()
    embedder: EmbedderParams = EmbedderParams()
    build: BuildParams = BuildParams()
    jobs: int = Field(1, ge=1)


class BuildTreeResponse(BaseModel):
    tree: dict
    node_calls: dict[str, dict[str, int]]
    call_counts: dict[str, int]
    provenance: dict


class ClassifyRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    tree_path: Optional[str] = None
    image_embeddings_path: str
    label_embeddings_path: str
    manifest_path: Optional[str] = None
    fusion: FusionParams = FusionParams()
    baseline: bool = False


class Prediction(BaseModel):
    image_id: str
    predicted: str


class ClassifyResponse(BaseModel):
    predictions: list[Prediction]


class EvaluateRequest(BaseModel):
    manifest_path: str
    image_embeddings_path: str
    label_embeddings_path: str
    tree_path: Optional[str] = None
    fusion: FusionParams = FusionParams()
    baseline: bool = False


class EvaluateResponse(BaseModel):
    eval: dict
    confusion_csv: str
    eval_text: str


class ExplainRequest(BaseModel):
    tree_path: str
    image_embeddings_path: str
    label_embeddings_path: str
    image_id: str
    fusion: FusionParams = FusionParams()
    top_k: int = Field(5, ge=1)


class ExplainResponse(BaseModel):
    report: dict
    text: str


class SweepRequest(BaseModel):
    parameter: Literal["lambda", "tau", "group_ratio", "depth"]
    values: list[float]
    manifest_path: str
    image_embeddings_path: str
    label_embeddings_path: str
    tree_path: Optional[str] = None
    fusion: FusionParams = FusionParams()
    # group_ratio sweeps rebuild the tree per value from these build inputs.
    labels_path: Optional[str] = None
    provider: Optional[ProviderParams] = None
    embedder: Optional[EmbedderParams] = None
    build: Optional[BuildParams] = None


class SweepRowModel(BaseModel):
    value: float
    accuracy: Optional[float] = None
    status: str
    error: Optional[str] = None


class SweepResponse(BaseModel):
    parameter: str
    rows: list[SweepRowModel]
    csv: str


class ConfusionDiffRequest(BaseModel):
    eval_a_path: str
    eval_b_path: str
    top_k: int = Field(10, ge=1)


class ConfusionDiffResponse(BaseModel):
    diff: dict
    text: str


class CacheStatsResponse(BaseModel):
    directory: str
    entries: int
    total_bytes: int


class CacheClearRequest(BaseModel):
    cache_dir: str


class CacheClearResponse(BaseModel):
    directory: str
    removed: int
