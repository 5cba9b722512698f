"""Service operations shared by the HTTP endpoints and the in-process CLI client.

Each handler takes a request model and returns a response model; failures are
raised as hiertree errors and mapped to HTTP errors / exit codes by callers.
Paths in requests refer to the filesystem the service runs on.
"""
from __future__ import annotations

import json
import os

from .. import __version__
from ..embedding import UnitVector
from ..errors import ConfigError, DegenerateClustering, UnknownClass
from ..evaluation import (
    EvalResult,
    SweepSpec,
    confusion_diff,
    evaluate,
    render_confusion_csv,
    render_eval_text,
    render_sweep_csv,
    sweep_evaluate,
)
from ..fusion import (
    ExplanationReport,
    FusionConfig,
    TraceExplanation,
    classify,
    explain,
)
from ..gateway import DescriptionGateway, PromptTemplate, ResponseCache
from ..providers import HttpChatProvider, ReplayProvider
from ..store import (
    ClusterSpec,
    DatasetManifest,
    HttpEmbeddingProvider,
    ManifestItem,
    SyntheticEmbeddingProvider,
    load_embeddings,
    load_manifest,
)
from ..tree import (
    BuildConfig,
    KnowledgeTree,
    TreeBuilder,
    description_matrices,
    initial_class_embeddings,
    load_tree,
    path_levels,
    tree_to_json_obj,
)
from . import schemas


def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(version=__version__)


# --- wiring helpers -----------------------------------------------------------

def load_labels(path: str) -> list[str]:
    """Class ids from a JSON array or an object with a class_ids key."""
    if not os.path.exists(path):
        raise ConfigError(f"labels file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON in labels file {path}: {exc}") from exc
    labels = obj.get("class_ids") if isinstance(obj, dict) else obj
    if not isinstance(labels, list) or not all(isinstance(c, str) and c for c in labels):
        raise ConfigError(f"labels file {path} must hold a list of class-name strings")
    return labels


def load_templates(path: str) -> dict[str, PromptTemplate]:
    """Prompt-template overrides from JSON: {kind: {body, role_preamble?}}."""
    if not os.path.exists(path):
        raise ConfigError(f"templates file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON in templates file {path}: {exc}") from exc
    templates = {}
    for kind, entry in obj.items():
        if not isinstance(entry, dict) or "body" not in entry:
            raise ConfigError(f"template {kind!r} in {path} must be an object with a body")
        templates[kind] = PromptTemplate(
            name=kind, body=entry["body"], role_preamble=entry.get("role_preamble", "")
        )
    return templates


def make_gateway(params: schemas.ProviderParams) -> DescriptionGateway:
    if params.kind == "replay":
        if not params.fixtures_dir:
            raise ConfigError("replay provider requires fixtures_dir")
        if not os.path.isdir(params.fixtures_dir):
            raise ConfigError(f"fixtures directory not found: {params.fixtures_dir}")
        provider = ReplayProvider()
    else:
        provider = HttpChatProvider(
            url=params.api_url,
            api_key=params.api_key,
            model=params.model,
        )
    templates = load_templates(params.templates_path) if params.templates_path else None
    return DescriptionGateway(
        provider,
        templates=templates,
        cache_dir=params.cache_dir,
        fixtures_dir=params.fixtures_dir,
        temperature=params.temperature,
        max_tokens=params.max_tokens,
        max_in_flight=params.max_in_flight,
    )


def make_embedder(params: schemas.EmbedderParams):
    if params.kind == "synthetic":
        if not params.spec_path:
            raise ConfigError("synthetic embedder requires spec_path")
        if not os.path.exists(params.spec_path):
            raise ConfigError(f"embedder spec not found: {params.spec_path}")
        with open(params.spec_path, "r", encoding="utf-8") as fh:
            spec = ClusterSpec.from_json_obj(json.load(fh))
        return SyntheticEmbeddingProvider(seed=params.seed, dim=params.dim, spec=spec)
    if not params.endpoint:
        raise ConfigError("http embedder requires endpoint")
    return HttpEmbeddingProvider(params.endpoint, cache_dir=params.cache_dir)


def _fusion_config(params: schemas.FusionParams) -> FusionConfig:
    return FusionConfig(
        momentum=params.momentum,
        tolerance=params.tolerance,
        max_depth_used=params.max_depth_used,
    )


def _build_config(params: schemas.BuildParams) -> BuildConfig:
    return BuildConfig(
        group_ratio=params.group_ratio,
        leaf_threshold=params.leaf_threshold,
        direct_threshold=params.direct_threshold,
        max_depth=params.max_depth,
        seed=params.seed,
        line_level_rows=params.line_level_rows,
    )


def _load_tree_file(path: str) -> KnowledgeTree:
    if not os.path.exists(path):
        raise ConfigError(f"tree file not found: {path}")
    return load_tree(path)


def _load_embedding_file(path: str) -> dict[str, UnitVector]:
    if not os.path.exists(path):
        raise ConfigError(f"embedding file not found: {path}")
    return load_embeddings(path)


# --- operations -----------------------------------------------------------------

def build_tree_handler(req: schemas.BuildTreeRequest) -> schemas.BuildTreeResponse:
    labels = load_labels(req.labels_path)
    if len(labels) < 2:
        raise DegenerateClustering(f"need at least two classes, got {len(labels)}")
    gateway = make_gateway(req.provider)
    embedder = make_embedder(req.embedder)
    cfg = _build_config(req.build)
    initial = initial_class_embeddings(labels, gateway, embedder)
    builder = TreeBuilder(cfg, gateway, embedder, jobs=req.jobs)
    tree = builder.build(labels, initial)
    return schemas.BuildTreeResponse(
        tree=tree_to_json_obj(tree),
        node_calls=builder.node_calls,
        call_counts=gateway.call_counts(),
        provenance=dict(tree.provenance),
    )


def classify_handler(req: schemas.ClassifyRequest) -> schemas.ClassifyResponse:
    images = _load_embedding_file(req.image_embeddings_path)
    labels = _load_embedding_file(req.label_embeddings_path)
    tree = None
    if req.tree_path and not req.baseline:
        tree = _load_tree_file(req.tree_path)
    if tree is not None:
        class_ids = list(tree.class_ids)
    else:
        class_ids = sorted(labels)
    missing = [c for c in class_ids if c not in labels]
    if missing:
        raise ConfigError(f"label embeddings missing for classes: {missing[:5]}")

    image_ids = list(images)
    if req.manifest_path:
        manifest = load_manifest(req.manifest_path)
        image_ids = [item.image_id for item in manifest.items]

    # Reuse the evaluation kernel by wrapping the image list in a manifest
    # whose true classes are irrelevant placeholders.
    from ..evaluation import predictions as predict_batch

    pseudo = DatasetManifest(
        name="classify",
        class_ids=tuple(class_ids),
        items=tuple(ManifestItem(image_id=i, true_class=class_ids[0]) for i in image_ids),
    )
    matrices = description_matrices(tree) if tree is not None else None
    preds = predict_batch(pseudo, images, labels, matrices, _fusion_config(req.fusion))
    ordered = sorted(zip(image_ids, preds))
    return schemas.ClassifyResponse(
        predictions=[schemas.Prediction(image_id=i, predicted=p) for i, p in ordered]
    )


def evaluate_handler(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
    manifest = load_manifest(req.manifest_path) if os.path.exists(req.manifest_path) else None
    if manifest is None:
        raise ConfigError(f"manifest file not found: {req.manifest_path}")
    images = _load_embedding_file(req.image_embeddings_path)
    labels = _load_embedding_file(req.label_embeddings_path)
    tree = None
    if req.tree_path and not req.baseline:
        tree = _load_tree_file(req.tree_path)
    result = evaluate(manifest, images, labels, tree=tree, cfg=_fusion_config(req.fusion))
    return schemas.EvaluateResponse(
        eval=result.to_json_obj(),
        confusion_csv=render_confusion_csv(result),
        eval_text=render_eval_text(result),
    )


def explain_handler(req: schemas.ExplainRequest) -> schemas.ExplainResponse:
    tree = _load_tree_file(req.tree_path)
    images = _load_embedding_file(req.image_embeddings_path)
    labels = _load_embedding_file(req.label_embeddings_path)
    if req.image_id not in images:
        raise UnknownClass(f"image {req.image_id!r} not in embedding file")
    missing = [c for c in tree.class_ids if c not in labels]
    if missing:
        raise ConfigError(f"label embeddings missing for classes: {missing[:5]}")

    matrices = description_matrices(tree)
    x = images[req.image_id]
    pairs = [(labels[c], matrices[c]) for c in sorted(tree.class_ids)]
    predicted, traces = classify(x, pairs, _fusion_config(req.fusion))

    ranked = sorted(traces, key=lambda t: (-t.s, t.class_id))[: req.top_k]
    if predicted not in {t.class_id for t in ranked}:
        ranked.append(next(t for t in traces if t.class_id == predicted))
    explanations = []
    for trace in ranked:
        levels = path_levels(tree, trace.class_id)
        if any(not lines for _, lines in levels):
            # Fallback-only classes have no description lines to show.
            explanations.append(
                TraceExplanation(
                    class_id=trace.class_id,
                    baseline=trace.baseline,
                    r=trace.r,
                    s=trace.s,
                    levels=(),
                )
            )
        else:
            explanations.append(explain(trace, levels[: len(trace.q)]))
    report = ExplanationReport(
        image_id=req.image_id, predicted=predicted, traces=tuple(explanations)
    )
    return schemas.ExplainResponse(report=report.to_json_obj(), text=report.to_text())


def sweep_handler(req: schemas.SweepRequest) -> schemas.SweepResponse:
    manifest = load_manifest(req.manifest_path) if os.path.exists(req.manifest_path) else None
    if manifest is None:
        raise ConfigError(f"manifest file not found: {req.manifest_path}")
    images = _load_embedding_file(req.image_embeddings_path)
    labels = _load_embedding_file(req.label_embeddings_path)
    tree = _load_tree_file(req.tree_path) if req.tree_path else None

    spec = SweepSpec(
        parameter=req.parameter,
        values=tuple(req.values),
        fixed=_fusion_config(req.fusion),
    )

    rebuild = None
    if req.parameter == "group_ratio":
        if not (req.labels_path and req.provider and req.embedder):
            raise ConfigError(
                "group_ratio sweep requires labels_path, provider, and embedder"
            )
        class_ids = load_labels(req.labels_path)
        build = req.build or schemas.BuildParams()

        def rebuild(ratio: float) -> KnowledgeTree:
            gateway = make_gateway(req.provider)
            embedder = make_embedder(req.embedder)
            cfg = BuildConfig(
                group_ratio=ratio,
                leaf_threshold=build.leaf_threshold,
                direct_threshold=build.direct_threshold,
                max_depth=build.max_depth,
                seed=build.seed,
                line_level_rows=build.line_level_rows,
            )
            initial = initial_class_embeddings(class_ids, gateway, embedder)
            return TreeBuilder(cfg, gateway, embedder).build(class_ids, initial)

    rows = sweep_evaluate(spec, manifest, images, labels, tree=tree, rebuild_tree=rebuild)
    return schemas.SweepResponse(
        parameter=req.parameter,
        rows=[
            schemas.SweepRowModel(
                value=r.value, accuracy=r.accuracy, status=r.status, error=r.error
            )
            for r in rows
        ],
        csv=render_sweep_csv(rows, req.parameter),
    )


def confusion_diff_handler(req: schemas.ConfusionDiffRequest) -> schemas.ConfusionDiffResponse:
    results = []
    for path in (req.eval_a_path, req.eval_b_path):
        if not os.path.exists(path):
            raise ConfigError(f"eval file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            results.append(EvalResult.from_json_obj(json.load(fh)))
    diff = confusion_diff(results[0], results[1], top_k=req.top_k)
    return schemas.ConfusionDiffResponse(diff=diff.to_json_obj(), text=diff.to_text())


def cache_stats_handler(cache_dir: str) -> schemas.CacheStatsResponse:
    if not cache_dir:
        raise ConfigError("no cache directory configured")
    cache = ResponseCache(cache_dir, readonly=True)
    keys = cache.keys()
    total = sum(os.path.getsize(os.path.join(cache_dir, k)) for k in keys)
    return schemas.CacheStatsResponse(directory=cache_dir, entries=len(keys), total_bytes=total)


def cache_clear_handler(req: schemas.CacheClearRequest) -> schemas.CacheClearResponse:
    if not req.cache_dir:
        raise ConfigError("no cache directory configured")
    if not os.path.isdir(req.cache_dir):
        raise ConfigError(f"cache directory not found: {req.cache_dir}")
    cache = ResponseCache(req.cache_dir)
    removed = cache.clear()
    return schemas.CacheClearResponse(directory=req.cache_dir, removed=removed)
