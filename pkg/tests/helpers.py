"""Shared test utilities: scripted responders, exact embedders, corpus builders."""
from __future__ import annotations

import numpy as np

import hiertree as ht
from hiertree.providers import ProviderRequest


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def rule_respond(req: ProviderRequest) -> str:
    """Default auto-responder: well-formed descriptions derived from the request."""
    kind = req.meta.get("kind")
    classes = req.meta.get("classes", [])
    if kind == "summary":
        return "things that look like " + " or ".join(classes)
    if kind == "initial":
        cls = classes[0]
        return f"- typical {cls} appearance\n- common {cls} outline"
    parts = []
    for cls in classes:
        parts.append(f"### {cls}")
        parts.append(f"- distinctive {cls} silhouette")
        parts.append(f"- {cls} color pattern")
    return "\n".join(parts)


def scripted_gateway(respond=rule_respond, **kwargs) -> ht.DescriptionGateway:
    return ht.DescriptionGateway(ht.ScriptedProvider(respond), **kwargs)


class DictEmbedder:
    """Maps exact strings (and image ids) to pre-chosen unit vectors."""

    def __init__(self, dim: int, texts: dict[str, np.ndarray], images: dict[str, np.ndarray] | None = None):
        self.dim = dim
        self._texts = {k: ht.normalize(v) for k, v in texts.items()}
        self._images = {k: ht.normalize(v) for k, v in (images or {}).items()}

    def embed_text(self, texts):
        return [self._texts[t] for t in texts]

    def embed_image_ref(self, image_id):
        return self._images[image_id]


def planted_spec(n_groups: int = 3, classes_per_group: int = 4,
                 epsilon: float = 0.02, spread: float = 0.12) -> ht.ClusterSpec:
    groups = tuple(
        ht.GroupSpec(
            name=f"grp{g}",
            classes=tuple(f"grp{g}_cls{i}" for i in range(classes_per_group)),
        )
        for g in range(n_groups)
    )
    return ht.ClusterSpec(groups=groups, epsilon=epsilon, spread=spread)


def planted_corpus(spec: ht.ClusterSpec, embedder: ht.SyntheticEmbeddingProvider,
                   images_per_class: int = 5):
    """(manifest, image embeddings, label embeddings) for a planted spec."""
    images: dict[str, ht.UnitVector] = {}
    items = []
    for cls in spec.class_names():
        for i in range(images_per_class):
            image_id = f"img_{cls}_{i:03d}"
            images[image_id] = embedder.embed_image_ref(image_id)
            items.append(ht.ManifestItem(image_id=image_id, true_class=cls))
    labels = {cls: embedder.embed_text([cls])[0] for cls in spec.class_names()}
    manifest = ht.DatasetManifest(
        name="planted", class_ids=tuple(spec.class_names()), items=tuple(items)
    )
    return manifest, images, labels


def build_planted_tree(spec: ht.ClusterSpec, embedder, cfg: ht.BuildConfig,
                       respond=rule_respond, **gateway_kwargs):
    """Build a tree over a planted spec with a scripted gateway."""
    gateway = scripted_gateway(respond, **gateway_kwargs)
    classes = list(spec.class_names())
    initial = ht.tree.initial_class_embeddings(classes, gateway, embedder)
    tree = ht.build_tree(classes, initial, cfg, gateway, embedder)
    return tree, gateway


def oracle_running_average(q: list[float], tau: float) -> float:
    """Literal indicator-product form of the fused running average."""
    num = q[0]
    den = 1.0
    for j in range(2, len(q) + 1):
        prod = 1.0
        for k in range(1, j):
            prod *= 1.0 if q[k] > q[k - 1] + tau else 0.0
        num += q[j - 1] * prod
        den += prod
    return num / den
