"""Knowledge-tree construction by alternating clustering and comparison.

The builder clusters the current class embeddings, then per group: singleton
groups attach as bare leaves; groups larger than `direct_threshold` get a
summary plus summary-scoped comparative descriptions and are re-clustered on
the new description embeddings; small groups get one direct comparative
prompt. Groups between `leaf_threshold` and `direct_threshold` are compared,
then split once into leaf-sized subgroups that each get their own direct
comparison. Recursion stops at `max_depth`.

Rebuilding from identical inputs, config, and fixtures yields a byte-identical
serialized tree.
"""
from __future__ import annotations

import base64
import json
import math
import zlib
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import embedding
from .cluster import KMeansConfig, choose_k, kmeans
from .embedding import UnitVector, from_f32_array
from .errors import (
    DegenerateClustering,
    DimensionMismatch,
    HiertreeError,
    InvalidInput,
    MissingEmbedding,
    UnknownClass,
)
from .fusion import ClassDescriptionMatrix
from .gateway import DescriptionGateway, DescriptionSet
from .store import EmbeddingProvider, canonical_json

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BuildConfig:
    """Tree-shape knobs.

    group_ratio drives cluster count per split (k = round(ratio * group size));
    leaf_threshold is the largest group kept as a single comparison leaf;
    direct_threshold is the largest group compared in one prompt at all;
    beyond it the builder summarizes, compares, and keeps grouping.
    """

    group_ratio: float = 0.05
    leaf_threshold: int = 2
    direct_threshold: int = 10
    max_depth: int = 6
    seed: int = 0
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6
    line_level_rows: bool = False

    def __post_init__(self) -> None:
        if not (0.0 < self.group_ratio <= 1.0):
            raise InvalidInput("group_ratio must be in (0, 1]")
        if self.leaf_threshold < 1:
            raise InvalidInput("leaf_threshold must be >= 1")
        if self.direct_threshold < self.leaf_threshold:
            raise InvalidInput("direct_threshold must be >= leaf_threshold")
        if self.max_depth < 1:
            raise InvalidInput("max_depth must be >= 1")

    def to_json_obj(self) -> dict:
        return {
            "group_ratio": self.group_ratio,
            "leaf_threshold": self.leaf_threshold,
            "direct_threshold": self.direct_threshold,
            "max_depth": self.max_depth,
            "seed": self.seed,
            "kmeans_max_iters": self.kmeans_max_iters,
            "kmeans_tol": self.kmeans_tol,
            "line_level_rows": self.line_level_rows,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "BuildConfig":
        return cls(**{k: obj[k] for k in cls().to_json_obj() if k in obj})


@dataclass
class TreeNode:
    """One group of classes; leaves have no children.

    descriptions/level_embedding are present when this node's members were
    compared here. Bare singleton leaves keep their inherited embedding in
    level_embedding (descriptions stays empty) so the tree is self-contained.
    """

    node_id: str
    members: list[str]
    depth: int
    descriptions: dict[str, DescriptionSet] = field(default_factory=dict)
    level_embedding: dict[str, UnitVector] = field(default_factory=dict)
    line_embeddings: dict[str, list[UnitVector]] = field(default_factory=dict)
    summary: str | None = None
    children: list["TreeNode"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class KnowledgeTree:
    root: TreeNode
    class_ids: list[str]
    dim: int
    build_config: BuildConfig
    provenance: dict = field(default_factory=dict)

    def leaves(self) -> list[TreeNode]:
        out: list[TreeNode] = []

        def visit(node: TreeNode) -> None:
            if node.is_leaf:
                out.append(node)
            for child in node.children:
                visit(child)

        visit(self.root)
        return out

    def leaf_partition(self) -> list[list[str]]:
        return [list(leaf.members) for leaf in self.leaves()]

    def path(self, class_id: str) -> list[TreeNode]:
        """Nodes from root to the leaf containing class_id."""
        if class_id not in self.root.members:
            raise UnknownClass(f"class {class_id!r} not in tree")
        node = self.root
        out = [node]
        while not node.is_leaf:
            node = next(c for c in node.children if class_id in c.members)
            out.append(node)
        return out


def validate_tree(tree: KnowledgeTree) -> None:
    """Structural invariants: leaf partition, child partitions, no trivial chains."""
    seen: list[str] = []

    def visit(node: TreeNode) -> None:
        if node.descriptions and set(node.descriptions) != set(node.members):
            raise InvalidInput(f"node {node.node_id}: descriptions not keyed by members")
        if node.is_leaf:
            seen.extend(node.members)
            return
        if len(node.children) == 1 and set(node.children[0].members) == set(node.members):
            raise InvalidInput(f"node {node.node_id}: trivial single-child chain")
        combined: list[str] = []
        for child in node.children:
            if child.depth != node.depth + 1:
                raise InvalidInput(f"node {child.node_id}: bad depth")
            combined.extend(child.members)
        if sorted(combined) != sorted(node.members) or len(set(combined)) != len(combined):
            raise InvalidInput(f"node {node.node_id}: children do not partition members")
        for child in node.children:
            visit(child)

    visit(tree.root)
    if sorted(seen) != sorted(tree.class_ids) or len(set(seen)) != len(seen):
        raise InvalidInput("leaves do not partition the class set")


def embed_node_descriptions(
    node: TreeNode, embedder: EmbeddingProvider, store_lines: bool = False
) -> TreeNode:
    """Embed each member's description lines; per-class vector = renormalized mean."""
    if not node.descriptions:
        raise InvalidInput(f"node {node.node_id} has no descriptions to embed")
    for cls, ds in node.descriptions.items():
        try:
            line_vecs = embedder.embed_text(list(ds.lines))
        except HiertreeError as exc:
            raise type(exc)(f"node {node.node_id}: {exc}") from exc
        node.level_embedding[cls] = embedding.mean(line_vecs)
        if store_lines:
            node.line_embeddings[cls] = line_vecs
    return node


class TreeBuilder:
    """Builds a KnowledgeTree; records per-node gateway call counts."""

    def __init__(
        self,
        cfg: BuildConfig,
        gateway: DescriptionGateway,
        embedder: EmbeddingProvider,
        jobs: int = 1,
    ) -> None:
        self.cfg = cfg
        self.gateway = gateway
        self.embedder = embedder
        self.jobs = max(1, jobs)
        self.node_calls: dict[str, dict[str, int]] = {}

    # -- helpers --------------------------------------------------------------

    def _count(self, node_id: str, kind: str) -> None:
        entry = self.node_calls.setdefault(node_id, {})
        entry[kind] = entry.get(kind, 0) + 1

    def _kmeans_cfg(self, k: int, node_id: str) -> KMeansConfig:
        seed = (self.cfg.seed ^ zlib.crc32(node_id.encode("utf-8"))) & 0xFFFFFFFF
        return KMeansConfig(
            k=k, max_iters=self.cfg.kmeans_max_iters, seed=seed, tol=self.cfg.kmeans_tol
        )

    def _annotated(self, node_id: str, fn: Callable, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except HiertreeError as exc:
            raise type(exc)(f"node {node_id}: {exc}") from exc

    def _compare_into(self, node: TreeNode, summary: str | None) -> None:
        self._count(node.node_id, "compare")
        sets = self._annotated(node.node_id, self.gateway.compare_group, node.members, summary)
        node.descriptions = self.gateway.attach_node(sets, node.node_id)
        embed_node_descriptions(node, self.embedder, store_lines=self.cfg.line_level_rows)

    def _cluster_members(
        self, node: TreeNode, emb: dict[str, UnitVector], k: int, salt: str = ""
    ) -> list[list[str]]:
        points = [emb[c] for c in node.members]
        clustering = kmeans(points, self._kmeans_cfg(k, node.node_id + salt))
        groups = clustering.groups()
        return [[node.members[i] for i in idxs] for idxs in groups if idxs]

    def _make_children(self, node: TreeNode, member_groups: list[list[str]]) -> list[TreeNode]:
        children = [
            TreeNode(node_id=f"{node.node_id}/{gi}", members=group, depth=node.depth + 1)
            for gi, group in enumerate(member_groups)
        ]
        node.children = children
        return children

    # -- group handling (each task returns follow-up tasks) --------------------

    def _task_grow(self, node: TreeNode, emb: dict[str, UnitVector], force_split: bool):
        def run() -> list:
            k = choose_k(len(node.members), self.cfg.group_ratio)
            if force_split:
                k = max(2, k)
            if k == 1:
                # Single group == this node; apply the group rules in place
                # rather than creating a trivial one-child chain.
                return [self._task_handle(node, emb)]
            groups = self._cluster_members(node, emb, k)
            if len(groups) < 2:
                raise DegenerateClustering(
                    f"node {node.node_id}: clustering produced {len(groups)} group(s)"
                )
            children = self._make_children(node, groups)
            return [self._task_handle(child, emb) for child in children]

        return run

    def _task_handle(self, node: TreeNode, emb: dict[str, UnitVector]):
        def run() -> list:
            size = len(node.members)
            cfg = self.cfg
            if size == 1:
                # Bare leaf: keep the inherited embedding as its fallback row.
                cls = node.members[0]
                node.level_embedding[cls] = emb[cls]
                return []
            at_max = node.depth >= cfg.max_depth
            if size > cfg.direct_threshold:
                self._count(node.node_id, "summarize")
                node.summary = self._annotated(
                    node.node_id, self.gateway.summarize_group, node.members
                )
                self._compare_into(node, node.summary)
                if at_max:
                    return []
                return [self._task_grow(node, node.level_embedding, force_split=True)]
            self._compare_into(node, None)
            if size > cfg.leaf_threshold and not at_max:
                return self._split_leafward(node)
            return []

        return run

    def _split_leafward(self, node: TreeNode) -> list:
        """One extra split of a mid-sized compared group into leaf-sized parts."""
        k = min(len(node.members), math.ceil(len(node.members) / self.cfg.leaf_threshold))
        groups = self._cluster_members(node, node.level_embedding, k, salt=":split")
        if len(groups) < 2:
            return []  # cannot subdivide further; node stays a leaf
        children = self._make_children(node, groups)
        tasks = []
        for child in children:
            if len(child.members) == 1:
                cls = child.members[0]
                child.level_embedding[cls] = node.level_embedding[cls]
            else:
                tasks.append(self._task_compare_leaf(child))
        return tasks

    def _task_compare_leaf(self, node: TreeNode):
        def run() -> list:
            self._compare_into(node, None)
            return []

        return run

    # -- driver ----------------------------------------------------------------

    def _drain(self, tasks: list) -> None:
        if self.jobs == 1:
            pending = list(tasks)
            while pending:
                pending.extend(pending.pop(0)())
            return
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            futures = {pool.submit(t) for t in tasks}
            while futures:
                done, futures = wait(futures, return_when=FIRST_COMPLETED)
                for fut in done:
                    futures |= {pool.submit(t) for t in fut.result()}

    def build(
        self, class_ids: list[str], initial_embeddings: dict[str, UnitVector]
    ) -> KnowledgeTree:
        if len(class_ids) < 2:
            raise DegenerateClustering("need at least two classes to build a tree")
        if len(set(class_ids)) != len(class_ids):
            raise InvalidInput("duplicate class ids")
        missing = [c for c in class_ids if c not in initial_embeddings]
        if missing:
            raise MissingEmbedding(f"no initial embedding for: {missing[:5]}")
        dims = {initial_embeddings[c].dim for c in class_ids}
        if len(dims) != 1:
            raise DimensionMismatch(f"mixed embedding dims: {sorted(dims)}")

        root = TreeNode(node_id="root", members=list(class_ids), depth=0)
        emb = {c: initial_embeddings[c] for c in class_ids}
        self._drain([self._task_grow(root, emb, force_split=False)])

        tree = KnowledgeTree(
            root=root,
            class_ids=list(class_ids),
            dim=dims.pop(),
            build_config=self.cfg,
            provenance={
                "provider_id": getattr(self.gateway.provider, "provider_id", "unknown"),
                "cache_digest": self.gateway.cache_digest(),
            },
        )
        validate_tree(tree)
        return tree


def build_tree(
    class_ids: list[str],
    initial_embeddings: dict[str, UnitVector],
    cfg: BuildConfig,
    gateway: DescriptionGateway,
    embedder: EmbeddingProvider,
    jobs: int = 1,
) -> KnowledgeTree:
    return TreeBuilder(cfg, gateway, embedder, jobs=jobs).build(class_ids, initial_embeddings)


def initial_class_embeddings(
    class_ids: list[str],
    gateway: DescriptionGateway,
    embedder: EmbeddingProvider,
) -> dict[str, UnitVector]:
    """Per-class starting embeddings: renormalized mean over the embeddings of
    that class's standalone description lines."""
    out: dict[str, UnitVector] = {}
    for cls in class_ids:
        ds = gateway.generate_initial_descriptions(cls)
        out[cls] = embedding.mean(embedder.embed_text(list(ds.lines)))
    return out


# --- per-class description matrices -------------------------------------------

def path_levels(tree: KnowledgeTree, class_id: str) -> list[tuple[str, tuple[str, ...]]]:
    """(node_id, description lines) per matrix row, root-to-leaf order.

    With line-level rows enabled at build time, each description line becomes
    its own row; otherwise one row per described node. A class never described
    anywhere falls back to a single row at its leaf with no lines.
    """
    nodes = tree.path(class_id)
    out: list[tuple[str, tuple[str, ...]]] = []
    for node in nodes:
        if class_id in node.descriptions and class_id in node.level_embedding:
            lines = node.descriptions[class_id].lines
            if tree.build_config.line_level_rows:
                out.extend((node.node_id, (line,)) for line in lines)
            else:
                out.append((node.node_id, lines))
    if not out:
        out.append((nodes[-1].node_id, ()))
    return out


def path_descriptions(tree: KnowledgeTree, class_id: str) -> ClassDescriptionMatrix:
    """Hierarchical description embeddings for one class, root-to-leaf order."""
    nodes = tree.path(class_id)
    rows: list[UnitVector] = []
    for node in nodes:
        if class_id in node.descriptions and class_id in node.level_embedding:
            if tree.build_config.line_level_rows and node.line_embeddings.get(class_id):
                rows.extend(node.line_embeddings[class_id])
            else:
                rows.append(node.level_embedding[class_id])
    if not rows:
        leaf = nodes[-1]
        fallback = leaf.level_embedding.get(class_id)
        if fallback is None:
            raise MissingEmbedding(
                f"class {class_id!r} has no description rows and no fallback embedding"
            )
        rows.append(fallback)
    return ClassDescriptionMatrix(class_id=class_id, rows=tuple(rows))


def description_matrices(tree: KnowledgeTree) -> dict[str, ClassDescriptionMatrix]:
    return {c: path_descriptions(tree, c) for c in tree.class_ids}


# --- serialization -------------------------------------------------------------

def _encode_vec(vec: UnitVector) -> str:
    return base64.b64encode(vec.values.astype("<f4").tobytes()).decode("ascii")


def _decode_vec(text: str, dim: int) -> UnitVector:
    raw = base64.b64decode(text.encode("ascii"))
    if len(raw) != dim * 4:
        raise InvalidInput(f"embedding payload has {len(raw)} bytes, expected {dim * 4}")
    return from_f32_array(np.frombuffer(raw, dtype="<f4"))


def _node_to_obj(node: TreeNode) -> dict:
    obj = {
        "node_id": node.node_id,
        "members": list(node.members),
        "summary": node.summary,
        "descriptions": {cls: list(ds.lines) for cls, ds in node.descriptions.items()},
        "level_embedding": {cls: _encode_vec(v) for cls, v in node.level_embedding.items()},
        "children": [_node_to_obj(c) for c in node.children],
    }
    if node.line_embeddings:
        obj["line_embeddings"] = {
            cls: [_encode_vec(v) for v in vecs] for cls, vecs in node.line_embeddings.items()
        }
    return obj


def _node_from_obj(obj: dict, depth: int, dim: int) -> TreeNode:
    node = TreeNode(
        node_id=obj["node_id"],
        members=list(obj["members"]),
        depth=depth,
        summary=obj.get("summary"),
    )
    node.descriptions = {
        cls: DescriptionSet(class_id=cls, node_id=node.node_id, lines=tuple(lines))
        for cls, lines in obj.get("descriptions", {}).items()
    }
    node.level_embedding = {
        cls: _decode_vec(text, dim) for cls, text in obj.get("level_embedding", {}).items()
    }
    node.line_embeddings = {
        cls: [_decode_vec(t, dim) for t in texts]
        for cls, texts in obj.get("line_embeddings", {}).items()
    }
    node.children = [_node_from_obj(c, depth + 1, dim) for c in obj.get("children", [])]
    return node


def tree_to_json_obj(tree: KnowledgeTree) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "class_ids": list(tree.class_ids),
        "dim": tree.dim,
        "build_config": tree.build_config.to_json_obj(),
        "provenance": dict(tree.provenance),
        "root": _node_to_obj(tree.root),
    }


def tree_from_json_obj(obj: dict) -> KnowledgeTree:
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InvalidInput(f"unsupported tree schema version {version!r}")
    dim = int(obj["dim"])
    tree = KnowledgeTree(
        root=_node_from_obj(obj["root"], depth=0, dim=dim),
        class_ids=list(obj["class_ids"]),
        dim=dim,
        build_config=BuildConfig.from_json_obj(obj.get("build_config", {})),
        provenance=dict(obj.get("provenance", {})),
    )
    validate_tree(tree)
    return tree


def save_tree(path: str, tree: KnowledgeTree) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(tree_to_json_obj(tree)))


def load_tree(path: str) -> KnowledgeTree:
    with open(path, "r", encoding="utf-8") as fh:
        return tree_from_json_obj(json.load(fh))
