"""Persistence and ingestion: embedding files, manifests, embedding providers.

Image/text embeddings use a compact binary format (corpora reach 1e5 vectors
at dim 768); trees, manifests, and reports stay JSON for diffability. All
JSON emitted here is canonical: sorted keys, fixed separators, no timestamps.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import warnings
from dataclasses import dataclass

import httpx
import numpy as np

from .embedding import UnitVector, from_f32_array, normalize
from .errors import (
    BadMagic,
    DimensionMismatch,
    DuplicateId,
    InvalidSpec,
    MissingEmbedding,
    SchemaMismatch,
    Transport,
    TruncatedFile,
    VersionMismatch,
)

MAGIC = b"HTEB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")  # magic, version u16, dim u32, count u64
_ID_LEN = struct.Struct("<H")

NORM_TOLERANCE = 1e-4


def canonical_json(obj) -> str:
    """Canonical JSON text: sorted keys, stable separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_canonical_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(obj))


# --- binary embedding file ---------------------------------------------------

def write_embeddings(path: str, vectors: dict[str, UnitVector]) -> None:
    """Write id -> unit-vector records; little-endian f32, ids length-prefixed."""
    if not vectors:
        raise ValueError("refusing to write an empty embedding file")
    dims = {v.dim for v in vectors.values()}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed dims in embedding file: {sorted(dims)}")
    dim = dims.pop()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, dim, len(vectors)))
        for vec_id, vec in vectors.items():
            raw = vec_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"id too long: {vec_id[:40]!r}...")
            fh.write(_ID_LEN.pack(len(raw)))
            fh.write(raw)
            fh.write(vec.values.astype("<f4").tobytes())


def load_embeddings(path: str) -> dict[str, UnitVector]:
    """Load an embedding file, validating header, uniqueness, and norms.

    Vectors within NORM_TOLERANCE of unit norm are returned bit-exact;
    anything further off is re-normalized with a warning. The whole file is
    parsed in one pass with norms validated in a single vectorized sweep,
    which keeps loads fast at the 1e5-record scale.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    magic, version, dim, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {FORMAT_VERSION}")

    ids: list[str] = []
    offsets: list[int] = []
    vec_bytes = dim * 4
    pos = _HEADER.size
    seen: set[str] = set()
    for _ in range(count):
        if pos + _ID_LEN.size > len(blob):
            raise TruncatedFile(f"{path}: record id length truncated")
        (id_len,) = _ID_LEN.unpack_from(blob, pos)
        pos += _ID_LEN.size
        if pos + id_len > len(blob):
            raise TruncatedFile(f"{path}: record id truncated")
        vec_id = blob[pos : pos + id_len].decode("utf-8")
        pos += id_len
        if vec_id in seen:
            raise DuplicateId(f"{path}: duplicate id {vec_id!r}")
        seen.add(vec_id)
        if pos + vec_bytes > len(blob):
            raise TruncatedFile(f"{path}: vector data truncated for {vec_id!r}")
        ids.append(vec_id)
        offsets.append(pos)
        pos += vec_bytes

    if not ids:
        return {}
    mat = np.empty((len(ids), dim), dtype=np.float32)
    for row, offset in enumerate(offsets):
        mat[row] = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset)
    # f64-accumulated norms without materializing an f64 copy of the matrix
    norms = np.sqrt(np.einsum("ij,ij->i", mat, mat, dtype=np.float64))
    off_norm = np.abs(norms - 1.0) > NORM_TOLERANCE
    mat.flags.writeable = False  # rows are shared, not copied, below

    out: dict[str, UnitVector] = {}
    for row, vec_id in enumerate(ids):
        if off_norm[row]:
            warnings.warn(
                f"{path}: vector {vec_id!r} has norm {norms[row]:.6f}; re-normalizing",
                RuntimeWarning,
                stacklevel=2,
            )
            out[vec_id] = normalize(mat[row])
        else:
            out[vec_id] = from_f32_array(mat[row], copy=False)
    return out


# --- dataset manifest --------------------------------------------------------

@dataclass(frozen=True)
class ManifestItem:
    image_id: str
    true_class: str


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    class_ids: tuple[str, ...]
    items: tuple[ManifestItem, ...]

    def __post_init__(self) -> None:
        if len(set(self.class_ids)) != len(self.class_ids):
            raise DuplicateId("duplicate class ids in manifest")
        classes = set(self.class_ids)
        seen: set[str] = set()
        for item in self.items:
            if item.image_id in seen:
                raise DuplicateId(f"duplicate image id {item.image_id!r}")
            seen.add(item.image_id)
            if item.true_class not in classes:
                raise MissingEmbedding(
                    f"item {item.image_id!r} labeled with unknown class {item.true_class!r}"
                )

    def to_json_obj(self) -> dict:
        return {
            "name": self.name,
            "class_ids": list(self.class_ids),
            "items": [
                {"image_id": it.image_id, "true_class": it.true_class}
                for it in self.items
            ],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "DatasetManifest":
        return cls(
            name=obj["name"],
            class_ids=tuple(obj["class_ids"]),
            items=tuple(
                ManifestItem(image_id=it["image_id"], true_class=it["true_class"])
                for it in obj["items"]
            ),
        )


def save_manifest(path: str, manifest: DatasetManifest) -> None:
    write_canonical_json(path, manifest.to_json_obj())


def load_manifest(path: str) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as fh:
        return DatasetManifest.from_json_obj(json.load(fh))


# --- embedding providers -----------------------------------------------------

class EmbeddingProvider:
    """Text/image embedding source; deterministic per provider instance."""

    dim: int

    def embed_text(self, texts: list[str]) -> list[UnitVector]:
        raise NotImplementedError

    def embed_image_ref(self, image_id: str) -> UnitVector:
        raise NotImplementedError


@dataclass(frozen=True)
class GroupSpec:
    name: str
    classes: tuple[str, ...]


@dataclass(frozen=True)
class ClusterSpec:
    """Planted geometry: orthogonal group directions, classes tilted off them.

    Class centers sit at angle `spread` from their group direction along
    mutually orthogonal offsets, so same-group classes have cosine
    cos(spread)^2 with each other and 0 across groups. `epsilon` is the
    angular noise radius applied per embedded input.
    """

    groups: tuple[GroupSpec, ...]
    epsilon: float = 0.0
    spread: float = 0.1

    def class_names(self) -> list[str]:
        return [cls for group in self.groups for cls in group.classes]

    def to_json_obj(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "spread": self.spread,
            "groups": [
                {"name": g.name, "classes": list(g.classes)} for g in self.groups
            ],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ClusterSpec":
        return cls(
            groups=tuple(
                GroupSpec(name=g["name"], classes=tuple(g["classes"]))
                for g in obj.get("groups", ())
            ),
            epsilon=float(obj.get("epsilon", 0.0)),
            spread=float(obj.get("spread", 0.1)),
        )


def _hash_words(text: str) -> list[int]:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]


class SyntheticEmbeddingProvider(EmbeddingProvider):
    """Deterministic planted-cluster embedder standing in for real encoders.

    A text is assigned to the center of the first class whose name occurs in
    it (longest names first), else to its group direction by group name, else
    to a stable hash-derived direction. Identical (seed, input) pairs always
    produce identical vectors.
    """

    def __init__(self, seed: int, dim: int, spec: ClusterSpec) -> None:
        if dim < 2:
            raise InvalidSpec("dim must be >= 2")
        if spec.epsilon < 0 or spec.spread < 0:
            raise InvalidSpec("epsilon and spread must be >= 0")
        if not spec.groups or any(not g.classes for g in spec.groups):
            raise InvalidSpec("spec needs at least one group and no empty groups")
        names = spec.class_names()
        if len(set(names)) != len(names):
            raise InvalidSpec("duplicate class names across groups")
        n_dirs = len(spec.groups) + len(names)
        if n_dirs > dim:
            raise InvalidSpec(
                f"dim {dim} too small for {len(spec.groups)} groups + {len(names)} classes"
            )
        self.seed = seed
        self.dim = dim
        self.spec = spec

        rng = np.random.default_rng(seed)
        basis = rng.standard_normal((dim, n_dirs))
        q, r = np.linalg.qr(basis)
        q = q * np.sign(np.diag(r))  # fix sign convention for determinism
        dirs = q.T

        self._centers: dict[str, np.ndarray] = {}
        idx = len(spec.groups)
        for g_idx, group in enumerate(spec.groups):
            base = dirs[g_idx]
            self._centers[f"group:{group.name}"] = base
            for cls in group.classes:
                offset = dirs[idx]
                idx += 1
                center = np.cos(spec.spread) * base + np.sin(spec.spread) * offset
                self._centers[f"class:{cls}"] = center / np.linalg.norm(center)
        # Longest names first so "winter wren" wins over "wren".
        self._class_tokens = sorted(names, key=len, reverse=True)
        self._group_tokens = sorted((g.name for g in spec.groups), key=len, reverse=True)

    def _center_for(self, text: str) -> np.ndarray | None:
        for cls in self._class_tokens:
            if cls in text:
                return self._centers[f"class:{cls}"]
        for name in self._group_tokens:
            if name in text:
                return self._centers[f"group:{name}"]
        return None

    def _embed_one(self, text: str) -> UnitVector:
        rng = np.random.default_rng([self.seed, *_hash_words(text)])
        center = self._center_for(text)
        if center is None:
            vec = rng.standard_normal(self.dim)
            return normalize(vec)
        if self.spec.epsilon == 0.0:
            return normalize(center)
        # Rotate by a random angle in [0, epsilon) within the tangent plane.
        tangent = rng.standard_normal(self.dim)
        tangent -= center * np.dot(tangent, center)
        tangent /= np.linalg.norm(tangent)
        theta = rng.uniform(0.0, self.spec.epsilon)
        return normalize(np.cos(theta) * center + np.sin(theta) * tangent)

    def embed_text(self, texts: list[str]) -> list[UnitVector]:
        return [self._embed_one(t) for t in texts]

    def embed_image_ref(self, image_id: str) -> UnitVector:
        return self._embed_one(image_id)


class HttpEmbeddingProvider(EmbeddingProvider):
    """Bridge to a live encoder service with an on-disk response cache.

    Wire format: POST {"texts": [...]} or {"image_id": "..."} to the endpoint,
    response {"vectors": [[...], ...]}. Responses are normalized and cached
    keyed by input hash, so repeated queries never re-hit the network.
    """

    def __init__(
        self,
        endpoint: str,
        cache_dir: str | None = None,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.cache_dir = cache_dir
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)
        self._dim: int | None = None
        self._client = httpx.Client(timeout=timeout, transport=transport)

    @property
    def dim(self) -> int:
        if self._dim is None:
            raise DimensionMismatch("dim unknown before the first embedding request")
        return self._dim

    def _cache_path(self, key: str) -> str | None:
        return os.path.join(self.cache_dir, key + ".json") if self.cache_dir else None

    def _cached(self, key: str) -> list[list[float]] | None:
        path = self._cache_path(key)
        if not path or not os.path.exists(path):
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)["vectors"]

    def _store(self, key: str, payload: dict, vectors: list[list[float]]) -> None:
        path = self._cache_path(key)
        if not path:
            return
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"request": payload, "vectors": vectors}, fh, sort_keys=True)
        os.replace(tmp, path)

    def _post(self, payload: dict, expected: int) -> list[list[float]]:
        key = hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode("utf-8")
        ).hexdigest()
        vectors = self._cached(key)
        if vectors is None:
            try:
                resp = self._client.post(self.endpoint, json=payload)
            except httpx.TransportError as exc:
                raise Transport(f"embedding endpoint unreachable: {exc}") from exc
            if resp.status_code != 200:
                raise Transport(f"embedding endpoint returned {resp.status_code}")
            try:
                vectors = resp.json()["vectors"]
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaMismatch(f"embedding response missing 'vectors': {exc}") from exc
            if not isinstance(vectors, list) or len(vectors) != expected:
                raise SchemaMismatch(
                    f"expected {expected} vectors, got "
                    f"{len(vectors) if isinstance(vectors, list) else type(vectors)}"
                )
            self._store(key, payload, vectors)
        out = []
        for vec in vectors:
            if self._dim is None:
                self._dim = len(vec)
            elif len(vec) != self._dim:
                raise DimensionMismatch(f"provider returned dim {len(vec)}, expected {self._dim}")
            out.append(normalize(np.asarray(vec, dtype=np.float32)))
        return out

    def embed_text(self, texts: list[str]) -> list[UnitVector]:
        if not texts:
            return []
        return self._post({"texts": list(texts)}, expected=len(texts))

    def embed_image_ref(self, image_id: str) -> UnitVector:
        return self._post({"image_id": image_id}, expected=1)[0]


class FileEmbeddingProvider(EmbeddingProvider):
    """Serves precomputed embeddings from loaded files; cannot embed new text."""

    def __init__(self, text: dict[str, UnitVector] | None = None,
                 images: dict[str, UnitVector] | None = None) -> None:
        self._text = text or {}
        self._images = images or {}
        some = next(iter(self._text.values()), None) or next(iter(self._images.values()), None)
        if some is None:
            raise MissingEmbedding("no embeddings supplied")
        self.dim = some.dim

    def embed_text(self, texts: list[str]) -> list[UnitVector]:
        missing = [t for t in texts if t not in self._text]
        if missing:
            raise MissingEmbedding(f"no stored embedding for text(s): {missing[:3]}")
        return [self._text[t] for t in texts]

    def embed_image_ref(self, image_id: str) -> UnitVector:
        if image_id not in self._images:
            raise MissingEmbedding(f"no stored embedding for image {image_id!r}")
        return self._images[image_id]
