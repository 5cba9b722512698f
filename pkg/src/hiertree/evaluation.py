"""Accuracy evaluation, confusion matrices and diffs, hyperparameter sweeps.

Classes are ordered lexicographically in every matrix and report, which makes
outputs deterministic and argmax ties resolve to the smallest class id. All
reports serialize to canonical JSON plus aligned-text/CSV renderings; none
embed timestamps, so identical inputs give byte-identical files.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .embedding import UnitVector
from .errors import (
    ClassSetMismatch,
    DimensionMismatch,
    InvalidInput,
    MissingEmbedding,
    ShapeMismatch,
)
from .fusion import ClassDescriptionMatrix, FusionConfig, batch_final_scores
from .store import DatasetManifest

SWEEP_PARAMETERS = ("lambda", "tau", "group_ratio", "depth")


@dataclass(frozen=True)
class EvalResult:
    method: str
    accuracy: float
    item_count: int
    class_order: tuple[str, ...]
    per_class_accuracy: dict[str, float]
    confusion: np.ndarray = field(compare=False)
    config: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "method": self.method,
            "accuracy": self.accuracy,
            "item_count": self.item_count,
            "class_order": list(self.class_order),
            "per_class_accuracy": dict(self.per_class_accuracy),
            "confusion": self.confusion.tolist(),
            "config": dict(self.config),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "EvalResult":
        return cls(
            method=obj["method"],
            accuracy=obj["accuracy"],
            item_count=obj["item_count"],
            class_order=tuple(obj["class_order"]),
            per_class_accuracy=dict(obj["per_class_accuracy"]),
            confusion=np.asarray(obj["confusion"], dtype=np.int64),
            config=dict(obj.get("config", {})),
        )


def _check_inputs(
    manifest: DatasetManifest,
    image_embeddings: dict[str, UnitVector],
    label_embeddings: dict[str, UnitVector],
) -> None:
    missing_images = [it.image_id for it in manifest.items if it.image_id not in image_embeddings]
    if missing_images:
        raise MissingEmbedding(f"no image embedding for: {missing_images[:5]}")
    missing_labels = [c for c in manifest.class_ids if c not in label_embeddings]
    if missing_labels:
        raise MissingEmbedding(f"no label embedding for: {missing_labels[:5]}")


def predictions(
    manifest: DatasetManifest,
    image_embeddings: dict[str, UnitVector],
    label_embeddings: dict[str, UnitVector],
    matrices: dict[str, ClassDescriptionMatrix] | None,
    cfg: FusionConfig,
) -> list[str]:
    """Predicted class per manifest item, in manifest order.

    With matrices=None this is plain label-cosine classification; otherwise
    each class column holds the fused score. Ties break to the smallest id.
    """
    _check_inputs(manifest, image_embeddings, label_embeddings)
    class_order = sorted(manifest.class_ids)
    dims = {image_embeddings[it.image_id].dim for it in manifest.items}
    dims |= {label_embeddings[c].dim for c in class_order}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed embedding dims: {sorted(dims)}")
    x = np.stack(
        [image_embeddings[it.image_id].values for it in manifest.items]
    ).astype(np.float64)
    scores = np.empty((len(manifest.items), len(class_order)), dtype=np.float64)
    for col, cls in enumerate(class_order):
        label = label_embeddings[cls]
        if matrices is None:
            scores[:, col] = np.clip(x @ label.values.astype(np.float64), -1.0, 1.0)
        else:
            scores[:, col] = batch_final_scores(x, label, matrices[cls], cfg)
    pred_idx = np.argmax(scores, axis=1)  # first max = lexicographically smallest
    return [class_order[i] for i in pred_idx]


def evaluate(
    manifest: DatasetManifest,
    image_embeddings: dict[str, UnitVector],
    label_embeddings: dict[str, UnitVector],
    tree=None,
    cfg: FusionConfig = FusionConfig(),
) -> EvalResult:
    """Score a manifest; hierarchical when a tree is given, else baseline."""
    if not manifest.items:
        raise InvalidInput("manifest has no items")
    matrices = None
    method = "baseline"
    if tree is not None:
        if set(tree.class_ids) != set(manifest.class_ids):
            raise ClassSetMismatch(
                "tree classes differ from manifest classes: "
                f"only-tree={sorted(set(tree.class_ids) - set(manifest.class_ids))[:3]} "
                f"only-manifest={sorted(set(manifest.class_ids) - set(tree.class_ids))[:3]}"
            )
        from .tree import description_matrices

        matrices = description_matrices(tree)
        method = "hierarchical"

    preds = predictions(manifest, image_embeddings, label_embeddings, matrices, cfg)
    class_order = sorted(manifest.class_ids)
    index = {c: i for i, c in enumerate(class_order)}
    confusion = np.zeros((len(class_order), len(class_order)), dtype=np.int64)
    for item, pred in zip(manifest.items, preds):
        confusion[index[item.true_class], index[pred]] += 1

    total = int(confusion.sum())
    accuracy = float(np.trace(confusion)) / total
    per_class = {}
    for cls in class_order:
        row = confusion[index[cls]]
        count = int(row.sum())
        if count:
            per_class[cls] = float(row[index[cls]]) / count
    return EvalResult(
        method=method,
        accuracy=accuracy,
        item_count=total,
        class_order=tuple(class_order),
        per_class_accuracy=per_class,
        confusion=confusion,
        config={"fusion": cfg.to_json_obj(), "method": method},
    )


def render_confusion_csv(result: EvalResult) -> str:
    """Rows = true class, columns = predicted class, cells = item counts."""
    header = "true_class," + ",".join(result.class_order)
    lines = [header]
    for i, cls in enumerate(result.class_order):
        lines.append(cls + "," + ",".join(str(int(v)) for v in result.confusion[i]))
    return "\n".join(lines) + "\n"


def render_eval_text(result: EvalResult) -> str:
    width = max([len(c) for c in result.class_order] + [5])
    lines = [
        f"method:   {result.method}",
        f"items:    {result.item_count}",
        f"accuracy: {result.accuracy:.6f}",
        "",
        f"{'class'.ljust(width)}  accuracy",
    ]
    for cls in result.class_order:
        if cls in result.per_class_accuracy:
            lines.append(f"{cls.ljust(width)}  {result.per_class_accuracy[cls]:.6f}")
    return "\n".join(lines) + "\n"


# --- confusion diffs -------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionDiff:
    class_order: tuple[str, ...]
    delta: np.ndarray = field(compare=False)
    top_changed: tuple[dict, ...] = ()

    def to_json_obj(self) -> dict:
        return {
            "class_order": list(self.class_order),
            "delta": self.delta.tolist(),
            "top_changed": [dict(c) for c in self.top_changed],
        }

    def to_text(self) -> str:
        if not self.top_changed:
            return "no off-diagonal changes\n"
        width = max(len(c) for c in self.class_order)
        lines = [f"{'true'.ljust(width)}  {'predicted'.ljust(width)}  before  after  delta"]
        for cell in self.top_changed:
            lines.append(
                f"{cell['true_class'].ljust(width)}  {cell['pred_class'].ljust(width)}  "
                f"{cell['before']:6d}  {cell['after']:5d}  {cell['delta']:+d}"
            )
        return "\n".join(lines) + "\n"


def confusion_diff(a: EvalResult, b: EvalResult, top_k: int = 10) -> ConfusionDiff:
    """Per-cell signed change from a to b plus the most-changed off-diagonal cells."""
    if a.class_order != b.class_order:
        raise ShapeMismatch("results cover different class sets")
    if a.confusion.shape != b.confusion.shape:
        raise ShapeMismatch("confusion matrices have different shapes")
    if not np.array_equal(a.confusion.sum(axis=1), b.confusion.sum(axis=1)):
        raise ShapeMismatch("results cover different item sets (row sums differ)")
    delta = b.confusion - a.confusion
    cells = []
    for i, true_cls in enumerate(a.class_order):
        for j, pred_cls in enumerate(a.class_order):
            if i != j and delta[i, j] != 0:
                cells.append(
                    {
                        "true_class": true_cls,
                        "pred_class": pred_cls,
                        "before": int(a.confusion[i, j]),
                        "after": int(b.confusion[i, j]),
                        "delta": int(delta[i, j]),
                    }
                )
    cells.sort(key=lambda c: (-abs(c["delta"]), c["true_class"], c["pred_class"]))
    return ConfusionDiff(
        class_order=a.class_order, delta=delta, top_changed=tuple(cells[:top_k])
    )


# --- sweeps ------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    fixed: FusionConfig = FusionConfig()

    def __post_init__(self) -> None:
        if self.parameter not in SWEEP_PARAMETERS:
            raise InvalidInput(
                f"unknown sweep parameter {self.parameter!r}; expected one of {SWEEP_PARAMETERS}"
            )
        if not self.values:
            raise InvalidInput("sweep needs at least one value")
        if list(self.values) != sorted(self.values):
            raise InvalidInput("sweep values must be sorted ascending")


@dataclass(frozen=True)
class SweepRow:
    value: float
    accuracy: float | None
    status: str
    error: str | None = None


def sweep(spec: SweepSpec, run_one: Callable[[str, float], EvalResult]) -> list[SweepRow]:
    """One evaluation per value, in spec order; failed rows do not abort the sweep."""
    rows: list[SweepRow] = []
    for value in spec.values:
        try:
            result = run_one(spec.parameter, value)
            rows.append(SweepRow(value=value, accuracy=result.accuracy, status="ok"))
        except Exception as exc:  # noqa: BLE001 - row-level isolation is the contract
            rows.append(SweepRow(value=value, accuracy=None, status="failed", error=str(exc)))
    return rows


def apply_sweep_value(cfg: FusionConfig, parameter: str, value: float) -> FusionConfig:
    """Fusion config with one swept parameter replaced (lambda/tau/depth)."""
    if parameter == "lambda":
        return FusionConfig(momentum=value, tolerance=cfg.tolerance, max_depth_used=cfg.max_depth_used)
    if parameter == "tau":
        return FusionConfig(momentum=cfg.momentum, tolerance=value, max_depth_used=cfg.max_depth_used)
    if parameter == "depth":
        return FusionConfig(momentum=cfg.momentum, tolerance=cfg.tolerance, max_depth_used=int(value))
    raise InvalidInput(f"parameter {parameter!r} does not apply to a fusion config")


def sweep_evaluate(
    spec: SweepSpec,
    manifest: DatasetManifest,
    image_embeddings: dict[str, UnitVector],
    label_embeddings: dict[str, UnitVector],
    tree=None,
    rebuild_tree: Callable[[float], object] | None = None,
) -> list[SweepRow]:
    """Standard sweep wiring: lambda/tau/depth rescore a fixed tree; group_ratio
    rebuilds the tree per value via `rebuild_tree`."""

    def run_one(parameter: str, value: float) -> EvalResult:
        if parameter == "group_ratio":
            if rebuild_tree is None:
                raise InvalidInput("group_ratio sweep requires tree build inputs")
            return evaluate(
                manifest, image_embeddings, label_embeddings, rebuild_tree(value), spec.fixed
            )
        cfg = apply_sweep_value(spec.fixed, parameter, value)
        return evaluate(manifest, image_embeddings, label_embeddings, tree, cfg)

    return sweep(spec, run_one)


def render_sweep_csv(rows: list[SweepRow], parameter: str) -> str:
    """Header: parameter,value,accuracy,status,error."""
    lines = ["parameter,value,accuracy,status,error"]
    for row in rows:
        accuracy = "" if row.accuracy is None else repr(row.accuracy)
        error = (row.error or "").replace(",", ";").replace("\n", " ")
        lines.append(f"{parameter},{row.value!r},{accuracy},{row.status},{error}")
    return "\n".join(lines) + "\n"
