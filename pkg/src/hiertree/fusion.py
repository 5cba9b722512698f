"""Similarity scoring and multi-level score fusion.

Per class, an image is scored against the class's root-to-leaf description
embeddings. The trusted prefix of those level scores is the longest run where
each level improves on the previous one by more than `tolerance`; its running
average blends with the plain label-embedding cosine under `momentum`:

    s = (1 - momentum) * (x . t) + momentum * r

Deeper levels carry more specific descriptions, so a level that scores worse
than its predecessor (the description stopped matching) drops itself and
everything below it from the average.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embedding import UnitVector, cosine, stack
from .errors import (
    DimensionMismatch,
    EmptyClassSet,
    EmptyInput,
    InvalidInput,
    LengthMismatch,
)


@dataclass(frozen=True)
class ClassDescriptionMatrix:
    """Ordered root-to-leaf description embeddings for one class."""

    class_id: str
    rows: tuple[UnitVector, ...]

    def __post_init__(self) -> None:
        if not self.rows:
            raise EmptyInput(f"class {self.class_id!r} has no description rows")
        dims = {r.dim for r in self.rows}
        if len(dims) != 1:
            raise DimensionMismatch(f"mixed dims in rows: {sorted(dims)}")

    @property
    def depth_count(self) -> int:
        return len(self.rows)

    @property
    def dim(self) -> int:
        return self.rows[0].dim


@dataclass(frozen=True)
class FusionConfig:
    """momentum is the weight on the hierarchical running average (0 = plain
    label-cosine classification); tolerance is the minimum per-level score
    gain required to keep trusting deeper levels; max_depth_used truncates
    the description matrix before fusion (depth ablations)."""

    momentum: float = 0.9
    tolerance: float = 0.0
    max_depth_used: int | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.momentum <= 1.0):
            raise InvalidInput("momentum must be in [0, 1]")
        if self.tolerance < 0.0:
            raise InvalidInput("tolerance must be >= 0")
        if self.max_depth_used is not None and self.max_depth_used < 1:
            raise InvalidInput("max_depth_used must be >= 1")

    def to_json_obj(self) -> dict:
        return {
            "momentum": self.momentum,
            "tolerance": self.tolerance,
            "max_depth_used": self.max_depth_used,
        }


@dataclass(frozen=True)
class ScoreTrace:
    """Everything that went into one (image, class) score."""

    class_id: str
    q: tuple[float, ...]
    included: tuple[bool, ...]
    r: float
    baseline: float
    s: float


def level_scores(x: UnitVector, matrix: ClassDescriptionMatrix) -> list[float]:
    """Cosine of the image against each description level, root to leaf."""
    return [cosine(x, row) for row in matrix.rows]


def fused_running_average(q: list[float], tolerance: float) -> tuple[float, list[bool]]:
    """Mean over the longest prefix where each step gains more than `tolerance`.

    The first level is always trusted; level j+1 joins only while
    q[j+1] > q[j] + tolerance held at every earlier step.
    """
    if not q:
        raise EmptyInput("no level scores")
    if any(not math.isfinite(v) for v in q):
        raise InvalidInput("level scores must be finite")
    p = 1
    while p < len(q) and q[p] > q[p - 1] + tolerance:
        p += 1
    r = sum(q[:p]) / p
    included = [i < p for i in range(len(q))]
    return r, included


def prefix_average_batch(scores: np.ndarray, tolerance: float) -> np.ndarray:
    """Vectorized fused running average over rows of an (n, M) score array."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] < 1:
        raise InvalidInput("expected an (n, M) score array with M >= 1")
    if scores.shape[1] == 1:
        return scores[:, 0].copy()
    gains = scores[:, 1:] > scores[:, :-1] + tolerance
    mask = np.cumprod(gains, axis=1, dtype=np.float64)
    counts = 1.0 + mask.sum(axis=1)
    sums = scores[:, 0] + (scores[:, 1:] * mask).sum(axis=1)
    return sums / counts


def final_score(
    x: UnitVector,
    label: UnitVector,
    matrix: ClassDescriptionMatrix,
    cfg: FusionConfig,
) -> ScoreTrace:
    """Full fused score for one (image, class) pair, with its trace."""
    rows = matrix.rows
    if cfg.max_depth_used is not None:
        rows = rows[: cfg.max_depth_used]
    q = [cosine(x, row) for row in rows]
    r, included = fused_running_average(q, cfg.tolerance)
    baseline = cosine(x, label)
    s = (1.0 - cfg.momentum) * baseline + cfg.momentum * r
    return ScoreTrace(
        class_id=matrix.class_id,
        q=tuple(q),
        included=tuple(included),
        r=r,
        baseline=baseline,
        s=s,
    )


def classify(
    x: UnitVector,
    classes: list[tuple[UnitVector, ClassDescriptionMatrix]],
    cfg: FusionConfig,
) -> tuple[str, list[ScoreTrace]]:
    """Argmax of the fused score; ties go to the lexicographically smallest id."""
    if not classes:
        raise EmptyClassSet("no candidate classes")
    traces = [final_score(x, label, matrix, cfg) for label, matrix in classes]
    best = min(traces, key=lambda t: (-t.s, t.class_id))
    return best.class_id, traces


# --- explanation reports --------------------------------------------------------

@dataclass(frozen=True)
class LevelExplanation:
    node_id: str
    lines: tuple[str, ...]
    q: float
    included: bool


@dataclass(frozen=True)
class TraceExplanation:
    class_id: str
    baseline: float
    r: float
    s: float
    levels: tuple[LevelExplanation, ...]

    def to_json_obj(self) -> dict:
        return {
            "class_id": self.class_id,
            "baseline": self.baseline,
            "q": [lv.q for lv in self.levels],
            "included": [lv.included for lv in self.levels],
            "r": self.r,
            "s": self.s,
            "levels": [
                {"node_id": lv.node_id, "lines": list(lv.lines)} for lv in self.levels
            ],
        }


def explain(
    trace: ScoreTrace, levels: list[tuple[str, tuple[str, ...]]]
) -> TraceExplanation:
    """Align a trace with its per-level description lines, root to leaf."""
    if len(levels) != len(trace.q):
        raise LengthMismatch(
            f"{len(trace.q)} levels scored but {len(levels)} description levels given"
        )
    if any(not lines for _, lines in levels):
        raise LengthMismatch("a level has no description lines")
    return TraceExplanation(
        class_id=trace.class_id,
        baseline=trace.baseline,
        r=trace.r,
        s=trace.s,
        levels=tuple(
            LevelExplanation(node_id=node_id, lines=tuple(lines), q=q, included=inc)
            for (node_id, lines), q, inc in zip(levels, trace.q, trace.included)
        ),
    )


@dataclass(frozen=True)
class ExplanationReport:
    image_id: str
    predicted: str
    traces: tuple[TraceExplanation, ...]

    def to_json_obj(self) -> dict:
        return {
            "image_id": self.image_id,
            "predicted": self.predicted,
            "traces": [t.to_json_obj() for t in self.traces],
        }

    def to_text(self) -> str:
        out = [f"image {self.image_id}: predicted {self.predicted}"]
        for trace in self.traces:
            out.append(
                f"  class {trace.class_id}: baseline={trace.baseline:+.4f} "
                f"r={trace.r:+.4f} s={trace.s:+.4f}"
            )
            for i, lv in enumerate(trace.levels, start=1):
                status = "included" if lv.included else "dropped (score reduction)"
                out.append(f"    level {i} [{lv.node_id}] q={lv.q:+.4f} {status}")
                for line in lv.lines:
                    out.append(f"      - {line}")
        return "\n".join(out) + "\n"


# --- batch kernel ----------------------------------------------------------------

def batch_final_scores(
    images: np.ndarray,
    label: UnitVector,
    matrix: ClassDescriptionMatrix,
    cfg: FusionConfig,
) -> np.ndarray:
    """Fused scores of many images against one class; images is (n, dim) float64."""
    if images.shape[1] != matrix.dim:
        raise DimensionMismatch(f"images dim {images.shape[1]} vs matrix dim {matrix.dim}")
    if label.dim != matrix.dim:
        raise DimensionMismatch(f"label dim {label.dim} vs matrix dim {matrix.dim}")
    rows = matrix.rows
    if cfg.max_depth_used is not None:
        rows = rows[: cfg.max_depth_used]
    d_mat = stack(list(rows)).astype(np.float64)
    q = np.clip(images @ d_mat.T, -1.0, 1.0)
    r = prefix_average_batch(q, cfg.tolerance)
    baseline = np.clip(images @ label.values.astype(np.float64), -1.0, 1.0)
    return (1.0 - cfg.momentum) * baseline + cfg.momentum * r
