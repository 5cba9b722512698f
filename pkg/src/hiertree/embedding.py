"""Fixed-dimension embedding vectors: normalization, cosine, mean aggregation.

Vectors are stored as float32 (typical encoder output precision); dot products
and means accumulate in float64 to avoid summation drift at dim ~ 768. All
values are immutable after construction and safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyInput, ZeroVector


def _as_f32(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float32).reshape(-1)
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class RawVector:
    """Pre-normalization vector as ingested from a provider or file."""

    values: np.ndarray

    def __init__(self, values) -> None:
        arr = _as_f32(values)
        if arr.size == 0:
            raise EmptyInput("vector must have at least one component")
        if not np.all(np.isfinite(arr)):
            raise ValueError("vector components must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class UnitVector:
    """L2-normalized vector; construct via :func:`normalize`."""

    values: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def isclose(self, other: "UnitVector", atol: float = 1e-6) -> bool:
        return self.dim == other.dim and bool(
            np.allclose(self.values, other.values, atol=atol, rtol=0.0)
        )


def _wrap_unit(arr: np.ndarray, copy: bool = True) -> UnitVector:
    # Bypass dataclass __init__: arr is already normalized f32. With
    # copy=False the caller guarantees a non-writeable float32 array.
    v = object.__new__(UnitVector)
    if copy:
        arr = arr.astype(np.float32, copy=True)
        arr.flags.writeable = False
    object.__setattr__(v, "values", arr)
    return v


def normalize(v: RawVector | UnitVector | np.ndarray | list) -> UnitVector:
    """Scale a vector to unit L2 norm, preserving direction.

    Raises ZeroVector when the norm is at or below float32 machine epsilon
    times the dimension (the direction is meaningless at that scale).
    """
    arr = v.values if isinstance(v, (RawVector, UnitVector)) else _as_f32(v)
    if arr.size == 0:
        raise EmptyInput("vector must have at least one component")
    norm = float(np.linalg.norm(arr.astype(np.float64)))
    if norm <= float(np.finfo(np.float32).eps) * arr.size:
        raise ZeroVector(f"cannot normalize vector with norm {norm!r}")
    return _wrap_unit((arr.astype(np.float64) / norm).astype(np.float32))


def cosine(a: UnitVector, b: UnitVector) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1].

    Clamping absorbs the ~1e-7 rounding excursions that would otherwise break
    downstream range invariants.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"dim {a.dim} vs {b.dim}")
    dot = float(np.dot(a.values.astype(np.float64), b.values.astype(np.float64)))
    return min(1.0, max(-1.0, dot))


def mean(vs: list[UnitVector]) -> UnitVector:
    """Arithmetic mean of unit vectors, re-normalized.

    Permutation-invariant up to float addition order; raises ZeroVector when
    the inputs cancel out.
    """
    if not vs:
        raise EmptyInput("mean of an empty vector list")
    dim = vs[0].dim
    acc = np.zeros(dim, dtype=np.float64)
    for v in vs:
        if v.dim != dim:
            raise DimensionMismatch(f"dim {v.dim} vs {dim}")
        acc += v.values.astype(np.float64)
    acc /= len(vs)
    norm = float(np.linalg.norm(acc))
    if norm <= float(np.finfo(np.float32).eps) * dim:
        raise ZeroVector("mean vector vanishes; inputs cancel out")
    return _wrap_unit((acc / norm).astype(np.float32))


def stack(vs: list[UnitVector]) -> np.ndarray:
    """Rows of unit vectors as one float32 matrix (no copy of semantics, just layout)."""
    if not vs:
        raise EmptyInput("cannot stack an empty vector list")
    dim = vs[0].dim
    for v in vs:
        if v.dim != dim:
            raise DimensionMismatch(f"dim {v.dim} vs {dim}")
    return np.stack([v.values for v in vs])


def from_f32_array(arr: np.ndarray, copy: bool = True) -> UnitVector:
    """Wrap an already-unit float32 array without re-normalizing.

    Caller asserts unit norm; used by loaders that validated norm themselves.
    With copy=False the array must already be float32 and non-writeable
    (e.g. a row view of a frozen matrix); it is shared, not duplicated.
    """
    if not copy and isinstance(arr, np.ndarray) and arr.dtype == np.float32 and not arr.flags.writeable:
        return _wrap_unit(arr, copy=False)
    return _wrap_unit(np.asarray(arr, dtype=np.float32))
