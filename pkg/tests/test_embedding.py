import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiertree import RawVector, cosine, mean, normalize
from hiertree.embedding import stack
from hiertree.errors import DimensionMismatch, EmptyInput, ZeroVector

finite_components = st.floats(
    min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False
)
vectors = st.lists(finite_components, min_size=1, max_size=16).filter(
    lambda v: float(np.linalg.norm(np.asarray(v, dtype=np.float32))) > 1e-3
)


class TestNormalize:
    def test_three_four_five(self):
        u = normalize(RawVector([3.0, 4.0]))
        assert np.allclose(u.values, [0.6, 0.8], atol=1e-6)

    def test_already_unit(self):
        u = normalize(RawVector([1.0, 0.0, 0.0]))
        assert np.allclose(u.values, [1.0, 0.0, 0.0], atol=1e-7)

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVector):
            normalize(RawVector([0.0, 0.0]))

    def test_norm_within_tolerance(self):
        u = normalize(RawVector(np.full(768, 0.013)))
        assert abs(float(np.linalg.norm(u.values.astype(np.float64))) - 1.0) <= 1e-5

    @given(vectors)
    def test_idempotent(self, values):
        once = normalize(values)
        twice = normalize(once)
        assert np.allclose(once.values, twice.values, atol=1e-6)

    @given(vectors)
    def test_direction_preserved(self, values):
        u = normalize(values)
        arr = np.asarray(values, dtype=np.float64)
        assert np.dot(u.values.astype(np.float64), arr) > 0


class TestCosine:
    def test_self_similarity(self):
        u = normalize([0.3, -0.2, 0.9])
        assert cosine(u, u) == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal(self):
        assert cosine(normalize([1, 0]), normalize([0, 1])) == 0.0

    def test_antipodal(self):
        assert cosine(normalize([1, 0]), normalize([-1, 0])) == -1.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine(normalize([1, 0]), normalize([1, 0, 0]))

    @given(vectors)
    def test_symmetric_exactly(self, values):
        a = normalize(values)
        try:
            b = normalize([v + 1.0 for v in reversed(values)])
        except ZeroVector:
            return
        assert cosine(a, b) == cosine(b, a)

    @given(vectors)
    def test_range(self, values):
        u = normalize(values)
        v = normalize(list(reversed(values)))
        assert -1.0 <= cosine(u, v) <= 1.0


class TestMean:
    def test_singleton(self):
        u = normalize([0.6, 0.8])
        m = mean([u])
        assert np.allclose(m.values, u.values, atol=1e-7)

    def test_symmetry(self):
        m = mean([normalize([1, 0]), normalize([0, 1])])
        assert np.allclose(m.values, [np.sqrt(2) / 2, np.sqrt(2) / 2], atol=1e-6)

    def test_cancellation(self):
        with pytest.raises(ZeroVector):
            mean([normalize([1, 0]), normalize([-1, 0])])

    def test_empty(self):
        with pytest.raises(EmptyInput):
            mean([])

    def test_mixed_dims(self):
        with pytest.raises(DimensionMismatch):
            mean([normalize([1, 0]), normalize([1, 0, 0])])

    @given(st.lists(vectors.filter(lambda v: len(v) == 4), min_size=2, max_size=6))
    def test_permutation_invariant(self, value_lists):
        vs = [normalize(v) for v in value_lists]
        try:
            forward = mean(vs)
            backward = mean(list(reversed(vs)))
        except ZeroVector:
            return
        assert np.allclose(forward.values, backward.values, atol=1e-6)


class TestVectorTypes:
    def test_unit_vector_immutable(self):
        u = normalize([1.0, 2.0])
        with pytest.raises(ValueError):
            u.values[0] = 5.0

    def test_raw_vector_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            RawVector([1.0, float("nan")])

    def test_raw_vector_rejects_empty(self):
        with pytest.raises(EmptyInput):
            RawVector([])

    def test_stack_shape(self):
        mat = stack([normalize([1, 0]), normalize([0, 1])])
        assert mat.shape == (2, 2) and mat.dtype == np.float32

    def test_stored_as_float32(self):
        assert normalize([1, 1, 1]).values.dtype == np.float32
