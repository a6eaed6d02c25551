import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import hadamard

from pcdvq.errors import DegenerateError, DimensionError
from pcdvq.transforms import (
    PolarVector,
    deregularize_matrix,
    from_polar,
    fwht,
    inverse_randomized_hadamard,
    random_signs,
    randomized_hadamard,
    regularize_matrix,
    to_polar,
)


def test_fwht_small_examples():
    np.testing.assert_allclose(fwht(np.array([1.0, 0.0])), [1 / math.sqrt(2)] * 2, atol=1e-15)
    np.testing.assert_allclose(fwht(np.ones(4)), [2.0, 0.0, 0.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 8, 64, 512])
def test_fwht_matches_sylvester_matrix(n, rng):
    x = rng.standard_normal(n)
    np.testing.assert_allclose(fwht(x), hadamard(n) @ x / math.sqrt(n), atol=1e-12)


def test_fwht_is_an_involution(rng):
    x = rng.standard_normal(64)
    np.testing.assert_allclose(fwht(fwht(x)), x, atol=1e-6)


def test_fwht_transforms_columns_independently(rng):
    x = rng.standard_normal((32, 5))
    expected = np.stack([fwht(x[:, j]) for j in range(5)], axis=1)
    np.testing.assert_allclose(fwht(x), expected, atol=1e-14)


@pytest.mark.parametrize("n", [0, 3, 12, 1000])
def test_fwht_rejects_other_lengths(n):
    with pytest.raises(DimensionError):
        fwht(np.ones(n))


def test_random_signs_are_deterministic_and_seed_dependent():
    a = random_signs(1024, 7)
    assert set(np.unique(a)) == {-1.0, 1.0}
    np.testing.assert_array_equal(a, random_signs(1024, 7))
    assert np.any(a != random_signs(1024, 8))


def test_randomized_hadamard_basis_vector_is_flat():
    n = 1024
    e1 = np.zeros(n)
    e1[0] = 1.0
    y = randomized_hadamard(e1, 3)
    np.testing.assert_allclose(np.abs(y), 1 / math.sqrt(n), rtol=1e-12)
    # signed first column of the explicit matrix
    explicit = hadamard(n) @ (random_signs(n, 3) * e1) / math.sqrt(n)
    np.testing.assert_allclose(y, explicit, atol=1e-14)


def test_randomized_hadamard_isometry_and_inverse(rng):
    for _ in range(100):
        x = rng.standard_normal(256) * rng.uniform(1e-3, 1e3)
        y = randomized_hadamard(x, 11)
        assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(x), rel=1e-5)
        np.testing.assert_allclose(inverse_randomized_hadamard(y, 11), x, atol=1e-6 * np.abs(x).max())


def test_regularize_constant_column():
    r = regularize_matrix(np.ones((4, 1), dtype=np.float32), 0)
    assert r.scales[0] == pytest.approx(1.0)
    assert float(np.sum(r.values.astype(np.float64) ** 2)) == pytest.approx(4.0, rel=1e-6)


def test_regularize_column_norms(rng):
    w = rng.standard_normal((256, 64)).astype(np.float32) * rng.uniform(0.01, 10, 64).astype(np.float32)
    r = regularize_matrix(w, 5)
    sq = np.sum(r.values.astype(np.float64) ** 2, axis=0)
    np.testing.assert_allclose(sq, 256.0, rtol=1e-5)


def test_regularized_gaussian_entries_look_standard_normal():
    w = np.random.default_rng(0).standard_normal((4096, 512)).astype(np.float32)
    vals = regularize_matrix(w, 1).values.astype(np.float64)
    assert abs(vals.mean()) < 0.01
    assert 0.99 <= vals.var() <= 1.01


def test_regularize_rejects_zero_column_and_bad_rows():
    w = np.ones((8, 3), dtype=np.float32)
    w[:, 1] = 0
    with pytest.raises(DegenerateError):
        regularize_matrix(w, 0)
    with pytest.raises(DimensionError):
        regularize_matrix(np.ones((12, 3), dtype=np.float32), 0)


def test_deregularize_round_trip(rng):
    w = rng.standard_normal((128, 32)).astype(np.float32)
    back = deregularize_matrix(regularize_matrix(w, 9))
    assert np.max(np.abs(back - w)) < 1e-4
    np.testing.assert_allclose(np.linalg.norm(back, axis=0), np.linalg.norm(w, axis=0), rtol=1e-5)


def test_deregularize_constant_columns():
    w = np.tile(np.array([1.5, -2.0, 0.25], dtype=np.float32), (64, 1))
    np.testing.assert_allclose(deregularize_matrix(regularize_matrix(w, 2)), w, rtol=1e-6)


def test_to_polar_examples():
    pv = to_polar(np.array([1.0, 0.0]))
    np.testing.assert_allclose(pv.angles, [0.0])
    assert pv.radius == 1.0

    pv = to_polar(np.array([0.0, -1.0]))
    np.testing.assert_allclose(pv.angles, [3 * math.pi / 2])
    np.testing.assert_allclose(from_polar(pv), [0.0, -1.0], atol=1e-15)

    pv = to_polar(np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(pv.angles, [math.pi / 2, math.pi / 2])
    assert pv.radius == 1.0


def test_to_polar_rejects_zero_vector():
    with pytest.raises(DegenerateError):
        to_polar(np.zeros(8))


def test_from_polar_examples():
    np.testing.assert_allclose(from_polar(PolarVector(np.zeros(7), 2.5)), [2.5] + [0.0] * 7)
    np.testing.assert_array_equal(from_polar(PolarVector(np.array([0.3, 1.0, 4.0]), 0.0)), np.zeros(4))


@settings(max_examples=300, deadline=None)
@given(
    arrays(np.float64, st.integers(2, 16), elements=st.floats(-1e3, 1e3, allow_nan=False))
    .filter(lambda v: np.linalg.norm(v) > 1e-6)
)
def test_polar_round_trip_property(v):
    pv = to_polar(v)
    assert np.all(pv.angles[:-1] >= 0) and np.all(pv.angles[:-1] <= math.pi)
    assert 0 <= pv.angles[-1] < 2 * math.pi
    assert pv.radius == pytest.approx(np.linalg.norm(v), rel=1e-12)
    np.testing.assert_allclose(from_polar(pv), v, atol=1e-9 * np.linalg.norm(v))
