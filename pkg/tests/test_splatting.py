import math

import numpy as np
import pytest

from splatfield.data import FieldDataset
from splatfield.field import AxesGaussian, GaussianField
from splatfield.splatting import (
    field_from_points, influence, influence_matrix, nadaraya_watson, predict,
    predict_unnormalized, weights,
)

from conftest import random_field

# frozen from a 30-digit mpmath evaluation of the same closed forms
EXP_HALF = 0.606530659712633423603799534991
EXP_ONE = 0.367879441171442321595523770161
PAIR_W_AT_5 = (0.800414801346267454978296611654, 0.199585198653732545021703388346)
PAIR_UNNORM_AT_15 = 2.82659311143086505745056210797


def test_influence_examples():
    assert influence(AxesGaussian([0.0], [0.0], [1.0]), [0.0]) == 1.0
    assert influence(AxesGaussian([0.0], [0.0], [1.0]), [1.0]) == pytest.approx(EXP_HALF, rel=1e-15)
    g = AxesGaussian([0.0, 0.0], [0.0, math.log(2.0)], [1.0])
    assert influence(g, [1.0, 2.0]) == pytest.approx(EXP_ONE, rel=1e-15)


def test_singleton_weights_and_prediction():
    f = GaussianField(np.array([[0.0, 0.0]]), np.zeros((1, 2)), np.array([[2.0, -1.0]]))
    for x in ([0.0, 0.0], [3.0, -4.0], [1e3, 1e3]):
        np.testing.assert_array_equal(weights(f, x), [1.0])
        np.testing.assert_array_equal(predict(f, x), [2.0, -1.0])
    np.testing.assert_array_equal(predict_unnormalized(f, [0.0, 0.0]), [2.0, -1.0])


def test_pair_weights(pair_field):
    np.testing.assert_allclose(weights(pair_field, [15.0]), [0.5, 0.5], rtol=1e-15)
    np.testing.assert_allclose(weights(pair_field, [5.0]), PAIR_W_AT_5, rtol=1e-14)


def test_pair_predictions(pair_field):
    np.testing.assert_allclose(predict(pair_field, [15.0]), [2.0], rtol=1e-15)
    np.testing.assert_allclose(predict_unnormalized(pair_field, [15.0]), [PAIR_UNNORM_AT_15], rtol=1e-14)
    assert abs(predict_unnormalized(pair_field, [1000.0])[0]) < 1e-300


def test_constant_values_predict_constant(rng):
    f = random_field(rng, 3, 2, 20)
    f = f.with_params(values=np.tile([1.5, -2.0], (20, 1)))
    X = rng.uniform(-3, 3, (50, 3))
    np.testing.assert_allclose(predict(f, X), np.tile([1.5, -2.0], (50, 1)), rtol=1e-14)


def test_far_point_falls_back_to_nearest_centre():
    f = GaussianField(np.array([[0.0], [10.0]]), np.log([[0.1], [0.1]]), np.array([[1.0], [2.0]]), 1e-4)
    np.testing.assert_array_equal(predict(f, [1e4]), [2.0])
    np.testing.assert_array_equal(predict(f, [-1e4]), [1.0])


def test_influence_matrix_examples(rng):
    f = GaussianField(np.array([[0.5, 0.5]]), np.zeros((1, 2)), np.ones((1, 1)))
    Z = influence_matrix(f, np.array([[0.5, 0.5]]))
    assert Z.shape == (1, 1) and Z[0, 0] == 1.0

    g = random_field(rng, 2, 1, 6, z_threshold=0.0)
    X = rng.uniform(-1, 1, (30, 2))
    dense = np.array([[influence(gi, x) for gi in g.gaussians] for x in X])
    np.testing.assert_allclose(influence_matrix(g, X).toarray(), dense, rtol=1e-14, atol=0)


def test_influence_matrix_threshold(rng):
    g = random_field(rng, 2, 1, 6, z_threshold=0.3)
    X = rng.uniform(-1, 1, (30, 2))
    Z = influence_matrix(g, X).toarray()
    assert np.all((Z == 0) | (Z >= 0.3))


def test_duplicate_columns_identical(rng):
    g = random_field(rng, 2, 1, 3)
    dup = GaussianField(np.vstack([g.mu, g.mu[:1]]), np.vstack([g.log_h, g.log_h[:1]]),
                        np.vstack([g.values, g.values[:1]]), 0.0)
    Z = influence_matrix(dup, rng.uniform(-1, 1, (40, 2))).toarray()
    np.testing.assert_array_equal(Z[:, 0], Z[:, 3])
    cos = Z[:, 0] @ Z[:, 3] / (np.linalg.norm(Z[:, 0]) * np.linalg.norm(Z[:, 3]))
    assert cos == pytest.approx(1.0, abs=1e-15)


def test_nadaraya_watson_matches_static_field(rng):
    coords = rng.uniform(0, 1, (60, 2))
    values = rng.normal(size=(60, 2))
    ds = FieldDataset(coords, values)
    X = rng.uniform(0, 1, (100, 2))
    np.testing.assert_allclose(nadaraya_watson(ds, 0.15, X),
                               predict(field_from_points(coords, values, 0.15), X), atol=1e-12)


def test_nadaraya_watson_trivial_cases(rng):
    ds = FieldDataset(rng.uniform(size=(20, 1)), np.full((20, 1), 7.0))
    np.testing.assert_allclose(nadaraya_watson(ds, 0.2, rng.uniform(size=(5, 1))), 7.0, rtol=1e-15)
    single = FieldDataset(np.array([[0.2]]), np.array([[-3.0]]))
    np.testing.assert_array_equal(nadaraya_watson(single, 0.1, np.array([[0.2], [50.0]])), [[-3.0], [-3.0]])
    with pytest.raises(ValueError):
        nadaraya_watson(single, 0.0, [0.0])


def test_query_dimension_checked(rng):
    f = random_field(rng, 2, 1, 3)
    with pytest.raises(ValueError):
        predict(f, np.zeros((4, 3)))
