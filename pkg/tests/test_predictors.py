import numpy as np
import pytest
from hypothesis import given, strategies as st

from rdlda import predictors
from rdlda.predictors import (LatentReference, build_reference, euclidean_predict, hyperplane_predict,
                              hyperplane_scores)
from rdlda.scatter import LabeledBatch


def _hand_reference(means, A):
    means = np.asarray(means, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    return LatentReference(means, A, means @ A @ A.T, lda=None)


def _blobs(rng, c=3, d=4, per=20, spread=4.0):
    centres = rng.normal(scale=spread, size=(c, d))
    y = np.repeat(np.arange(c), per)
    return LabeledBatch(centres[y] + rng.normal(size=(c * per, d)), y, c)


def test_worked_hyperplane_example():
    ref = _hand_reference([[1.0, 0.0], [-1.0, 0.0]], np.eye(2))
    h = np.array([[2.0, 0.0], [0.3, 5.0]])
    d = hyperplane_scores(h, ref)
    np.testing.assert_allclose(d, [[1.5, -2.5], [-0.2, -0.8]], atol=1e-15)
    p, label = hyperplane_predict(h, ref)
    assert label[0] == 0
    sig = 1 / (1 + np.exp(-d))
    np.testing.assert_allclose(p, sig / sig.sum(axis=1, keepdims=True), rtol=1e-12)


def test_query_at_class_mean_symmetric_setup():
    ref = _hand_reference([[1.0, 0.0], [-1.0, 0.0]], np.eye(2))
    np.testing.assert_array_equal(hyperplane_predict(ref.class_means, ref)[1], [0, 1])
    np.testing.assert_array_equal(euclidean_predict(ref.class_means, ref), [0, 1])


def test_build_reference_orthonormal_setup():
    # means (+-1, 0) and within-class spread isotropic in the plane
    offsets = 0.1 * np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    X = np.vstack([offsets + [1.0, 0.0], offsets + [-1.0, 0.0]])
    ref = build_reference(LabeledBatch(X, np.repeat([0, 1], 4), 2), alpha=1.0, lam=1e-3)
    np.testing.assert_allclose(ref.class_means, [[1.0, 0.0], [-1.0, 0.0]], atol=1e-15)
    T = ref.hyperplane_normals
    assert abs(T[0, 1]) < 1e-12 and abs(T[1, 1]) < 1e-12
    assert T[0, 0] > 0 > T[1, 0]
    np.testing.assert_array_equal(T, ref.class_means @ ref.projection @ ref.projection.T)


def test_near_one_hot_latents(rng):
    y = np.repeat(np.arange(3), 10)
    H = np.eye(3)[y] + 1e-4 * rng.normal(size=(30, 3))
    ref = build_reference(LabeledBatch(H, y, 3))
    np.testing.assert_allclose(ref.class_means, np.eye(3), atol=5e-4)
    assert ref.projection.shape == (3, 2)


def test_reference_ignores_row_order(rng):
    b = _blobs(rng)
    perm = rng.permutation(b.n)
    a = build_reference(b, alpha=0.3)
    p = build_reference(LabeledBatch(b.features[perm], b.labels[perm], 3), alpha=0.3)
    assert a.class_means.tobytes() == p.class_means.tobytes()
    assert a.projection.tobytes() == p.projection.tobytes()
    assert a.hyperplane_normals.tobytes() == p.hyperplane_normals.tobytes()


def test_euclidean_tie_goes_to_lowest_index():
    ref = _hand_reference([[1.0, 0.0], [-1.0, 0.0]], np.eye(2))
    assert euclidean_predict([[0.0, 3.0]], ref)[0] == 0


def test_hyperplane_tie_goes_to_lowest_index():
    ref = _hand_reference([[1.0, 0.0], [-1.0, 0.0]], np.eye(2))
    assert hyperplane_predict([[0.0, 3.0]], ref)[1][0] == 0


def test_euclidean_matches_brute_force(rng):
    ref = build_reference(_blobs(rng))
    q = rng.normal(scale=4, size=(200, 4))
    expected = [min(range(3), key=lambda j: np.linalg.norm(x - ref.class_means[j])) for x in q]
    np.testing.assert_array_equal(euclidean_predict(q, ref), expected)


def test_far_queries_stay_finite():
    ref = _hand_reference([[1.0, 0.0], [-1.0, 0.0]], np.eye(2))
    p, label = hyperplane_predict([[0.0, 1e6]], ref)
    assert np.all(np.isfinite(p))
    p, label = hyperplane_predict([[-1e4, 0.0]], ref)
    np.testing.assert_allclose(p.sum(), 1.0)
    assert label[0] == 1


def test_width_mismatch(rng):
    ref = build_reference(_blobs(rng))
    for fn in (euclidean_predict, hyperplane_predict, predictors.lda_predict):
        with pytest.raises(ValueError, match="width"):
            fn(np.zeros((1, 3)), ref)


def test_unknown_predictor(rng):
    with pytest.raises(ValueError, match="unknown predictor"):
        predictors.predict("knn", np.zeros((1, 4)), build_reference(_blobs(rng)))


def test_predictors_agree_on_separated_blobs(rng):
    b = _blobs(rng, spread=8.0)
    ref = build_reference(b, alpha=0.5)
    q = b.features
    labels = {name: predictors.predict(name, q, ref) for name in predictors.PREDICTORS}
    for name, pred in labels.items():
        assert np.mean(pred == b.labels) > 0.97, name


@given(st.integers(0, 2 ** 32 - 1))
def test_probabilities_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    ref = build_reference(_blobs(rng))
    p, _ = hyperplane_predict(rng.normal(scale=10, size=(25, 4)), ref)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


@given(st.integers(0, 2 ** 32 - 1))
def test_normalization_never_reorders(seed):
    rng = np.random.default_rng(seed)
    ref = build_reference(_blobs(rng))
    q = rng.normal(scale=5, size=(25, 4))
    _, label = hyperplane_predict(q, ref)
    np.testing.assert_array_equal(label, np.argmax(hyperplane_scores(q, ref), axis=1))


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3))
def test_euclidean_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(3, 4))
    q = rng.normal(size=(30, 4))
    a = euclidean_predict(q, _hand_reference(means, np.eye(4)[:, :2]))
    b = euclidean_predict(scale * q, _hand_reference(scale * means, np.eye(4)[:, :2]))
    np.testing.assert_array_equal(a, b)
