import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tannet import TANClassifier
from tannet._validation import check_clips, check_frame_labels

TINY = dict(channels=(8, 16, 16, 16), blocks_per_level=(1, 1, 1, 1), epochs=2, batch_size=4)


@pytest.fixture(scope="module")
def fitted(small_data):
    return TANClassifier(**TINY, random_state=3).fit(small_data.clips, small_data.labels)


def test_params_round_trip():
    est = TANClassifier(variant="res2d", epochs=3)
    params = est.get_params()
    assert params["variant"] == "res2d" and params["epochs"] == 3
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(lr=0.01)
    assert est.lr == 0.01


def test_unfitted_raises(small_data):
    with pytest.raises(NotFittedError):
        TANClassifier().predict(small_data.clips)


def test_fit_sets_attributes(fitted, small_data):
    assert fitted.n_classes_ == 8
    np.testing.assert_array_equal(fitted.classes_, np.arange(8))
    assert fitted.config_.temporal_len == 16 and fitted.config_.input_spatial == 32
    assert [r.epoch for r in fitted.history_] == [0, 1]


def test_output_shapes(fitted, small_data):
    X = small_data.clips[:3]
    proba = fitted.predict_proba(X)
    assert proba.shape == (3, 16, 8) and proba.min() >= 0 and proba.max() <= 1
    pred = fitted.predict(X)
    assert pred.dtype == np.uint8 and set(np.unique(pred)) <= {0, 1}
    logits = fitted.decision_function(X)
    np.testing.assert_allclose(1 / (1 + np.exp(-logits)), proba, rtol=1e-5, atol=1e-6)


def test_single_clip_input(fitted, small_data):
    assert fitted.predict_proba(small_data.clips[0]).shape == (1, 16, 8)


def test_score_is_frame_map(fitted, small_data):
    s = fitted.score(small_data.clips, small_data.labels)
    assert 0.0 <= s <= 1.0


def test_same_random_state_same_model(small_data):
    a = TANClassifier(**TINY, random_state=1).fit(small_data.clips[:4], small_data.labels[:4])
    b = TANClassifier(**TINY, random_state=1).fit(small_data.clips[:4], small_data.labels[:4])
    np.testing.assert_array_equal(a.predict_proba(small_data.clips[:2]), b.predict_proba(small_data.clips[:2]))


def test_wrong_frame_size_at_predict(fitted):
    with pytest.raises(ValueError, match="32x32"):
        fitted.predict(np.zeros((1, 16, 3, 64, 64), dtype=np.float32))


@pytest.mark.parametrize(
    "X,msg",
    [
        (np.zeros((2, 16, 1, 32, 32)), "N, T, 3, H, W"),
        (np.zeros((2, 16, 3, 32, 16)), "square"),
        (np.full((1, 4, 3, 32, 32), np.nan), "NaN"),
        (np.array([["a"]]), "numeric"),
    ],
)
def test_check_clips(X, msg):
    with pytest.raises(ValueError, match=msg):
        check_clips(X)


def test_check_labels():
    assert check_frame_labels(np.ones((4, 2)), 1, 4).shape == (1, 4, 2)
    with pytest.raises(ValueError, match="0/1"):
        check_frame_labels(np.full((1, 4, 2), 2), 1, 4)
    with pytest.raises(ValueError, match="cover"):
        check_frame_labels(np.zeros((1, 5, 2)), 1, 4)


def test_fit_rejects_mismatched_labels(small_data):
    with pytest.raises(ValueError):
        TANClassifier(**TINY).fit(small_data.clips, small_data.labels[:3])
