import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from tannet.metrics import (
    average_precision,
    evaluate_scores,
    mean_ap,
    parse_protocol,
    sampled_frames,
    score_proposal,
    write_predictions,
)
from tannet.model import video_score


def ap_by_ranking(order, labels):
    # order lists item indices from best to worst
    hits, total = 0, 0.0
    for rank, i in enumerate(order, 1):
        if labels[i]:
            hits += 1
            total += hits / rank
    return total / sum(labels)


def test_hand_ranked_case():
    assert average_precision([0.9, 0.8, 0.1], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)
    assert average_precision([0.9, 0.8, 0.1], [1, 0, 1]) == pytest.approx(0.8333, abs=1e-4)


def test_perfect_ranking():
    assert average_precision([0.9, 0.5, 0.4, 0.1], [1, 1, 0, 0]) == 1.0


def test_tie_rule_keeps_input_order():
    # both tie orders enumerated: [1,0] first gives 1.0, the swap gives 0.5
    assert average_precision([0.3, 0.3], [1, 0]) == 1.0
    assert average_precision([0.3, 0.3], [0, 1]) == 0.5


def test_no_positives_is_excluded():
    assert average_precision([0.2, 0.1], [0, 0]) is None
    m, per = mean_ap(np.array([[0.9, 0.1], [0.1, 0.2]]), np.array([[1, 0], [0, 0]]))
    assert per[1] is None and m == 1.0


def test_length_mismatch():
    with pytest.raises(ValueError):
        average_precision([0.1, 0.2], [1])


@given(
    data=st.lists(st.tuples(st.floats(-5, 5, allow_nan=False), st.booleans()), min_size=1, max_size=30),
    transform=st.sampled_from([np.exp, lambda s: 3 * s + 1, np.tanh, lambda s: s**3, lambda s: 1 / (1 + np.exp(-s))]),
)
@settings(max_examples=80, deadline=None)
def test_monotone_transform_invariance(data, transform):
    scores = np.array([d[0] for d in data])
    labels = np.array([d[1] for d in data])
    assume(labels.any())
    t = transform(scores)
    # strictly increasing maps keep distinct scores distinct, except where float rounding merges them
    assume(len(np.unique(t)) == len(np.unique(scores)))
    assert average_precision(t, labels) == pytest.approx(average_precision(scores, labels), abs=1e-12)


@given(st.lists(st.booleans(), min_size=1, max_size=7))
@settings(max_examples=60, deadline=None)
def test_anti_oracle_is_brute_force_minimum(labels):
    labels = np.array(labels)
    assume(labels.any())
    worst = min(ap_by_ranking(p, labels) for p in itertools.permutations(range(len(labels))))
    best = max(ap_by_ranking(p, labels) for p in itertools.permutations(range(len(labels))))
    assert average_precision(1.0 - labels, labels) == pytest.approx(worst)
    assert average_precision(labels.astype(float), labels) == pytest.approx(best) == 1.0


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=12))
@settings(max_examples=60, deadline=None)
def test_ap_matches_ranking_oracle(data):
    scores = np.array([d[0] for d in data])
    labels = np.array([d[1] for d in data])
    assume(labels.any())
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    assert average_precision(scores, labels) == pytest.approx(ap_by_ranking(order, labels))


@pytest.mark.parametrize("rate", [0.1, 0.3, 0.5])
def test_random_scores_give_positive_rate(rate):
    rng = np.random.default_rng(int(rate * 100))
    labels = rng.random(20000) < rate
    aps = [average_precision(rng.random(labels.size), labels) for _ in range(5)]
    assert abs(np.mean(aps) - rate) < 0.05


def oracle_case(rng, N=6, T=16, K=5):
    labels = (rng.random((N, T, K)) < 0.3).astype(np.uint8)
    labels[0, :, 0] = 1
    return labels


@pytest.mark.parametrize("protocol", ["dense", "sampled:25", "sampled:4", ("sampled", 25)])
def test_oracle_scores_give_one(rng, protocol):
    labels = oracle_case(rng)
    rep = evaluate_scores(labels.astype(float), labels, protocol)
    assert rep.frame_map == 1.0 and rep.video_map == 1.0


def test_sampled_clamps_on_short_videos():
    np.testing.assert_array_equal(sampled_frames(16, 25), np.arange(16))
    idx = sampled_frames(100, 25)
    assert len(idx) == 25 and len(set(idx)) == 25 and idx[0] == 0 and idx[-1] == 99
    assert sampled_frames(9, 1).tolist() == [4]


def test_sampled_uses_only_chosen_frames(rng):
    labels = oracle_case(rng, T=16)
    scores = labels.astype(float)
    # damage the frames a 4-sample protocol skips; it must not notice
    keep = sampled_frames(16, 4)
    skip = np.setdiff1d(np.arange(16), keep)
    scores[:, skip] = 1 - scores[:, skip]
    assert evaluate_scores(scores, labels, "sampled:4").frame_map == 1.0
    assert evaluate_scores(scores, labels, "dense").frame_map < 1.0


def test_protocol_parsing():
    assert parse_protocol("dense") == ("dense", None)
    assert parse_protocol("sampled") == ("sampled", 25)
    assert parse_protocol("sampled:7") == ("sampled", 7)
    for bad in ("sampled:0", "every"):
        with pytest.raises(ValueError):
            parse_protocol(bad)


def test_report_lists_excluded_classes(rng):
    labels = oracle_case(rng)
    labels[:, :, 3] = 0
    rep = evaluate_scores(rng.random(labels.shape), labels, "dense")
    assert rep.excluded_classes == [3] and rep.per_class_ap[3] is None
    assert rep.frame_map == pytest.approx(np.mean([a for a in rep.per_class_ap if a is not None]))
    assert "# protocol=dense" in rep.summary()


def test_report_csv(tmp_path, rng):
    labels = oracle_case(rng)
    rep = evaluate_scores(rng.random(labels.shape), labels, "sampled:25")
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# protocol,sampled:25"
    assert lines[-2].startswith("frame_mAP,") and float(lines[-2].split(",")[1]) == rep.frame_map


def test_proposal_examples():
    s = np.zeros((8, 2))
    s[2:6, 0] = [0.2, 0.4, 0.6, 0.8]
    assert score_proposal(s, (2, 5), 0.5)[0] == pytest.approx(0.25)
    np.testing.assert_array_equal(score_proposal(s, (2, 5), 0.0), [0, 0])


@given(T=st.integers(1, 40), K=st.integers(1, 6), seed=st.integers(0, 999))
@settings(max_examples=40, deadline=None)
def test_full_proposal_equals_video_score(T, K, seed):
    s = np.random.default_rng(seed).random((T, K)).astype(np.float32)
    assert score_proposal(s, (0, T - 1), 1.0).tobytes() == video_score(s).tobytes()


@pytest.mark.parametrize("interval,act", [((3, 2), 1.0), ((-1, 2), 1.0), ((0, 8), 1.0), ((0, 1), 1.5)])
def test_proposal_rejects(interval, act):
    with pytest.raises(ValueError):
        score_proposal(np.zeros((8, 2)), interval, act)


def test_prediction_dump(tmp_path):
    s = np.arange(12, dtype=np.float32).reshape(1, 4, 3) / 12
    write_predictions(tmp_path / "p.csv", ["v0"], s)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "video_id,frame_idx,class_id,score"
    assert len(lines) == 13 and lines[5] == "v0,1,1,0.33333334"
