"""Caption metrics against independent brute-force oracles, plus dense eval."""

import math

import numpy as np
import pytest

from eventcap import ValidationError
from eventcap.data.annotations import VideoAnnotation
from eventcap.data.types import EventAnnotation
from eventcap.metrics import (
    DENSE_THRESHOLDS,
    ScoreReport,
    bleu4,
    cider,
    cider_scores,
    dense_caption_eval,
    meteor_lite,
)

from oracles import bleu4_oracle, cider_oracle, meteor_oracle, random_sentences


# ---------------------------------------------------------------------------
# BLEU@4


def test_bleu4_frozen_values():
    assert bleu4("a b c d".split(), ["a b c d".split()]) == pytest.approx(1.0, abs=1e-12)
    # one word short: every n-gram matches, brevity penalty exp(1 - 5/4)
    got = bleu4("a b c d".split(), ["a b c d e".split()])
    assert got == pytest.approx(math.exp(-0.25), abs=1e-12)
    assert got == pytest.approx(0.7788007830714049, abs=1e-12)


def test_bleu4_zero_cases():
    assert bleu4(["x"], [["y"]]) == 0.0  # no unigram match
    assert bleu4(["a", "b", "c"], [["a", "b", "c"]]) == 0.0  # no 4-gram exists
    assert bleu4(["a", "b", "c", "d"], [["a", "x", "c", "d"]]) == 0.0  # 4-gram miss


def test_bleu4_reference_length_tie_prefers_shorter():
    cand = "a b c d e f".split()  # c = 6
    refs = ["a b c d".split(), "a b c d e f g h".split()]  # both |len - 6| = 2
    got = bleu4(cand + cand[:0], refs)
    # r = 4 <= c: no brevity penalty applies; with r = 8 it would
    counted = bleu4(cand, refs)
    assert counted == got
    only_long = bleu4(cand, ["a b c d e f g h".split()])
    assert counted > only_long  # BP hit when the short ref is removed


def test_bleu4_validation():
    with pytest.raises(ValidationError):
        bleu4([], [["a"]])
    with pytest.raises(ValidationError):
        bleu4(["a"], [])
    with pytest.raises(ValidationError):
        bleu4(["a"], [["a"], []])


def test_bleu4_matches_oracle_randomized():
    rng = np.random.default_rng(0)
    for _ in range(150):
        cand, refs = random_sentences(rng)
        got = bleu4(cand, refs)
        want = bleu4_oracle(cand, refs)
        assert abs(got - want) < 1e-9
        assert 0.0 <= got <= 1.0


# ---------------------------------------------------------------------------
# METEOR-lite


def test_meteor_frozen_values():
    # identical 4-token sentence: P = R = 1, fmean = 1, one chunk,
    # penalty 0.5 * (1/4)^3 = 1/128
    got = meteor_lite("a b c d".split(), ["a b c d".split()])
    assert got == pytest.approx(0.9921875, abs=1e-12)
    assert got == pytest.approx(127.0 / 128.0, abs=1e-12)
    # single identical token: penalty 0.5 * 1 = 0.5
    assert meteor_lite(["a"], [["a"]]) == pytest.approx(0.5, abs=1e-12)


def test_meteor_zero_and_bounds():
    assert meteor_lite(["x"], [["y"]]) == 0.0
    rng = np.random.default_rng(1)
    for _ in range(100):
        cand, refs = random_sentences(rng)
        s = meteor_lite(cand, refs)
        assert 0.0 <= s < 1.0


def test_meteor_takes_max_over_references():
    cand = "a b c".split()
    weak = ["a", "x", "y"]
    strong = "a b c".split()
    alone = meteor_lite(cand, [weak])
    both = meteor_lite(cand, [weak, strong])
    assert both == meteor_lite(cand, [strong])
    assert both > alone


def test_meteor_chunk_ordering_matters():
    # same matched words, contiguous vs scattered: fewer chunks scores higher
    ref = "a b c d e".split()
    contiguous = meteor_lite("a b c".split(), [ref])
    scattered = meteor_lite(["a", "c", "e"], [ref])
    assert contiguous > scattered


def test_meteor_matches_oracle_randomized():
    rng = np.random.default_rng(2)
    for _ in range(150):
        cand, refs = random_sentences(rng, max_len=8)
        got = meteor_lite(cand, refs)
        want = meteor_oracle(cand, refs)
        assert abs(got - want) < 1e-9


def test_meteor_long_sentence_fallback_in_bounds():
    # beyond the exact-search limit the first-fit path runs; it stays a
    # valid score and equals the exact value on a contiguous match
    cand = [f"w{i}" for i in range(20)]
    assert meteor_lite(cand, [list(cand)]) == pytest.approx(
        (10.0 / 10.0) * (1.0 - 0.5 * (1.0 / 20.0) ** 3), abs=1e-12)
    rng = np.random.default_rng(3)
    for _ in range(50):
        cand = [f"t{rng.integers(6)}" for _ in range(int(rng.integers(17, 30)))]
        ref = [f"t{rng.integers(6)}" for _ in range(int(rng.integers(17, 30)))]
        s = meteor_lite(cand, [ref])
        assert 0.0 <= s < 1.0


# ---------------------------------------------------------------------------
# CIDEr


def test_cider_frozen_single_key():
    # one key: idf is uniform, cosine of identical vectors is 1 for all n,
    # so the score is exactly 10
    got = cider({"k": "a b c d e".split()}, {"k": ["a b c d e".split()]})
    assert got == pytest.approx(10.0, abs=1e-12)


def test_cider_matches_oracle_randomized():
    rng = np.random.default_rng(4)
    for _ in range(120):
        n_keys = int(rng.integers(1, 5))
        cands, refs = {}, {}
        for k in range(n_keys):
            cand, rs = random_sentences(rng)
            cands[f"k{k}"] = cand
            refs[f"k{k}"] = rs
        got = cider(cands, refs)
        per_key = cider_scores(cands, refs)
        want_mean, want_per_key = cider_oracle(cands, refs)
        assert abs(got - want_mean) < 1e-9
        for k in per_key:
            assert abs(per_key[k] - want_per_key[k]) < 1e-9
            assert 0.0 <= per_key[k] <= 10.0 + 1e-12


def test_cider_validation():
    with pytest.raises(ValidationError):
        cider({"a": ["x"]}, {"b": [["x"]]})
    with pytest.raises(ValidationError):
        cider({}, {})


def test_cider_unseen_gram_uses_clamped_df():
    # candidate gram absent from every reference set: idf = log(N / 1)
    cands = {"k0": ["zz"], "k1": ["a"]}
    refs = {"k0": [["a"]], "k1": [["a"]]}
    scores = cider_scores(cands, refs)
    assert scores["k0"] == 0.0  # no overlap at all
    assert scores["k1"] == 0.0  # "a" appears in both docs: idf = log(2/2) = 0


# ---------------------------------------------------------------------------
# dense evaluation


def _ann(events):
    return VideoAnnotation(duration=20.0,
                           events=[EventAnnotation(s, e, sent) for s, e, sent in events])


def test_dense_eval_threshold_membership():
    # tIoU((0,10), (5,15)) = 1/3: matched at 0.3 only, so overall = score / 4
    refs = {"v": _ann([(5.0, 15.0, "a b c d".split())])}
    preds = {"v": [((0.0, 10.0), "a b c d".split())]}
    report = dense_caption_eval(preds, refs, metric="meteor")
    per_t = report.per_threshold["meteor"]
    assert per_t[0.3] == pytest.approx(0.9921875, abs=1e-12)
    assert per_t[0.5] == 0.0 and per_t[0.7] == 0.0 and per_t[0.9] == 0.0
    assert report.overall["meteor"] == pytest.approx(0.9921875 / 4.0, abs=1e-12)
    assert report.counts == {"matched": 1, "unmatched": 0, "n_predictions": 1,
                             "n_videos": 1, "empty_sentences": 0}


def test_dense_eval_unmatched_and_empty_contribute_zero():
    refs = {"v": _ann([(0.0, 10.0, "a b".split())])}
    preds = {"v": [((0.0, 10.0), "a b".split()),
                   ((15.0, 16.0), "a b".split()),  # overlaps nothing
                   ((0.0, 10.0), [])]}  # empty sentence
    report = dense_caption_eval(preds, refs, metric="meteor")
    one = meteor_lite("a b".split(), ["a b".split()])
    assert report.per_threshold["meteor"][0.9] == pytest.approx(one / 3.0)
    assert report.counts["matched"] == 2  # empty-token span still matches
    assert report.counts["unmatched"] == 1
    assert report.counts["empty_sentences"] == 1


def test_dense_eval_cider_normalizes_by_predictions():
    refs = {"v": _ann([(0.0, 10.0, "a b c d".split()), (12.0, 18.0, "x y".split())])}
    preds = {"v": [((0.0, 10.0), "a b c d".split()), ((19.0, 19.5), "x y".split())]}
    report = dense_caption_eval(preds, refs, metric="cider")
    # second prediction matches nothing: the matched corpus has one key but
    # the average still divides by two predictions
    assert report.per_threshold["cider"][0.9] == pytest.approx(10.0 / 2.0, abs=1e-9)


def test_dense_eval_metric_all_and_report_shape():
    refs = {"v": _ann([(0.0, 10.0, "a b c d".split())])}
    preds = {"v": [((0.0, 10.0), "a b c d".split())]}
    report = dense_caption_eval(preds, refs, metric="all")
    assert set(report.overall) == {"bleu4", "meteor", "cider"}
    for m in report.overall:
        assert set(report.per_threshold[m]) == set(DENSE_THRESHOLDS)
        assert report.overall[m] == pytest.approx(
            sum(report.per_threshold[m].values()) / len(DENSE_THRESHOLDS))


def test_dense_eval_unknown_video_raises():
    refs = {"v": _ann([(0.0, 10.0, ["a"])])}
    with pytest.raises(ValidationError):
        dense_caption_eval({"w": []}, refs)
    with pytest.raises(ValidationError):
        dense_caption_eval({"v": []}, refs, thresholds=())
    with pytest.raises(ValidationError):
        dense_caption_eval({"v": []}, refs, metric="rouge")


def test_dense_eval_multiple_annotation_sets_average_scores_sum_counts():
    refs_a = {"v": _ann([(0.0, 10.0, "a b c d".split())])}
    refs_b = {"v": _ann([(15.0, 16.0, "a b c d".split())])}  # no overlap
    preds = {"v": [((0.0, 10.0), "a b c d".split())]}
    single = dense_caption_eval(preds, refs_a, metric="meteor")
    both = dense_caption_eval(preds, [refs_a, refs_b], metric="meteor")
    assert both.overall["meteor"] == pytest.approx(single.overall["meteor"] / 2.0)
    assert both.counts["matched"] == 1  # 1 + 0
    assert both.counts["unmatched"] == 1  # 0 + 1
    assert both.counts["n_predictions"] == 2  # summed across sets


def test_dense_eval_empty_predictions():
    refs = {"v": _ann([(0.0, 10.0, ["a"])])}
    report = dense_caption_eval({"v": []}, refs, metric="meteor")
    assert report.overall["meteor"] == 0.0
    assert report.counts["n_predictions"] == 0


def test_score_report_table_and_json(tmp_path):
    refs = {"v": _ann([(0.0, 10.0, "a b c d".split())])}
    preds = {"v": [((0.0, 10.0), "a b c d".split())]}
    report = dense_caption_eval(preds, refs, metric="meteor")
    table = report.format_table()
    lines = table.splitlines()
    assert lines[0].startswith("metric")
    assert "tIoU 0.3" in lines[0] and "overall" in lines[0]
    assert "99.22" in lines[1]  # points: x100, two decimals
    path = tmp_path / "report.json"
    report.save(path)
    import json

    raw = json.loads(path.read_text())
    assert raw["overall"]["meteor"] == report.overall["meteor"]
    assert raw["per_threshold"]["meteor"]["0.3"] == pytest.approx(0.9921875)
