"""Segment geometry, sliding-window candidates, NMS, and the window scorer."""

import json
from fractions import Fraction

import numpy as np
import pytest

from eventcap import ValidationError
from eventcap.data.synth import SynthConfig, synthesize, train_val_split
from eventcap.proposals import (
    CandidateSet,
    Proposal,
    ProposalConfig,
    candidates_from_json,
    candidates_to_json,
    enumerate_windows,
    generate_candidates,
    init_scorer,
    load_candidates,
    nms,
    proposal_precision_recall,
    save_candidates,
    score_windows,
    tiou,
    train_scorer,
)

from oracles import precision_recall_oracle, tiou_oracle


# ---------------------------------------------------------------------------
# tiou


def test_tiou_frozen_values():
    assert tiou((0.0, 10.0), (5.0, 15.0)) == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert tiou((0.0, 1.0), (0.0, 1.0)) == 1.0
    assert tiou((0.0, 1.0), (2.0, 3.0)) == 0.0
    assert tiou((0.0, 1.0), (1.0, 2.0)) == 0.0  # touching, zero intersection


def test_tiou_matches_exact_oracle_on_grid():
    # quarter-integer endpoints are exact in binary floats, so the Fraction
    # oracle and the float implementation must agree to rounding noise
    rng = np.random.default_rng(0)
    for _ in range(500):
        a0, b0 = rng.integers(0, 40, size=2) * 0.25
        a1 = a0 + (1 + rng.integers(0, 20)) * 0.25
        b1 = b0 + (1 + rng.integers(0, 20)) * 0.25
        got = tiou((a0, a1), (b0, b1))
        want = tiou_oracle((Fraction(a0), Fraction(a1)), (Fraction(b0), Fraction(b1)))
        assert abs(got - float(want)) < 1e-12


def test_tiou_symmetry_and_bounds():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a = sorted(rng.uniform(0, 30, size=2))
        b = sorted(rng.uniform(0, 30, size=2))
        if a[0] == a[1] or b[0] == b[1]:
            continue
        x = tiou(tuple(a), tuple(b))
        assert x == tiou(tuple(b), tuple(a))
        assert 0.0 <= x <= 1.0


def test_tiou_rejects_degenerate():
    with pytest.raises(ValidationError):
        tiou((1.0, 1.0), (0.0, 2.0))
    with pytest.raises(ValidationError):
        tiou((0.0, 2.0), (3.0, 2.0))


# ---------------------------------------------------------------------------
# Proposal / CandidateSet


def test_proposal_validation_and_accessors():
    p = Proposal(1.0, 3.0, 0.5)
    assert p.span() == (1.0, 3.0)
    assert p.length == 2.0
    assert p.center == 2.0
    with pytest.raises(ValidationError):
        Proposal(3.0, 3.0, 0.5)
    with pytest.raises(ValidationError):
        Proposal(0.0, 1.0, 1.5)
    with pytest.raises(ValidationError):
        Proposal(-0.5, 1.0, 0.5)


def test_candidate_set_requires_canonical_order():
    good = [Proposal(0.0, 2.0, 0.9), Proposal(1.0, 2.0, 0.9), Proposal(0.0, 1.0, 0.3)]
    cs = CandidateSet(video_id="v", proposals=good)
    assert len(cs) == 3
    assert cs.spans() == [(0.0, 2.0), (1.0, 2.0), (0.0, 1.0)]
    with pytest.raises(ValidationError):
        CandidateSet(video_id="v", proposals=list(reversed(good)))


# ---------------------------------------------------------------------------
# windows


def test_enumerate_windows_cover_and_dedup():
    cfg = ProposalConfig(scales=(0.5, 1.0), window_stride=0.5)
    wins = enumerate_windows(10.0, cfg)
    assert (0.0, 5.0) in wins and (2.5, 7.5) in wins and (5.0, 10.0) in wins
    assert (0.0, 10.0) in wins
    assert len(wins) == len({(round(s, 6), round(e, 6)) for s, e in wins})
    for s, e in wins:
        assert 0.0 <= s < e <= 10.0 + 1e-9


def test_enumerate_windows_flushes_to_end():
    rng = np.random.default_rng(2)
    for _ in range(50):
        duration = float(rng.uniform(5.0, 60.0))
        cfg = ProposalConfig()
        wins = enumerate_windows(duration, cfg)
        for frac in cfg.scales:
            ends = [e for s, e in wins if abs((e - s) - frac * duration) < 1e-6]
            assert ends, f"no windows at scale {frac}"
            assert max(ends) == pytest.approx(duration, abs=1e-6)
            starts = [s for s, e in wins if abs((e - s) - frac * duration) < 1e-6]
            assert min(starts) == pytest.approx(0.0, abs=1e-9)


# ---------------------------------------------------------------------------
# NMS


def _canonical(proposals):
    return sorted(proposals, key=lambda p: (-p.score, -p.length, p.start))


def test_nms_pairwise_bound_and_witness():
    rng = np.random.default_rng(3)
    for _ in range(100):
        props = []
        for _ in range(40):
            s = float(rng.uniform(0, 20))
            e = s + float(rng.uniform(0.2, 8.0))
            props.append(Proposal(s, e, float(rng.uniform(0, 1))))
        props = _canonical(props)
        thr = float(rng.choice([0.3, 0.5, 0.8]))
        kept = nms(props, thr)
        spans = [p.span() for p in kept]
        for i in range(len(spans)):
            for j in range(i + 1, len(spans)):
                assert tiou(spans[i], spans[j]) <= thr + 1e-12
        # every suppressed proposal has a kept witness above the threshold
        kept_ids = {id(p) for p in kept}
        for p in props:
            if id(p) not in kept_ids:
                assert any(tiou(p.span(), q.span()) > thr for q in kept)


def test_nms_keeps_highest_scoring_of_overlap_pair():
    a = Proposal(0.0, 4.0, 0.9)
    b = Proposal(0.5, 4.5, 0.8)  # tIoU 3.5/4.5 > 0.5
    kept = nms(_canonical([a, b]), 0.5)
    assert kept == [a]


# ---------------------------------------------------------------------------
# generation


def test_generate_candidates_properties(tiny_corpus):
    rec = tiny_corpus.records[0]
    rng = np.random.default_rng(4)
    cfg = ProposalConfig(top_k=20)
    params = init_scorer({}, rng, rec.feature_dim, cfg)
    cands = generate_candidates(rec, params, cfg)
    assert cands.video_id == rec.video_id
    assert 1 <= len(cands) <= cfg.top_k
    scores = [p.score for p in cands.proposals]
    keys = [(-p.score, -p.length, p.start) for p in cands.proposals]
    assert keys == sorted(keys)
    assert all(0.0 <= s <= 1.0 for s in scores)
    for i, p in enumerate(cands.proposals):
        for q in cands.proposals[:i]:
            assert tiou(p.span(), q.span()) <= cfg.nms_tiou + 1e-12
    # deterministic re-run
    again = generate_candidates(rec, params, cfg)
    assert [p.span() for p in again.proposals] == [p.span() for p in cands.proposals]


def test_generate_candidates_rejects_empty_record():
    from eventcap.data.types import VideoRecord

    rec = VideoRecord("v", 4.0, np.zeros((0, 4), dtype=np.float32))
    cfg = ProposalConfig()
    params = init_scorer({}, np.random.default_rng(0), 4, cfg)
    with pytest.raises(ValidationError):
        generate_candidates(rec, params, cfg)


# ---------------------------------------------------------------------------
# precision / recall


def test_precision_recall_matches_oracle():
    rng = np.random.default_rng(5)
    thresholds = (0.3, 0.5, 0.7, 0.9)
    for _ in range(200):
        n_pred, n_gt = rng.integers(0, 6), rng.integers(0, 4)
        pred = []
        for _ in range(n_pred):
            s = rng.integers(0, 16) * 0.25
            pred.append((float(s), float(s + (1 + rng.integers(0, 12)) * 0.25)))
        gt = []
        for _ in range(n_gt):
            s = rng.integers(0, 16) * 0.25
            gt.append((float(s), float(s + (1 + rng.integers(0, 12)) * 0.25)))
        got_p, got_r = proposal_precision_recall(pred, gt, thresholds)
        want_p, want_r = precision_recall_oracle(pred, gt, thresholds)
        assert got_p == pytest.approx(float(want_p), abs=1e-12)
        assert got_r == pytest.approx(float(want_r), abs=1e-12)


def test_precision_recall_frozen_case():
    # one exact hit, one miss, against two gt segments, single threshold 0.5:
    # precision 1/2, recall 1/2
    pred = [(0.0, 2.0), (10.0, 11.0)]
    gt = [(0.0, 2.0), (4.0, 6.0)]
    p, r = proposal_precision_recall(pred, gt, (0.5,))
    assert p == 0.5 and r == 0.5


def test_precision_recall_empty_sides_and_bad_thresholds():
    assert proposal_precision_recall([], [(0.0, 1.0)], (0.5,)) == (0.0, 0.0)
    assert proposal_precision_recall([(0.0, 1.0)], [], (0.5,)) == (0.0, 0.0)
    with pytest.raises(ValidationError):
        proposal_precision_recall([(0.0, 1.0)], [(0.0, 1.0)], ())
    with pytest.raises(ValidationError):
        proposal_precision_recall([(0.0, 1.0)], [(0.0, 1.0)], (0.0,))


def test_precision_recall_accepts_proposal_objects():
    pred = [Proposal(0.0, 2.0, 0.9)]
    p, r = proposal_precision_recall(pred, [(0.0, 2.0)], (0.9,))
    assert p == 1.0 and r == 1.0


# ---------------------------------------------------------------------------
# scorer training


def test_train_scorer_improves_recall():
    corpus = synthesize(SynthConfig(n_videos=40, seed=10, val_fraction=0.2))
    train, val = train_val_split(corpus)
    cfg = ProposalConfig()
    rng = np.random.default_rng(0)
    params = init_scorer({}, rng, train[0].feature_dim, cfg)
    history = train_scorer(params, train, cfg, rng)
    assert history[-1] < history[0]  # BCE descends
    recalls = []
    for rec in val:
        cands = generate_candidates(rec, params, cfg)
        _p, r = proposal_precision_recall(cands.proposals,
                                          [ev.span() for ev in rec.events], (0.5,))
        recalls.append(r)
    assert float(np.mean(recalls)) >= 0.9


def test_score_windows_shape_and_range(tiny_corpus):
    rec = tiny_corpus.records[0]
    cfg = ProposalConfig()
    params = init_scorer({}, np.random.default_rng(6), rec.feature_dim, cfg)
    wins = enumerate_windows(rec.duration, cfg)
    scores = score_windows(params, rec, wins)
    assert scores.data.shape == (len(wins), 1)
    assert np.all(scores.data > 0) and np.all(scores.data < 1)


# ---------------------------------------------------------------------------
# serialization


def test_candidates_json_roundtrip(tmp_path):
    sets = [
        CandidateSet("v0", [Proposal(0.0, 2.0, 0.75), Proposal(1.0, 2.5, 0.25)]),
        CandidateSet("v1", []),
    ]
    payload = candidates_to_json(sets)
    back = {cs.video_id: cs for cs in candidates_from_json(payload)}
    assert set(back) == {"v0", "v1"}
    assert [(p.start, p.end, p.score) for p in back["v0"].proposals] == \
        [(0.0, 2.0, 0.75), (1.0, 2.5, 0.25)]
    assert back["v1"].proposals == []
    path = tmp_path / "cands.json"
    save_candidates(path, sets)
    loaded = {cs.video_id: cs for cs in load_candidates(path)}
    assert [(p.start, p.end, p.score) for p in loaded["v0"].proposals] == \
        [(0.0, 2.0, 0.75), (1.0, 2.5, 0.25)]
    assert json.loads(path.read_text())  # plain JSON on disk


def test_candidates_from_json_validates():
    with pytest.raises(ValidationError):
        candidates_from_json({"v0": [[2.0, 1.0, 0.5]]})
