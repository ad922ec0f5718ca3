"""Candidate event proposals: multi-scale sliding windows scored by a small
learned network, pruned by temporal-IoU non-maximum suppression.

This stands in for an off-the-shelf boundary-sensitive proposal generator
while preserving its interface: top-K scored segments per video. Ordering
ties are broken wider-first, then earlier start, so candidate sets are
deterministic even with an untrained (constant-output) scorer.
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from eventcap import ValidationError
from eventcap.autodiff import Tensor, no_grad, tensor
from eventcap.layers import affine_step, init_affine

__all__ = [
    "Proposal",
    "CandidateSet",
    "ProposalConfig",
    "tiou",
    "enumerate_windows",
    "init_scorer",
    "score_windows",
    "generate_candidates",
    "proposal_precision_recall",
    "train_scorer",
    "candidates_to_json",
    "candidates_from_json",
]


def _check_segment(seg):
    start, end = float(seg[0]), float(seg[1])
    if not (start < end):
        raise ValidationError(f"degenerate segment [{start}, {end}]")
    return start, end


def tiou(a, b):
    """Temporal intersection over union of two (start, end) segments."""
    a = _check_segment(a)
    b = _check_segment(b)
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


@dataclasses.dataclass
class Proposal:
    start: float
    end: float
    score: float = 1.0

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValidationError(f"proposal [{self.start}, {self.end}] invalid")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"proposal score {self.score} outside [0, 1]")

    def span(self):
        return (self.start, self.end)

    @property
    def length(self):
        return self.end - self.start

    @property
    def center(self):
        return 0.5 * (self.start + self.end)


def _order_key(p):
    # score desc, then wider first, then earlier start
    return (-p.score, -(p.end - p.start), p.start)


@dataclasses.dataclass
class CandidateSet:
    video_id: str
    proposals: list

    def __post_init__(self):
        keys = [_order_key(p) for p in self.proposals]
        if keys != sorted(keys):
            raise ValidationError(f"{self.video_id}: candidates not in canonical order")

    def __len__(self):
        return len(self.proposals)

    def spans(self):
        return [p.span() for p in self.proposals]


@dataclasses.dataclass
class ProposalConfig:
    scales: tuple = (0.08, 0.12, 0.18, 0.26, 0.38, 0.55, 0.80)  # fractions of duration
    window_stride: float = 0.5  # slide step as a fraction of window length
    nms_tiou: float = 0.8
    top_k: int = 100
    scorer_hidden: int = 32

    def validate(self):
        if not self.scales or any(not 0 < s <= 1 for s in self.scales):
            raise ValidationError("scales must be fractions in (0, 1]")
        if not 0 < self.window_stride <= 1:
            raise ValidationError("window_stride must be in (0, 1]")
        if not 0 <= self.nms_tiou <= 1:
            raise ValidationError("nms_tiou must be in [0, 1]")
        if self.top_k < 1:
            raise ValidationError("top_k must be >= 1")
        return self


def enumerate_windows(duration, cfg):
    """Multi-scale sliding windows over [0, duration], deduplicated."""
    seen = set()
    windows = []
    for frac in cfg.scales:
        length = frac * duration
        step = max(cfg.window_stride * length, 1e-6)
        n_steps = max(1, int(math.floor((duration - length) / step + 1e-9)) + 1)
        starts = [i * step for i in range(n_steps)]
        if starts[-1] + length < duration - 1e-9:
            starts.append(duration - length)  # flush final window to the end
        for s in starts:
            key = (round(s, 6), round(s + length, 6))
            if key not in seen:
                seen.add(key)
                windows.append((s, min(s + length, duration)))
    return windows


def init_scorer(params, rng, d_feature, cfg):
    init_affine(params, "scorer.l0", rng, 3 * d_feature, cfg.scorer_hidden)
    init_affine(params, "scorer.l1", rng, cfg.scorer_hidden, 1)
    return params


def _window_inputs(record, windows):
    rows = []
    for start, end in windows:
        mean = record.mean_feature(start, end)
        first, last = record.rows_in_span(start, end)
        lo = record.features[first].astype(np.float64)
        hi = record.features[last].astype(np.float64)
        rows.append(np.concatenate([mean, lo, hi]))
    return np.stack(rows)


def score_windows(params, record, windows):
    """Sigmoid scores per window: affine -> ReLU -> affine -> sigmoid on the
    concatenation (mean window feature, start clip feature, end clip feature)."""
    x = tensor(_window_inputs(record, windows))
    h = affine_step(params, "scorer.l0", x).relu()
    return affine_step(params, "scorer.l1", h).sigmoid()


def nms(proposals, threshold):
    """Greedy suppression: keep a proposal only if its tIoU with every kept
    one is <= threshold. Input must already be in canonical order."""
    kept = []
    for p in proposals:
        if all(tiou(p.span(), q.span()) <= threshold for q in kept):
            kept.append(p)
    return kept


def generate_candidates(record, params, cfg):
    cfg.validate()
    if record.n_clips < 1:
        raise ValidationError(f"{record.video_id}: no clips")
    windows = enumerate_windows(record.duration, cfg)
    with no_grad():
        scores = score_windows(params, record, windows).data[:, 0]
    proposals = [Proposal(s, e, float(np.clip(sc, 0.0, 1.0)))
                 for (s, e), sc in zip(windows, scores)]
    proposals.sort(key=_order_key)
    kept = nms(proposals, cfg.nms_tiou)[: cfg.top_k]
    return CandidateSet(video_id=record.video_id, proposals=kept)


def proposal_precision_recall(pred, gt, thresholds):
    """Threshold-membership matching, one-to-many, averaged over thresholds.

    Empty pred gives precision 0; empty gt gives recall 0.
    """
    if not thresholds or any(not 0 < t <= 1 for t in thresholds):
        raise ValidationError("thresholds must be non-empty, each in (0, 1]")
    pred_spans = [p.span() if isinstance(p, Proposal) else _check_segment(p) for p in pred]
    gt_spans = [_check_segment(g) for g in gt]
    precisions, recalls = [], []
    for t in thresholds:
        if pred_spans and gt_spans:
            matched_p = sum(1 for p in pred_spans if any(tiou(p, g) >= t for g in gt_spans))
            matched_g = sum(1 for g in gt_spans if any(tiou(p, g) >= t for p in pred_spans))
            precisions.append(matched_p / len(pred_spans))
            recalls.append(matched_g / len(gt_spans))
        else:
            precisions.append(0.0)
            recalls.append(0.0)
    return float(np.mean(precisions)), float(np.mean(recalls))


def train_scorer(params, records, cfg, rng, epochs=3, lr=0.05, pos_tiou=0.7, neg_tiou=0.3):
    """Fit the window scorer as a binary classifier against GT overlap.

    Windows with max tIoU >= pos_tiou are positives, <= neg_tiou negatives,
    the rest are skipped. Plain SGD on balanced per-video subsamples is
    enough for this scorer's size.
    """
    from eventcap.training import clip_grad_norm, zero_grads  # local: avoid import cycle

    losses = []
    for _epoch in range(epochs):
        order = rng.permutation(len(records))
        epoch_loss, n_batches = 0.0, 0
        for vi in order:
            record = records[vi]
            gt = [ev.span() for ev in record.events]
            if not gt:
                continue
            windows = enumerate_windows(record.duration, cfg)
            best = np.array([max(tiou(w, g) for g in gt) for w in windows])
            pos = np.flatnonzero(best >= pos_tiou)
            neg = np.flatnonzero(best <= neg_tiou)
            if len(pos) == 0 or len(neg) == 0:
                continue
            neg = rng.choice(neg, size=min(len(neg), 3 * len(pos)), replace=False)
            idx = np.concatenate([pos, neg])
            y = (best[idx] >= pos_tiou).astype(np.float64)[:, None]
            zero_grads(params, prefix="scorer.")
            p = score_windows(params, record, [windows[i] for i in idx])
            eps = 1e-9
            loss = -((tensor(y) * (p + eps).log()
                      + tensor(1.0 - y) * (1.0 - p + eps).log()).mean())
            loss.backward()
            clip_grad_norm(params, 5.0, prefix="scorer.")
            with no_grad():
                for name, t in params.items():
                    if name.startswith("scorer.") and t.grad is not None:
                        t.data -= lr * t.grad
            epoch_loss += loss.item()
            n_batches += 1
        losses.append(epoch_loss / max(1, n_batches))
    return losses


def candidates_to_json(candidate_sets):
    return {cs.video_id: [[p.start, p.end, p.score] for p in cs.proposals]
            for cs in candidate_sets}


def candidates_from_json(payload):
    out = []
    for vid, rows in payload.items():
        props = [Proposal(float(s), float(e), float(sc)) for s, e, sc in rows]
        out.append(CandidateSet(video_id=vid, proposals=props))
    return out


def save_candidates(path, candidate_sets):
    with open(path, "w") as fh:
        json.dump(candidates_to_json(candidate_sets), fh)


def load_candidates(path):
    with open(path) as fh:
        return candidates_from_json(json.load(fh))
