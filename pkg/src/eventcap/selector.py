"""Recurrent pointer selection of the event sequence to caption.

Candidates are encoded from (mean-pooled span feature, normalized span
endpoints, proposal score). A single LSTM walks the selection: at each step
the pointer scores every still-unselected candidate plus a learned END row,
picks one (argmax or sample), and feeds its encoding back in. Teacher
forcing maps each GT event (by start order) to its max-tIoU candidate.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from eventcap import ValidationError
from eventcap.autodiff import Tensor, concat, log_softmax, no_grad, softmax, tensor
from eventcap.layers import (
    affine_step,
    init_affine,
    init_lstm,
    lstm_step,
    parameter,
    xavier_uniform,
    zero_state,
)
from eventcap.proposals import tiou

__all__ = [
    "EventSequence",
    "init_selector",
    "candidate_encodings",
    "pointer_logits",
    "select_sequence",
    "selector_targets",
    "train_selector_step",
]

NEG_INF = -1e30


@dataclasses.dataclass
class EventSequence:
    video_id: str
    events: list  # Proposals in selection order
    indices: list  # candidate indices, same order

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise ValidationError(f"{self.video_id}: duplicate candidate index selected")

    def __len__(self):
        return len(self.events)

    def by_start(self):
        """Events in temporal order, as the decoder consumes them."""
        return sorted(self.events, key=lambda p: (p.start, p.end))


def init_selector(params, rng, d_feature, d_enc, hidden, d_ptr):
    init_affine(params, "sel.enc", rng, d_feature + 3, d_enc)
    init_lstm(params, "sel.lstm", rng, d_enc, hidden)
    init_affine(params, "sel.ph", rng, hidden, d_ptr, bias=False)
    init_affine(params, "sel.pc", rng, d_enc, d_ptr, bias=False)
    params["sel.end"] = parameter(xavier_uniform(rng, d_enc, 1, shape=(1, d_enc)))
    params["sel.start"] = parameter(xavier_uniform(rng, d_enc, 1, shape=(1, d_enc)))
    return params


def candidate_encodings(params, record, candidates):
    """(M+1, d_enc) tensor: one row per candidate plus the END row last."""
    rows = []
    for p in candidates.proposals:
        pooled = record.mean_feature(p.start, p.end)
        pos = np.array([p.start / record.duration, p.end / record.duration, p.score])
        rows.append(np.concatenate([pooled, pos]))
    enc = affine_step(params, "sel.enc", tensor(np.stack(rows)))
    return concat([enc, params["sel.end"]], axis=0)


def pointer_logits(params, h, enc_ext, used):
    """Pointer scores over candidates and END; used candidates masked out."""
    query = affine_step(params, "sel.ph", h).tanh()
    keys = affine_step(params, "sel.pc", enc_ext)
    logits = query @ keys.T  # (1, M+1)
    if used:
        mask = np.zeros((1, logits.shape[1]))
        mask[0, list(used)] = NEG_INF
        logits = logits + tensor(mask)
    return logits


def select_sequence(candidates, record, params, mode="greedy", rng=None,
                    max_events=10, hidden=None):
    """Run the pointer loop; returns the selected EventSequence."""
    if len(candidates) == 0:
        raise ValidationError(f"{candidates.video_id}: empty candidate set")
    if mode not in ("greedy", "sample"):
        raise ValidationError(f"unknown selection mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValidationError("sample mode needs an rng")
    with no_grad():
        enc_ext = candidate_encodings(params, record, candidates)
        m = len(candidates)
        end_idx = m
        h, c = zero_state(params["sel.lstm.W"].shape[1] // 4)
        x = params["sel.start"]
        used = set()
        chosen = []
        for _step in range(max_events):
            h, c = lstm_step(params, "sel.lstm", x, h, c)
            logits = pointer_logits(params, h, enc_ext, used)
            if mode == "greedy":
                pick = int(np.argmax(logits.data[0]))
            else:
                probs = softmax(logits, axis=1).data[0]
                pick = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
                pick = min(pick, end_idx)
                if pick in used:  # exact cumsum boundary on a masked entry
                    pick = int(np.argmax(probs))
            if pick == end_idx:
                break
            used.add(pick)
            chosen.append(pick)
            x = enc_ext[pick : pick + 1, :]
    return EventSequence(video_id=candidates.video_id,
                         events=[candidates.proposals[i] for i in chosen],
                         indices=chosen)


def selector_targets(candidates, gt_events):
    """Teacher-forcing targets: per GT event (start order) the unused
    candidate with max tIoU, ties to the earlier index; then END.

    Returns (targets, n_weak) where n_weak counts GT events whose best
    available candidate had zero overlap.
    """
    if not gt_events:
        raise ValidationError("selector training needs at least one GT event")
    spans = [p.span() for p in candidates.proposals]
    order = sorted(gt_events, key=lambda ev: (ev.start, ev.end))
    targets = []
    used = set()
    n_weak = 0
    for ev in order:
        if len(used) == len(spans):
            break  # more GT events than candidates
        overlaps = [tiou(s, (ev.start, ev.end)) for s in spans]
        best, best_ov = -1, -1.0
        for j, ov in enumerate(overlaps):
            if j not in used and ov > best_ov:
                best, best_ov = j, ov
        if best_ov <= 0.0:
            n_weak += 1
        targets.append(best)
        used.add(best)
    targets.append(len(spans))  # END
    return targets, n_weak


def train_selector_step(candidates, record, gt_events, params):
    """Mean pointer cross-entropy under teacher forcing."""
    targets, n_weak = selector_targets(candidates, gt_events)
    enc_ext = candidate_encodings(params, record, candidates)
    end_idx = len(candidates)
    h, c = zero_state(params["sel.lstm.W"].shape[1] // 4)
    x = params["sel.start"]
    used = set()
    step_losses = []
    for t in targets:
        h, c = lstm_step(params, "sel.lstm", x, h, c)
        logits = pointer_logits(params, h, enc_ext, used)
        logp = log_softmax(logits, axis=1)
        step_losses.append(-logp[0:1, t : t + 1])
        if t != end_idx:
            used.add(t)
            x = enc_ext[t : t + 1, :]
    loss = concat(step_losses, axis=1).mean()
    return loss, n_weak
