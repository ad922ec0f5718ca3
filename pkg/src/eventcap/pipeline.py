"""End-to-end inference: candidates -> selection -> captions -> evaluation."""

from __future__ import annotations

from eventcap import ValidationError
from eventcap.data.annotations import VideoAnnotation
from eventcap.decoder import generate_paragraph
from eventcap.metrics import DENSE_THRESHOLDS, dense_caption_eval
from eventcap.proposals import Proposal, generate_candidates
from eventcap.selector import select_sequence
from eventcap.training import ensemble_decode

__all__ = ["predict_video", "predict_corpus", "evaluate_model", "evaluate_ensemble"]


def predict_video(model, record, proposals="gt", candidates=None):
    """Decode one video; returns [(span, token list), ...].

    ``proposals="gt"`` decodes the annotated spans directly; ``"learnt"``
    runs the scorer, NMS, and the pointer selector first.
    """
    params, cfg = model.params, model.cfg
    if proposals == "gt":
        events = [Proposal(ev.start, ev.end, 1.0)
                  for ev in sorted(record.events, key=lambda e: (e.start, e.end))]
    elif proposals == "learnt":
        if candidates is None:
            candidates = generate_candidates(record, params, cfg.proposal_config())
        if len(candidates) == 0:
            return []
        seq = select_sequence(candidates, record, params, mode="greedy",
                              max_events=cfg.max_events)
        events = seq.by_start()
    else:
        raise ValidationError(f"proposals must be gt or learnt, got {proposals!r}")
    if not events:
        return []
    sentences = generate_paragraph(params, cfg, record, events, mode="greedy")
    words = [[model.vocab.id_to_token[i] for i in sent] for sent in sentences]
    return [((p.start, p.end), sent) for p, sent in zip(events, words)]


def predict_corpus(model, records, proposals="gt", candidates_by_vid=None):
    out = {}
    for record in records:
        cands = None if candidates_by_vid is None else candidates_by_vid.get(record.video_id)
        out[record.video_id] = predict_video(model, record, proposals=proposals,
                                             candidates=cands)
    return out


def _annotations_of(records):
    return {r.video_id: VideoAnnotation(duration=r.duration, events=r.events)
            for r in records}


def evaluate_model(model, records, proposals="gt", metric="meteor",
                   thresholds=DENSE_THRESHOLDS, candidates_by_vid=None):
    """ScoreReport plus the raw predictions for a record set."""
    if not records:
        raise ValidationError("evaluation needs a non-empty corpus")
    predictions = predict_corpus(model, records, proposals=proposals,
                                 candidates_by_vid=candidates_by_vid)
    report = dense_caption_eval(predictions, _annotations_of(records),
                                thresholds=thresholds, metric=metric)
    return report, predictions


def evaluate_ensemble(members, records, metric="meteor", thresholds=DENSE_THRESHOLDS):
    """GT-proposal evaluation of an averaged-distribution ensemble."""
    if not records:
        raise ValidationError("evaluation needs a non-empty corpus")
    vocab = members[0].vocab
    predictions = {}
    for record in records:
        events = [Proposal(ev.start, ev.end, 1.0)
                  for ev in sorted(record.events, key=lambda e: (e.start, e.end))]
        if not events:
            predictions[record.video_id] = []
            continue
        sentences = ensemble_decode(members, record, events)
        words = [[vocab.id_to_token[i] for i in sent] for sent in sentences]
        predictions[record.video_id] = [((p.start, p.end), s)
                                        for p, s in zip(events, words)]
    report = dense_caption_eval(predictions, _annotations_of(records),
                                thresholds=thresholds, metric=metric)
    return report, predictions
