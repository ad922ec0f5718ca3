"""Training: cross-entropy, SCST fine-tuning, gradient checks, ensembling.

All randomness flows through one np.random.Generator per run, so fixed
(seed, config, corpus) triples reproduce loss trajectories bitwise. SCST
freezes the selector and scorer: sampled event sequences only diversify the
policy-gradient input; the update touches captioning parameters.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from eventcap import ValidationError
from eventcap.autodiff import Tensor, no_grad, softmax, tensor
from eventcap.data.vocab import BOS, EOS, PAD
from eventcap.decoder import (
    decode_paragraph,
    event_features,
    init_decoder_state,
    position_embed,
    sentence_step,
    teacher_forced_nll,
    word_step,
)
from eventcap.layers import zero_state
from eventcap.metrics import meteor_lite
from eventcap.proposals import tiou
from eventcap.selector import select_sequence, train_selector_step

__all__ = [
    "TrainConfig",
    "Adam",
    "zero_grads",
    "global_grad_norm",
    "clip_grad_norm",
    "encode_sentences",
    "xe_loss",
    "train_xe",
    "scst_step",
    "train_scst",
    "grad_check",
    "ensemble_decode",
]

REWARD_METRICS = ("meteor",)


@dataclasses.dataclass
class TrainConfig:
    mode: str = "xe"
    lr: float = 1e-3
    scst_lr: float = 1e-5
    epochs: int = 10
    batch_size: int = 1
    seed: int = 0
    grad_clip: float = 5.0
    scst_sequences: int = 24
    reward_metric: str = "meteor"
    reward_level: str = "sentence"
    log_every: int = 10
    # architecture knobs forwarded into ModelConfig
    hidden: int = 512
    d_emb: int = 128
    d_enc: int = 128
    d_ptr: int = 64
    d_pos: int = 8
    d_rel_hidden: int = 64
    d_k: int = 64
    d_v: int = 64
    d_l: int = 32
    d_pos_hidden: int = 32
    d_gate: int = 128
    d_att: int = 64
    use_relation: bool = True
    use_gate: bool = True
    use_sentence_rnn: bool = True
    gate_scalar: bool = False
    max_len: int = 30
    max_events: int = 10
    top_k: int = 100
    nms_tiou: float = 0.8
    scales: tuple[float, ...] = (0.08, 0.12, 0.18, 0.26, 0.38, 0.55, 0.80)
    window_stride: float = 0.5
    scorer_hidden: int = 32
    scorer_epochs: int = 3
    scorer_lr: float = 0.05
    selector_lr: float = 1e-3

    def validate(self):
        if self.mode not in ("xe", "scst"):
            raise ValidationError(f"mode must be xe or scst, got {self.mode!r}")
        if self.lr <= 0 or self.scst_lr <= 0 or self.selector_lr <= 0:
            raise ValidationError("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.scst_sequences < 1:
            raise ValidationError("scst_sequences must be >= 1")
        if self.reward_metric not in REWARD_METRICS:
            raise ValidationError(f"reward_metric must be one of {REWARD_METRICS}")
        if self.reward_level not in ("sentence", "paragraph"):
            raise ValidationError("reward_level must be sentence or paragraph")
        return self

    def model_config(self, d_feature, vocab_size):
        from eventcap.model import ModelConfig

        return ModelConfig(
            d_feature=d_feature, vocab_size=vocab_size,
            hidden_sentence=self.hidden, hidden_word=self.hidden,
            hidden_selector=self.hidden, d_emb=self.d_emb, d_enc=self.d_enc,
            d_ptr=self.d_ptr, d_pos=self.d_pos, d_rel_hidden=self.d_rel_hidden,
            d_k=self.d_k, d_v=self.d_v, d_l=self.d_l,
            d_pos_hidden=self.d_pos_hidden, d_gate=self.d_gate, d_att=self.d_att,
            use_relation=self.use_relation, use_gate=self.use_gate,
            use_sentence_rnn=self.use_sentence_rnn, gate_scalar=self.gate_scalar,
            max_len=self.max_len, max_events=self.max_events, top_k=self.top_k,
            nms_tiou=self.nms_tiou, scales=tuple(self.scales),
            window_stride=self.window_stride, scorer_hidden=self.scorer_hidden,
        )


def _scoped(params, prefixes):
    if prefixes is None:
        return list(params)
    return [n for n in params if any(n.startswith(p) for p in prefixes)]


def zero_grads(params, prefix=None):
    prefixes = None if prefix is None else (prefix,)
    for name in _scoped(params, prefixes):
        params[name].grad = None


def global_grad_norm(params, prefix=None):
    prefixes = None if prefix is None else (prefix,)
    total = 0.0
    for name in _scoped(params, prefixes):
        g = params[name].grad
        if g is not None:
            total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_grad_norm(params, max_norm, prefix=None):
    """Scale all gradients so the global norm is at most max_norm."""
    norm = global_grad_norm(params, prefix=prefix)
    if norm > max_norm > 0:
        scale = max_norm / norm
        prefixes = None if prefix is None else (prefix,)
        for name in _scoped(params, prefixes):
            if params[name].grad is not None:
                params[name].grad = params[name].grad * scale
    return norm


class Adam:
    """Adaptive-moment optimizer over a (sub)set of named parameters."""

    def __init__(self, params, lr, prefixes=None, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.names = _scoped(params, prefixes)
        self.m = {n: np.zeros_like(params[n].data) for n in self.names}
        self.v = {n: np.zeros_like(params[n].data) for n in self.names}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for n in self.names:
            g = self.params[n].grad
            if g is None:
                continue
            self.m[n] = b1 * self.m[n] + (1 - b1) * g
            self.v[n] = b2 * self.v[n] + (1 - b2) * g * g
            update = (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)
            self.params[n].data -= self.lr * update


def encode_sentences(vocab, record):
    """(events sorted by start, encoded sentences) for teacher forcing."""
    events = sorted(record.events, key=lambda ev: (ev.start, ev.end))
    return events, [vocab.encode(ev.sentence) for ev in events]


def xe_loss(params, cfg, batch):
    """Mean NLL per non-pad token over all events of all batch videos.

    ``batch`` is a list of (record, events, encoded sentences) triples.
    """
    if not batch:
        raise ValidationError("xe_loss needs a non-empty batch")
    totals = []
    n_tokens = 0
    for record, events, sentences in batch:
        total, n, _state = teacher_forced_nll(params, cfg, record, events, sentences)
        totals.append(total)
        n_tokens += n
    loss = totals[0]
    for t in totals[1:]:
        loss = loss + t
    return loss * (1.0 / n_tokens)


CAPTION_PREFIXES = ("dec.", "rel.")


def train_xe(model, records, train_cfg, log_fn=None, start_step=0):
    """Cross-entropy training of the captioner on GT event sequences.

    Returns the per-step loss history; model.step advances.
    """
    train_cfg.validate()
    rng = np.random.default_rng(train_cfg.seed)
    params, cfg, vocab = model.params, model.cfg, model.vocab
    prepared = [(r,) + encode_sentences(vocab, r) for r in records if r.events]
    if not prepared:
        raise ValidationError("no captioned videos to train on")
    opt = Adam(params, train_cfg.lr, prefixes=CAPTION_PREFIXES)
    history = []
    step = start_step
    for _epoch in range(train_cfg.epochs):
        order = rng.permutation(len(prepared))
        for lo in range(0, len(order), train_cfg.batch_size):
            batch = [prepared[i] for i in order[lo : lo + train_cfg.batch_size]]
            zero_grads(params)
            loss = xe_loss(params, cfg, batch)
            loss.backward()
            for pfx in CAPTION_PREFIXES:
                clip_grad_norm(params, train_cfg.grad_clip, prefix=pfx)
            opt.step()
            step += 1
            history.append(loss.item())
            if log_fn and (step % train_cfg.log_every == 0 or lo + train_cfg.batch_size >= len(order)):
                log_fn({"step": step, "epoch": _epoch, "loss": loss.item(), "mode": "xe"})
    model.step = step
    return history


def train_selector(model, records, candidates_by_vid, train_cfg, log_fn=None):
    """Teacher-forced pointer training over cached candidate sets."""
    rng = np.random.default_rng(train_cfg.seed + 1)
    params = model.params
    opt = Adam(params, train_cfg.selector_lr, prefixes=("sel.",))
    history = []
    step = 0
    for _epoch in range(train_cfg.epochs):
        order = rng.permutation(len(records))
        epoch_weak = 0
        for i in order:
            record = records[i]
            if not record.events:
                continue
            cands = candidates_by_vid[record.video_id]
            if len(cands) == 0:
                continue
            zero_grads(params, prefix="sel.")
            loss, n_weak = train_selector_step(cands, record, record.events, params)
            loss.backward()
            clip_grad_norm(params, train_cfg.grad_clip, prefix="sel.")
            opt.step()
            epoch_weak += n_weak
            step += 1
            history.append(loss.item())
            if log_fn and step % train_cfg.log_every == 0:
                log_fn({"step": step, "epoch": _epoch, "loss": loss.item(),
                        "mode": "selector", "weak_targets": epoch_weak})
    return history


def _matched_reference(events, span):
    """GT sentence of the max-tIoU event, or None when nothing overlaps."""
    best, best_ov = None, 0.0
    for ev in events:
        ov = tiou(span, (ev.start, ev.end))
        if ov > best_ov:
            best, best_ov = ev, ov
    return best


def paragraph_reward(record, spans, sentences, vocab, level="sentence"):
    """METEOR-lite of decoded sentences against tIoU-matched GT sentences.

    Predictions with no overlapping GT event (or empty output) score 0.
    """
    decoded = [[vocab.id_to_token[i] for i in sent] for sent in sentences]
    if level == "paragraph":
        matched = [_matched_reference(record.events, span) for span in spans]
        cand = [w for sent in decoded for w in sent]
        ref = [w for ev in sorted(record.events, key=lambda e: e.start)
               for w in ev.sentence]
        if not cand or not any(matched):
            return 0.0
        return meteor_lite(cand, [ref])
    scores = []
    for span, sent in zip(spans, decoded):
        ev = _matched_reference(record.events, span)
        if ev is None or not sent:
            scores.append(0.0)
        else:
            scores.append(meteor_lite(sent, [ev.sentence]))
    return float(np.mean(scores)) if scores else 0.0


def scst_step(params, cfg, record, candidates, vocab, train_cfg, rng):
    """One SCST policy-gradient loss over sampled event sequences.

    Returns (loss Tensor or None, stats dict). None means the video was
    skipped (no GT events or no sampled sequence had any event).
    """
    if not record.events:
        return None, {"skipped": 1}
    level = train_cfg.reward_level
    entries = []
    with no_grad():
        for _k in range(train_cfg.scst_sequences):
            seq = select_sequence(candidates, record, params, mode="sample",
                                  rng=rng, max_events=cfg.max_events)
            if len(seq) == 0:
                continue
            events = seq.by_start()
            spans = [p.span() for p in events]
            sampled, endeds = decode_paragraph(params, cfg, record, events,
                                               mode="sample", rng=rng)
            greedy, _ = decode_paragraph(params, cfg, record, events, mode="greedy")
            r_sample = paragraph_reward(record, spans, sampled, vocab, level)
            r_greedy = paragraph_reward(record, spans, greedy, vocab, level)
            entries.append((events, sampled, endeds, r_sample - r_greedy, r_sample, r_greedy))
    if not entries:
        return None, {"skipped": 1}
    pieces = []
    for events, sampled, endeds, adv, _rs, _rg in entries:
        # teacher-forced replay of the sampled tokens gives sum log p on tape
        ids = [[BOS] + sent + ([EOS] if ended else [])
               for sent, ended in zip(sampled, endeds)]
        keep = [(ev, s) for ev, s in zip(events, ids) if len(s) >= 2]
        if not keep or adv == 0.0:
            pieces.append(None)
            continue
        nll, _n, _ = teacher_forced_nll(params, cfg, record,
                                        [ev for ev, _ in keep], [s for _, s in keep])
        pieces.append(nll * adv)
    live = [p for p in pieces if p is not None]
    # mean over all sampled sequences: empty or zero-advantage ones are
    # exactly-zero terms, so they only enter through the denominator
    k = train_cfg.scst_sequences
    if not live:
        loss = tensor(np.zeros((1, 1)), requires_grad=True).sum()
    else:
        loss = live[0]
        for p in live[1:]:
            loss = loss + p
        loss = loss * (1.0 / k)
    stats = {
        "sequences": k,
        "reward_sample": float(np.mean([e[4] for e in entries])),
        "reward_greedy": float(np.mean([e[5] for e in entries])),
        "advantage": float(np.mean([e[3] for e in entries])),
        "skipped": 0,
    }
    return loss, stats


def train_scst(model, records, candidates_by_vid, train_cfg, log_fn=None, start_step=0):
    """SCST fine-tuning loop over learnt candidate sequences."""
    train_cfg.validate()
    rng = np.random.default_rng(train_cfg.seed)
    params, cfg, vocab = model.params, model.cfg, model.vocab
    opt = Adam(params, train_cfg.scst_lr, prefixes=CAPTION_PREFIXES)
    history = []
    step = start_step
    n_skipped = 0
    for _epoch in range(train_cfg.epochs):
        order = rng.permutation(len(records))
        for i in order:
            record = records[i]
            cands = candidates_by_vid[record.video_id]
            if len(cands) == 0:
                n_skipped += 1
                continue
            loss, stats = scst_step(params, cfg, record, cands, vocab, train_cfg, rng)
            if loss is None:
                n_skipped += stats.get("skipped", 1)
                continue
            zero_grads(params)
            loss.backward()
            for pfx in CAPTION_PREFIXES:
                clip_grad_norm(params, train_cfg.grad_clip, prefix=pfx)
            opt.step()
            step += 1
            history.append({"loss": loss.item(), **stats})
            if log_fn and step % train_cfg.log_every == 0:
                log_fn({"step": step, "epoch": _epoch, "loss": loss.item(),
                        "mode": "scst", **stats})
    model.step = step
    return history


# ---------------------------------------------------------------------------
# gradient checking


GRAD_CHECK_PARTS = {
    "relation": ("rel.",),
    "gate": ("dec.gate.",),
    "sentence_rnn": ("dec.srnn.", "dec.vis.", "dec.lin.", "dec.pos0.", "dec.pos1."),
    "word_rnn": ("dec.wrnn.", "dec.out.", "dec.embed"),
    "frame_attention": ("dec.att.",),
    "selector": ("sel.",),
    "scorer": ("scorer.",),
    "full": None,  # every parameter
}


def _tiny_fixture(rng, d_feature=8, hidden=16, vocab_size=20, n_events=3):
    """Small random model + video for finite-difference checks."""
    from eventcap.data.types import EventAnnotation, VideoRecord
    from eventcap.model import Model, ModelConfig
    from eventcap.proposals import CandidateSet, Proposal

    cfg = ModelConfig(
        d_feature=d_feature, vocab_size=vocab_size, hidden_sentence=hidden,
        hidden_word=hidden, hidden_selector=hidden, d_emb=6, d_enc=8, d_ptr=6,
        d_pos=4, d_rel_hidden=8, d_k=5, d_v=5, d_l=5, d_pos_hidden=5,
        d_gate=7, d_att=5, max_len=8, max_events=n_events + 2,
        scales=(0.3, 0.6), scorer_hidden=6,
    )

    class _V:
        id_to_token = [f"w{i}" for i in range(vocab_size)]

        def __len__(self):
            return vocab_size

    duration = 8.0
    t = 16
    features = rng.standard_normal((t, d_feature))
    starts = np.sort(rng.uniform(0, duration - 2.0, size=n_events))
    events = []
    for s in starts:
        e = min(duration, s + rng.uniform(1.0, 3.0))
        n_words = int(rng.integers(3, 6))
        words = [f"w{int(rng.integers(4, vocab_size))}" for _ in range(n_words)]
        events.append(EventAnnotation(float(s), float(e), words))
    record = VideoRecord(video_id="tiny", duration=duration, features=features,
                         events=events, stride=0.5).validate()
    model = Model.init(cfg, _V(), seed=int(rng.integers(2**31)))
    sentences = [[BOS] + [int(w[1:]) for w in ev.sentence] + [EOS] for ev in events]
    cands = CandidateSet("tiny", sorted(
        [Proposal(float(s), float(min(duration, s + w)), 1.0)
         for s, w in [(0.5, 2.0), (2.0, 2.5), (4.5, 3.0), (1.0, 5.0)]],
        key=lambda p: (-p.score, -(p.end - p.start), p.start)))
    windows = [(0.0, 3.0), (2.0, 6.0), (5.0, 8.0)]
    targets = np.array([[1.0], [0.0], [1.0]])
    return model, record, sentences, cands, windows, targets


def _composite_loss(model, record, sentences, cands, windows, targets):
    from eventcap.proposals import score_windows

    events = sorted(record.events, key=lambda ev: ev.start)
    xe, _n, _ = teacher_forced_nll(model.params, model.cfg, record, events, sentences)
    sel, _weak = train_selector_step(cands, record, record.events, model.params)
    p = score_windows(model.params, record, windows)
    eps = 1e-9
    y = tensor(targets)
    bce = -((y * (p + eps).log() + (1.0 - y) * (1.0 - p + eps).log()).mean())
    return xe * (1.0 / max(1, _n)) + sel + bce


def grad_check(part, tolerance=1e-4, seed=0, step=1e-5, grad_transform=None,
               dims=None, max_entries_per_param=None):
    """Compare analytic gradients with central finite differences.

    ``part`` names a parameter scope (see GRAD_CHECK_PARTS). The loss is the
    composite caption + selector + scorer objective on a tiny random fixture,
    so every checked parameter participates. ``grad_transform(name, grad)``,
    when given, post-processes analytic gradients (negative-control hook).
    ``max_entries_per_param`` subsamples entries within each tensor (every
    parameter group is still covered). Returns a report dict with the max
    relative error and worst parameter.
    """
    if part not in GRAD_CHECK_PARTS:
        raise ValidationError(f"unknown grad check part {part!r}; "
                              f"choose from {sorted(GRAD_CHECK_PARTS)}")
    rng = np.random.default_rng(seed)
    fixture = _tiny_fixture(rng, **(dims or {}))
    model = fixture[0]
    params = model.params

    def loss_value():
        with no_grad():
            return _composite_loss(*fixture).item()

    zero_grads(params)
    loss = _composite_loss(*fixture)
    loss.backward()
    analytic = {}
    for name in _scoped(params, GRAD_CHECK_PARTS[part]):
        g = params[name].grad
        g = np.zeros_like(params[name].data) if g is None else g.copy()
        if grad_transform is not None:
            g = grad_transform(name, g)
        analytic[name] = g

    report = {"part": part, "tolerance": tolerance, "max_rel_err": 0.0,
              "worst_param": None, "n_entries": 0, "failures": [], "passed": True}
    for name, g in sorted(analytic.items()):
        data = params[name].data
        flat_indices = np.arange(data.size)
        if max_entries_per_param is not None and data.size > max_entries_per_param:
            flat_indices = np.sort(rng.choice(data.size, size=max_entries_per_param,
                                              replace=False))
        for flat in flat_indices:
            idx = np.unravel_index(flat, data.shape)
            orig = data[idx]
            data[idx] = orig + step
            up = loss_value()
            data[idx] = orig - step
            down = loss_value()
            data[idx] = orig
            numeric = (up - down) / (2.0 * step)
            a = g[idx]
            if not np.isfinite(a) or not np.isfinite(numeric):
                report["failures"].append({"param": name, "index": list(idx),
                                           "error": "non-finite"})
                report["passed"] = False
                continue
            rel = abs(a - numeric) / max(1e-5, abs(a) + abs(numeric))
            report["n_entries"] += 1
            if rel > report["max_rel_err"]:
                report["max_rel_err"] = rel
                report["worst_param"] = name
            if rel >= tolerance:
                report["failures"].append({"param": name, "index": list(idx),
                                           "analytic": float(a),
                                           "numeric": float(numeric),
                                           "rel_err": float(rel)})
    if report["max_rel_err"] >= tolerance or report["failures"]:
        report["passed"] = False
    return report


# ---------------------------------------------------------------------------
# ensembling


def ensemble_decode(members, record, events, max_len=None):
    """Greedy decode with the mean of the members' word distributions.

    ``members`` is a list of models sharing vocabulary and dims; each keeps
    its own recurrent state, all consume the jointly argmaxed token.
    """
    if not members:
        raise ValidationError("ensemble needs at least one model")
    first = members[0]
    for m in members[1:]:
        if len(m.vocab) != len(first.vocab) or \
                m.vocab.id_to_token != first.vocab.id_to_token:
            raise ValidationError("ensemble members use different vocabularies")
    events = sorted(events, key=lambda p: (p.start, p.end))
    if not events:
        return []
    max_len = first.cfg.max_len if max_len is None else max_len
    with no_grad():
        zs = [event_features(m.params, m.cfg, record, events)[0] for m in members]
        states = [init_decoder_state(m.cfg) for m in members]
        sentences = []
        for i, ev in enumerate(events):
            frames = [tensor(record.span_features(ev.start, ev.end)) for _ in members]
            word_states = []
            for k, m in enumerate(members):
                if not m.cfg.use_sentence_rnn:
                    states[k] = init_decoder_state(m.cfg)
                l = position_embed(m.params, ev, record.duration)
                states[k] = sentence_step(m.params, m.cfg, states[k], l, zs[k][i : i + 1, :])
                word_states.append(zero_state(m.cfg.hidden_word))
            prev = BOS
            tokens = []
            for _t in range(max_len):
                probs = []
                for k, m in enumerate(members):
                    w_h, w_c = word_states[k]
                    w_h, w_c, logits, _ = word_step(m.params, w_h, w_c, prev,
                                                    states[k].h, frames[k])
                    word_states[k] = (w_h, w_c)
                    probs.append(softmax(logits, axis=1).data[0])
                mean_probs = np.mean(np.stack(probs), axis=0)
                nxt = int(np.argmax(mean_probs))
                if nxt == EOS:
                    break
                tokens.append(nxt)
                prev = nxt
            sentences.append(tokens)
            for k in range(len(members)):
                states[k] = dataclasses.replace(states[k], s_prev=word_states[k][0])
    return sentences
