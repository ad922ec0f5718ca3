"""Hierarchical caption decoder with cross-modal gating.

One sentence-level LSTM runs across events; one word-level LSTM generates
each sentence. Per event, a sigmoid gate computed from (position embedding,
relational event feature, previous sentence's last word hidden, previous
sentence hidden) balances the projected visual feature against the projected
linguistic history before they enter the sentence LSTM. Word steps attend
additively over the raw frame rows inside the event span.

Ablation switches: ``use_relation`` swaps the relational feature for plain
mean pooling upstream, ``use_gate`` feeds the two projections ungated, and
``use_sentence_rnn`` resets the cross-event recurrent state (h and the
linguistic carry s) at every event.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from eventcap import ValidationError
from eventcap.autodiff import Tensor, concat, gather_rows, log_softmax, no_grad, softmax, tensor
from eventcap.data.vocab import BOS, EOS, PAD
from eventcap.layers import affine_step, init_affine, init_lstm, lstm_step, parameter, xavier_uniform, zero_state
from eventcap.relation import encode_events, mean_pool

__all__ = [
    "DecoderState",
    "init_decoder",
    "position_embed",
    "fusion_gate",
    "sentence_step",
    "frame_attention",
    "word_step",
    "event_features",
    "teacher_forced_nll",
    "decode_paragraph",
    "generate_paragraph",
]


@dataclasses.dataclass
class DecoderState:
    """Cross-event carry: sentence hidden/cell and the last word hidden."""

    h: Tensor
    c: Tensor
    s_prev: Tensor
    g: Tensor = None  # gate of the most recent sentence_step, for inspection
    l: Tensor = None


def init_decoder_state(cfg):
    h, c = zero_state(cfg.hidden_sentence)
    s_prev, _ = zero_state(cfg.hidden_word)
    return DecoderState(h=h, c=c, s_prev=s_prev)


def init_decoder(params, rng, cfg, d_z):
    d_g = 1 if cfg.gate_scalar else cfg.d_gate
    params["dec.embed"] = parameter(
        xavier_uniform(rng, cfg.vocab_size, cfg.d_emb, shape=(cfg.vocab_size, cfg.d_emb)))
    init_affine(params, "dec.pos0", rng, 2, cfg.d_pos_hidden)
    init_affine(params, "dec.pos1", rng, cfg.d_pos_hidden, cfg.d_l)
    init_affine(params, "dec.gate", rng,
                cfg.d_l + d_z + cfg.hidden_word + cfg.hidden_sentence, d_g)
    init_affine(params, "dec.vis", rng, d_z, cfg.d_gate, bias=False)
    init_affine(params, "dec.lin", rng, cfg.hidden_word, cfg.d_gate, bias=False)
    init_lstm(params, "dec.srnn", rng, 2 * cfg.d_gate + cfg.d_l, cfg.hidden_sentence)
    init_affine(params, "dec.att.h", rng, cfg.hidden_word, cfg.d_att, bias=False)
    init_affine(params, "dec.att.f", rng, cfg.d_feature, cfg.d_att, bias=False)
    init_affine(params, "dec.att.v", rng, cfg.d_att, 1, bias=False)
    init_lstm(params, "dec.wrnn", rng,
              cfg.d_emb + cfg.d_feature + cfg.hidden_sentence, cfg.hidden_word)
    init_affine(params, "dec.out", rng, cfg.hidden_word, cfg.vocab_size)
    return params


def position_embed(params, span, duration):
    """Embedding of the normalized (start, end) pair of a proposal."""
    start, end = (span.start, span.end) if hasattr(span, "start") else span
    if not (0 <= start < end <= duration + 1e-9):
        raise ValidationError(f"span [{start}, {end}] outside [0, {duration}]")
    x = tensor(np.array([[start / duration, end / duration]]))
    return affine_step(params, "dec.pos1", affine_step(params, "dec.pos0", x).relu())


def fusion_gate(params, l, z, s_prev, h_prev):
    """Elementwise sigmoid gate over the four concatenated inputs."""
    return affine_step(params, "dec.gate", concat([l, z, s_prev, h_prev], axis=1)).sigmoid()


def sentence_step(params, cfg, state, l, z):
    """Advance the sentence LSTM for one event; returns the new state."""
    vis = affine_step(params, "dec.vis", z)
    lin = affine_step(params, "dec.lin", state.s_prev)
    if cfg.use_gate:
        g = fusion_gate(params, l, z, state.s_prev, state.h)
        x = concat([g * vis, (1.0 - g) * lin, l], axis=1)
    else:
        g = None
        x = concat([vis, lin, l], axis=1)
    h, c = lstm_step(params, "dec.srnn", x, state.h, state.c)
    return DecoderState(h=h, c=c, s_prev=state.s_prev, g=g, l=l)


def frame_attention(params, word_hidden, frames):
    """Additive attention over the event's frame rows.

    Returns (context (1, D), weights (1, T)); weights sum to 1.
    """
    if frames.shape[0] < 1:
        raise ValidationError("frame_attention needs at least one frame")
    a = affine_step(params, "dec.att.h", word_hidden)  # (1, d_att)
    b = affine_step(params, "dec.att.f", frames)  # (T, d_att)
    e = affine_step(params, "dec.att.v", (a + b).tanh())  # (T, 1)
    weights = softmax(e.reshape((1, frames.shape[0])), axis=1)
    return weights @ frames, weights


def word_step(params, word_h, word_c, prev_token_id, sentence_h, frames):
    """One word-LSTM step; returns (hidden, cell, vocab logits, attention)."""
    vocab_size = params["dec.embed"].shape[0]
    if not 0 <= prev_token_id < vocab_size:
        raise ValidationError(f"token id {prev_token_id} outside vocabulary of {vocab_size}")
    emb = gather_rows(params["dec.embed"], [prev_token_id])
    ctx, att = frame_attention(params, word_h, frames)
    x = concat([emb, ctx, sentence_h], axis=1)
    h, c = lstm_step(params, "dec.wrnn", x, word_h, word_c)
    logits = affine_step(params, "dec.out", h)
    return h, c, logits, att


def event_features(params, cfg, record, events):
    """Per-event conditioning rows z: relational when enabled, pooled otherwise."""
    if cfg.use_relation:
        scores, z, _pooled = encode_events(record, events, params, cfg.d_pos)
        return z, scores
    pooled = np.stack([mean_pool(record, p) for p in events])
    return tensor(pooled), None


def _sorted_events(events):
    out = sorted(events, key=lambda p: (p.start, p.end))
    return out


def teacher_forced_nll(params, cfg, record, events, sentences_ids):
    """Summed token NLL across all events of one video, teacher forced.

    ``sentences_ids`` holds encoded sentences aligned with ``events`` (already
    in temporal order): BOS, payload, then EOS if the sentence terminated;
    trailing PAD is ignored, so padded positions never produce logits.
    Returns (total negative log-likelihood, token count, final carry state).
    """
    if len(events) != len(sentences_ids):
        raise ValidationError("events and sentences must align")
    if not events:
        raise ValidationError("teacher_forced_nll needs at least one event")
    z, _scores = event_features(params, cfg, record, events)
    state = init_decoder_state(cfg)
    pieces = []
    n_tokens = 0
    for i, (ev, ids) in enumerate(zip(events, sentences_ids)):
        if len(ids) < 2 or ids[0] != BOS:
            raise ValidationError("encoded sentence must start with BOS and be non-empty")
        if not cfg.use_sentence_rnn:
            state = init_decoder_state(cfg)
        l = position_embed(params, ev, record.duration)
        state = sentence_step(params, cfg, state, l, z[i : i + 1, :])
        frames = tensor(record.span_features(ev.start, ev.end))
        w_h, w_c = zero_state(cfg.hidden_word)
        for t in range(len(ids) - 1):
            target = ids[t + 1]
            if target == PAD:
                break
            w_h, w_c, logits, _ = word_step(params, w_h, w_c, ids[t], state.h, frames)
            logp = log_softmax(logits, axis=1)
            pieces.append(-logp[0:1, target : target + 1])
            n_tokens += 1
            if target == EOS:
                break
        state = DecoderState(h=state.h, c=state.c, s_prev=w_h, g=state.g, l=state.l)
    total = concat(pieces, axis=1).sum()
    return total, n_tokens, state


def decode_paragraph(params, cfg, record, events, mode="greedy", rng=None, max_len=None):
    """Decode one sentence per event; returns (token lists, ended flags)."""
    if mode not in ("greedy", "sample"):
        raise ValidationError(f"unknown decode mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValidationError("sample mode needs an rng")
    max_len = cfg.max_len if max_len is None else max_len
    events = _sorted_events(events)
    if not events:
        return [], []
    with no_grad():
        z, _scores = event_features(params, cfg, record, events)
        state = init_decoder_state(cfg)
        sentences, endeds = [], []
        for i, ev in enumerate(events):
            if not cfg.use_sentence_rnn:
                state = init_decoder_state(cfg)
            l = position_embed(params, ev, record.duration)
            state = sentence_step(params, cfg, state, l, z[i : i + 1, :])
            frames = tensor(record.span_features(ev.start, ev.end))
            w_h, w_c = zero_state(cfg.hidden_word)
            prev = BOS
            tokens = []
            ended = False
            for _t in range(max_len):
                w_h, w_c, logits, _ = word_step(params, w_h, w_c, prev, state.h, frames)
                if mode == "greedy":
                    nxt = int(np.argmax(logits.data[0]))
                else:
                    probs = softmax(logits, axis=1).data[0]
                    nxt = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
                    nxt = min(nxt, probs.size - 1)
                if nxt == EOS:
                    ended = True
                    break
                tokens.append(nxt)
                prev = nxt
            sentences.append(tokens)
            endeds.append(ended)
            state = DecoderState(h=state.h, c=state.c, s_prev=w_h, g=state.g, l=state.l)
    return sentences, endeds


def generate_paragraph(params, cfg, record, events, mode="greedy", rng=None, max_len=None):
    """Token-id sentences for the given events, in temporal order."""
    sentences, _ = decode_paragraph(params, cfg, record, events, mode=mode,
                                    rng=rng, max_len=max_len)
    return sentences
