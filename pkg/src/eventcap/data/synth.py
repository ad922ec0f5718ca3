"""Synthetic dense-captioning corpus with plantable temporal structure.

Each video carries a handful of timed events.  Every event belongs to one
activity; the activity owns an orthonormal direction in feature space and a
small vocabulary slice (verb/object/adjective/adverb synonyms).  Clip rows
covered by an event receive the activity vector scaled by the covered
fraction of the clip, overlaps sum, and Gaussian noise is added on top, so
cosine similarity against the activity basis recovers the planted label no
matter the row norm.

Sentences are templated.  The first sentence of a video carries an opening
marker; every later sentence ends with "after the <object>" where the object
is the canonical object noun of the *previous* event.  A captioner that never
looks outside the current event cannot resolve that token; one that carries
cross-event context can.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os

import numpy as np

from eventcap import ValidationError
from eventcap.config import coerce_config, dump_config, load_config, parse_kv_text
from eventcap.data.annotations import VideoAnnotation, load_annotations, save_annotations
from eventcap.data.features import read_matrix, write_matrix
from eventcap.data.types import EventAnnotation, VideoRecord, num_clips
from eventcap.data.vocab import Vocabulary

__all__ = [
    "SynthConfig",
    "SynthCorpus",
    "synthesize",
    "generate_corpus",
    "write_corpus",
    "load_corpus",
]

_SUBJECTS = (
    ("a", "man"), ("a", "woman"), ("the", "athlete"), ("a", "girl"),
    ("a", "boy"), ("the", "coach"), ("a", "player"), ("the", "dancer"),
    ("the", "referee"), ("a", "kid"), ("the", "instructor"), ("a", "swimmer"),
)

_VERBS = (
    "lifts", "spins", "throws", "catches", "kicks", "drags", "pushes", "pulls",
    "swings", "raises", "lowers", "flips", "rolls", "carries", "drops", "grabs",
    "holds", "shakes", "taps", "strikes", "tosses", "twirls", "waves", "wipes",
    "folds", "bends", "stacks", "slides", "bounces", "juggles", "polishes",
    "paints", "brushes", "scrubs", "sharpens", "measures", "cuts", "ties",
    "wraps", "opens", "closes", "loads", "unloads", "mounts", "adjusts",
    "inspects", "balances", "launches",
)

_OBJECTS = (
    "ball", "rope", "board", "barbell", "racket", "ladder", "bucket", "broom",
    "helmet", "kayak", "javelin", "discus", "hurdle", "mat", "net", "paddle",
    "puck", "stick", "bow", "arrow", "dart", "frisbee", "club", "bat",
    "glove", "cone", "flag", "drum", "violin", "guitar", "trumpet", "wheel",
    "tire", "crate", "box", "banner", "kite", "sled", "skate", "pole",
    "anchor", "oar", "saddle", "harness", "shield", "torch", "whistle", "lantern",
)

_ADJECTIVES = (
    "red", "blue", "green", "yellow", "heavy", "light", "small", "large",
    "shiny", "dusty", "wooden", "metal", "striped", "plain", "round", "flat",
    "long", "short", "broken", "new", "old", "wet", "dry", "soft",
    "bright", "dark", "narrow", "wide",
)

_ADVERBS = (
    "quickly", "slowly", "carefully", "roughly", "smoothly", "firmly",
    "gently", "briskly", "steadily", "loosely", "sharply", "softly",
    "evenly", "widely", "neatly", "boldly", "calmly", "eagerly",
    "lightly", "proudly", "quietly", "rapidly", "silently", "tightly",
    "warily", "wildly", "stiffly", "deftly",
)


@dataclasses.dataclass
class SynthConfig:
    n_videos: int = 200
    duration_min: float = 24.0
    duration_max: float = 72.0
    mean_events: float = 3.7
    max_events: int = 12
    n_activities: int = 14
    templates_per_activity: int = 3
    d_rgb: int = 16
    d_flow: int = 16
    stride: float = 0.5
    noise: float = 0.1
    max_overlap_tiou: float = 0.5
    min_len_frac: float = 0.08
    max_len_frac: float = 0.30
    val_fraction: float = 0.2
    vocab_min_count: int = 5
    vocab_max_len: int = 30
    seed: int = 0

    @property
    def feature_dim(self):
        return self.d_rgb + self.d_flow

    def validate(self):
        if self.n_videos < 1:
            raise ValidationError("n_videos must be >= 1")
        if self.duration_min <= 0 or self.duration_max < self.duration_min:
            raise ValidationError("need 0 < duration_min <= duration_max")
        if self.mean_events < 1:
            raise ValidationError("mean_events must be >= 1")
        if self.max_events < 1:
            raise ValidationError("max_events must be >= 1")
        if self.n_activities < 2:
            raise ValidationError("n_activities must be >= 2")
        if self.n_activities > min(len(_VERBS), len(_OBJECTS)) // 2:
            raise ValidationError(f"n_activities must be <= {min(len(_VERBS), len(_OBJECTS)) // 2}")
        if not 1 <= self.templates_per_activity <= 3:
            raise ValidationError("templates_per_activity must be in 1..3")
        if self.d_rgb <= 0 or self.d_flow <= 0:
            raise ValidationError("feature dims must be positive")
        if self.n_activities > self.feature_dim:
            raise ValidationError("n_activities must be <= d_rgb + d_flow for an orthonormal basis")
        if self.stride <= 0:
            raise ValidationError("stride must be positive")
        if self.noise < 0:
            raise ValidationError("noise must be >= 0")
        if not 0 <= self.max_overlap_tiou < 1:
            raise ValidationError("max_overlap_tiou must be in [0, 1)")
        if not 0 < self.min_len_frac <= self.max_len_frac <= 1:
            raise ValidationError("need 0 < min_len_frac <= max_len_frac <= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValidationError("val_fraction must be in [0, 1)")


@dataclasses.dataclass
class SynthCorpus:
    config: SynthConfig
    records: list
    activity_vectors: np.ndarray  # (A, D) orthonormal rows
    activity_labels: list  # per record: list of activity ids, temporal order


def _activity_words(cfg, rng):
    """Deterministic per-activity word slices; rng only shuffles bank order."""
    verb_ids = rng.permutation(len(_VERBS))
    obj_ids = rng.permutation(len(_OBJECTS))
    adj_ids = rng.permutation(len(_ADJECTIVES))
    adv_ids = rng.permutation(len(_ADVERBS))
    words = []
    for a in range(cfg.n_activities):
        words.append({
            "verbs": [_VERBS[verb_ids[2 * a]], _VERBS[verb_ids[2 * a + 1]]],
            "objects": [_OBJECTS[obj_ids[2 * a]], _OBJECTS[obj_ids[2 * a + 1]]],
            "adjectives": [_ADJECTIVES[adj_ids[(2 * a) % len(_ADJECTIVES)]],
                           _ADJECTIVES[adj_ids[(2 * a + 1) % len(_ADJECTIVES)]]],
            "adverbs": [_ADVERBS[adv_ids[(2 * a) % len(_ADVERBS)]],
                        _ADVERBS[adv_ids[(2 * a + 1) % len(_ADVERBS)]]],
        })
    return words


def _activity_basis(cfg, rng):
    d = cfg.feature_dim
    raw = rng.standard_normal((d, d))
    q, r = np.linalg.qr(raw)
    # fix signs so the basis is unique given raw
    q = q * np.sign(np.diag(r))[None, :]
    return q[:, : cfg.n_activities].T.copy()  # (A, D) orthonormal rows


def _sample_spans(cfg, duration, k, rng):
    """k spans with pairwise tIoU <= max_overlap_tiou, sorted by start."""
    spans = []
    lo = cfg.min_len_frac * duration
    hi = cfg.max_len_frac * duration
    for _ in range(k):
        placed = False
        for _attempt in range(60):
            length = rng.uniform(lo, hi)
            start = rng.uniform(0.0, duration - length)
            cand = (start, start + length)
            if all(_tiou(cand, s) <= cfg.max_overlap_tiou for s in spans):
                spans.append(cand)
                placed = True
                break
        if not placed:
            break
    if len(spans) < k:
        # crowded video: fall back to evenly spaced disjoint slots
        spans = []
        slot = duration / k
        for i in range(k):
            spans.append((i * slot + 0.25 * slot, i * slot + 0.75 * slot))
    spans.sort()
    return spans


def _tiou(a, b):
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def _sentence(cfg, words, activity, prev_activity, rng):
    w = words[activity]
    det, noun = _SUBJECTS[rng.integers(len(_SUBJECTS))]
    verb = w["verbs"][rng.integers(2)]
    obj = w["objects"][rng.integers(2)]
    template = int(rng.integers(cfg.templates_per_activity))
    tokens = [det, noun, verb, "the"]
    if template == 2:
        tokens.append(w["adjectives"][rng.integers(2)])
    tokens.append(obj)
    if template == 1:
        tokens.append(w["adverbs"][rng.integers(2)])
    if prev_activity is None:
        tokens += ["at", "first"]
    else:
        # cross-sentence hook: canonical object noun of the previous event
        tokens += ["after", "the", words[prev_activity]["objects"][0]]
    return tokens


def _plant_features(cfg, duration, spans, activities, basis, rng):
    t = num_clips(duration, cfg.stride)
    feats = np.zeros((t, cfg.feature_dim))
    for (start, end), act in zip(spans, activities):
        first = int(math.floor(start / cfg.stride))
        last = min(t - 1, int(math.ceil(end / cfg.stride)) - 1)
        for r in range(first, last + 1):
            clip_lo, clip_hi = r * cfg.stride, min((r + 1) * cfg.stride, duration)
            width = clip_hi - clip_lo
            if width <= 0:
                continue
            frac = max(0.0, min(end, clip_hi) - max(start, clip_lo)) / width
            if frac > 0:
                feats[r] += frac * basis[act]
    if cfg.noise > 0:
        feats += cfg.noise * rng.standard_normal(feats.shape)
    return feats


def synthesize(cfg):
    """Generate the full corpus; bitwise deterministic given the config."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    words = _activity_words(cfg, rng)
    basis = _activity_basis(cfg, rng)
    records = []
    labels = []
    for i in range(cfg.n_videos):
        duration = float(rng.uniform(cfg.duration_min, cfg.duration_max))
        k = 1 + int(rng.poisson(cfg.mean_events - 1.0))
        k = min(k, cfg.max_events)
        spans = _sample_spans(cfg, duration, k, rng)
        acts = [int(a) for a in rng.integers(cfg.n_activities, size=len(spans))]
        feats = _plant_features(cfg, duration, spans, acts, basis, rng)
        events = []
        prev = None
        for (start, end), act in zip(spans, acts):
            events.append(EventAnnotation(start=start, end=end,
                                          sentence=_sentence(cfg, words, act, prev, rng)))
            prev = act
        rec = VideoRecord(video_id=f"v{i:05d}", duration=duration,
                          features=feats.astype(np.float32), events=events,
                          stride=cfg.stride)
        rec.validate()
        records.append(rec)
        labels.append(acts)
    return SynthCorpus(config=cfg, records=records, activity_vectors=basis,
                       activity_labels=labels)


def generate_corpus(cfg):
    return synthesize(cfg).records


def train_val_split(corpus):
    n_val = int(round(corpus.config.val_fraction * len(corpus.records)))
    n_val = min(n_val, len(corpus.records) - 1) if len(corpus.records) > 1 else 0
    return corpus.records[: len(corpus.records) - n_val], corpus.records[len(corpus.records) - n_val:]


def write_corpus(out_dir, corpus):
    """Lay out annotations + features + vocab under ``out_dir``."""
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    train, val = train_val_split(corpus)
    for split, recs in (("train", train), ("val", val)):
        annos = {r.video_id: VideoAnnotation(duration=r.duration, events=r.events)
                 for r in recs}
        save_annotations(os.path.join(out_dir, f"{split}.json"), annos)
    for rec in corpus.records:
        write_matrix(os.path.join(out_dir, "features", f"{rec.video_id}.dvcf"),
                     rec.features, dtype="float32")
    vocab = Vocabulary.from_corpus(train, min_count=corpus.config.vocab_min_count,
                                   max_len=corpus.config.vocab_max_len)
    vocab.save(os.path.join(out_dir, "vocab.json"))
    with open(os.path.join(out_dir, "synth.cfg"), "w") as fh:
        fh.write(dump_config(corpus.config))
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump({"n_train": len(train), "n_val": len(val),
                   "vocab_size": len(vocab), "vocab_hash": vocab.content_hash()}, fh, indent=2)
    return vocab


def load_corpus(corpus_dir, split="train"):
    """Read one split back as validated VideoRecords plus the stored vocab."""
    path = os.path.join(corpus_dir, f"{split}.json")
    if not os.path.exists(path):
        raise ValidationError(f"no such split {split!r} under {corpus_dir}")
    annos = load_annotations(path)
    cfg = load_config(os.path.join(corpus_dir, "synth.cfg"), SynthConfig)
    records = []
    for vid in sorted(annos):
        feats = read_matrix(os.path.join(corpus_dir, "features", f"{vid}.dvcf"))
        rec = VideoRecord(video_id=vid, duration=annos[vid].duration,
                          features=feats, events=annos[vid].events, stride=cfg.stride)
        rec.validate()
        records.append(rec)
    vocab = Vocabulary.load(os.path.join(corpus_dir, "vocab.json"))
    return records, vocab, cfg
