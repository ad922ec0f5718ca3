import sys

import numpy as np
import pytest

from eventcap.data.synth import SynthConfig, synthesize
from eventcap.data.types import EventAnnotation, VideoRecord
from eventcap.data.vocab import Vocabulary
from eventcap.model import Model
from eventcap.training import TrainConfig


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines past capture, one per claim."""
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "VERDICTS", None):
        return
    terminalreporter.section("acceptance verdicts")
    for line in mod.VERDICTS:
        terminalreporter.write_line(line)

TINY_DIMS = dict(hidden=12, d_emb=8, d_enc=8, d_ptr=6, d_pos=4, d_rel_hidden=8,
                 d_k=6, d_v=6, d_l=6, d_pos_hidden=6, d_gate=8, d_att=6)


def tiny_train_config(**overrides):
    base = dict(TINY_DIMS, epochs=2, lr=3e-3, seed=0, log_every=10**9)
    base.update(overrides)
    return TrainConfig(**base)


def random_record(rng, duration=12.0, d_feature=8, n_events=3, stride=0.5,
                  vocab_words=None):
    """A valid VideoRecord with random features and simple sentences."""
    from eventcap.data.types import num_clips

    t = num_clips(duration, stride)
    features = rng.standard_normal((t, d_feature)).astype(np.float32)
    events = []
    bounds = np.sort(rng.uniform(0.0, duration, size=2 * n_events))
    for i in range(n_events):
        start, end = float(bounds[2 * i]), float(bounds[2 * i + 1])
        if end - start < 0.6:
            end = min(duration, start + 0.6)
        words = vocab_words or ["a", "man", "lifts", "the", "ball"]
        events.append(EventAnnotation(start, end, list(words)))
    return VideoRecord(video_id=f"r{rng.integers(10**6)}", duration=duration,
                       features=features, events=events, stride=stride).validate()


@pytest.fixture(scope="session")
def tiny_corpus():
    cfg = SynthConfig(n_videos=6, duration_min=14.0, duration_max=24.0,
                      mean_events=2.5, vocab_min_count=1, val_fraction=0.0, seed=7)
    return synthesize(cfg)


@pytest.fixture(scope="session")
def tiny_setup(tiny_corpus):
    """(records, vocab, model) triple shared by fast unit tests."""
    records = tiny_corpus.records
    vocab = Vocabulary.from_corpus(records, min_count=1, max_len=30)
    tcfg = tiny_train_config()
    model = Model.init(tcfg.model_config(records[0].feature_dim, len(vocab)),
                       vocab, seed=0)
    return records, vocab, model
