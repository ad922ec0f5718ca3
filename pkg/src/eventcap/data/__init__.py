"""Corpus plumbing: records, binary feature files, vocabulary, synthesis."""

from eventcap.data.annotations import (
    VideoAnnotation,
    load_annotations,
    load_results,
    save_annotations,
    save_results,
)
from eventcap.data.features import read_matrix, write_matrix
from eventcap.data.synth import SynthConfig, generate_corpus, load_corpus, synthesize, write_corpus
from eventcap.data.types import EventAnnotation, VideoRecord, num_clips
from eventcap.data.vocab import BOS, EOS, PAD, UNK, Vocabulary, tokenize

__all__ = [
    "VideoAnnotation", "load_annotations", "load_results", "save_annotations",
    "save_results", "read_matrix", "write_matrix", "SynthConfig",
    "generate_corpus", "load_corpus", "synthesize", "write_corpus",
    "EventAnnotation", "VideoRecord", "num_clips", "BOS", "EOS", "PAD", "UNK",
    "Vocabulary", "tokenize",
]
