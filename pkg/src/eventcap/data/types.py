"""Core data carriers for videos, events, and their features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from eventcap import ValidationError

__all__ = ["EventAnnotation", "VideoRecord", "num_clips"]


def num_clips(duration, stride):
    """Number of fixed-stride clips covering [0, duration]."""
    return int(math.ceil(duration / stride - 1e-9))


@dataclass
class EventAnnotation:
    start: float
    end: float
    sentence: list[str]

    def span(self):
        return (self.start, self.end)


@dataclass
class VideoRecord:
    """One video: frame-level features plus its timed, captioned events.

    ``features`` is a (T, D) matrix, one row per clip of ``stride`` seconds,
    D = concatenated modality widths.
    """

    video_id: str
    duration: float
    features: np.ndarray
    events: list[EventAnnotation] = field(default_factory=list)
    stride: float = 0.5

    def validate(self):
        if self.duration <= 0:
            raise ValidationError(f"{self.video_id}: duration must be positive")
        T = num_clips(self.duration, self.stride)
        if self.features.ndim != 2 or self.features.shape[0] != T:
            raise ValidationError(
                f"{self.video_id}: feature matrix has {self.features.shape[0]} rows, "
                f"expected {T} for duration {self.duration} at stride {self.stride}"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValidationError(f"{self.video_id}: non-finite feature values")
        for ev in self.events:
            if not (0 <= ev.start < ev.end <= self.duration + 1e-9):
                raise ValidationError(
                    f"{self.video_id}: event [{ev.start}, {ev.end}] outside [0, {self.duration}]"
                )
            if len(ev.sentence) < 1:
                raise ValidationError(f"{self.video_id}: event with empty sentence")
        return self

    @property
    def n_clips(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def rows_in_span(self, start, end):
        """Clip rows with positive-measure overlap of [start, end], clipped to
        the video extent. A span that rounds to no row yields its nearest clip,
        so the result is never empty. Spans entirely outside the video are
        rejected."""
        if end <= 0 or start >= self.duration:
            raise ValidationError(
                f"{self.video_id}: span [{start}, {end}] outside [0, {self.duration}]"
            )
        start = max(0.0, start)
        end = min(self.duration, end)
        first = int(math.floor(start / self.stride + 1e-9))
        last = int(math.ceil(end / self.stride - 1e-9)) - 1
        first = min(max(first, 0), self.n_clips - 1)
        last = min(max(last, first), self.n_clips - 1)
        return first, last

    def span_features(self, start, end):
        first, last = self.rows_in_span(start, end)
        return self.features[first : last + 1].astype(np.float64)

    def mean_feature(self, start, end):
        return self.span_features(start, end).mean(axis=0)
