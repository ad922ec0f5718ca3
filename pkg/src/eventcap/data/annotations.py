"""Annotation and results JSON, ActivityNet-Captions conventions.

Annotations: ``{video_id: {"duration": s, "timestamps": [[s,e],...],
"sentences": [...]}}``. Results: ``{"version", "results": {video_id:
[{"sentence", "timestamp": [s,e]}, ...]}, "external_data"}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from eventcap import ValidationError
from eventcap.data.types import EventAnnotation
from eventcap.data.vocab import tokenize

RESULTS_VERSION = "VERSION 1.0"

__all__ = ["VideoAnnotation", "load_annotations", "save_annotations", "save_results", "load_results"]


@dataclass
class VideoAnnotation:
    duration: float
    events: list[EventAnnotation]


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON in {path}: {exc}") from exc


def load_annotations(path):
    """Parse and validate an annotation file into {video_id: VideoAnnotation}."""
    raw = _load_json(path)
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: top level must be an object")
    out = {}
    for vid, entry in raw.items():
        if not isinstance(entry, dict) or "duration" not in entry:
            raise ValidationError(f"{vid}: missing required field 'duration'")
        duration = float(entry["duration"])
        timestamps = entry.get("timestamps", [])
        sentences = entry.get("sentences", [])
        if len(timestamps) != len(sentences):
            raise ValidationError(
                f"{vid}: {len(timestamps)} timestamps but {len(sentences)} sentences"
            )
        events = []
        for (s, e), sentence in zip(timestamps, sentences):
            if s >= e:
                raise ValidationError(f"{vid}: timestamp [{s}, {e}] has start >= end")
            events.append(EventAnnotation(float(s), float(e), tokenize(sentence)))
        out[vid] = VideoAnnotation(duration=duration, events=events)
    return out


def save_annotations(path, annotations):
    """Inverse of load_annotations; sentences are written space-joined."""
    raw = {
        vid: {
            "duration": ann.duration,
            "timestamps": [[ev.start, ev.end] for ev in ann.events],
            "sentences": [" ".join(ev.sentence) for ev in ann.events],
        }
        for vid, ann in annotations.items()
    }
    with open(path, "w") as fh:
        json.dump(raw, fh, indent=1)


def save_results(path, predictions, external_data=None):
    """Write predictions {video_id: [(span, tokens), ...]} as a results file."""
    results = {
        vid: [
            {"sentence": " ".join(tokens), "timestamp": [float(span[0]), float(span[1])]}
            for span, tokens in preds
        ]
        for vid, preds in predictions.items()
    }
    payload = {
        "version": RESULTS_VERSION,
        "results": results,
        "external_data": external_data or {"used": False, "details": "synthetic corpus"},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_results(path):
    """Read a results file back into {video_id: [(span, tokens), ...]}."""
    raw = _load_json(path)
    if "results" not in raw:
        raise ValidationError(f"{path}: missing 'results'")
    out = {}
    for vid, preds in raw["results"].items():
        rows = []
        for item in preds:
            ts = item.get("timestamp")
            if not ts or len(ts) != 2 or ts[0] >= ts[1]:
                raise ValidationError(f"{vid}: bad timestamp {ts!r} in results")
            rows.append(((float(ts[0]), float(ts[1])), tokenize(item.get("sentence", ""))))
        out[vid] = rows
    return out
