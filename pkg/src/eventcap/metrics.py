"""Caption quality metrics, written from scratch, plus the tIoU-matched
dense-captioning protocol.

- bleu4: clipped n-gram precisions (n = 1..4), no smoothing, brevity penalty
  against the closest reference length (ties to the shorter).
- meteor_lite: exact-unigram METEOR. The alignment maximizes matches, then
  minimizes chunks; chunk minimization is exact (memoized search) for
  sentences up to ``_EXACT_LIMIT`` tokens and first-fit otherwise.
- cider: base tf-idf form, idf from the reference corpus; a single-video
  corpus degenerates (every idf would be log 1 = 0), so idf falls back to
  uniform there, which cosine normalization makes equivalent to raw counts.
- dense_caption_eval: per threshold, each predicted event is scored against
  the sentences of GT events overlapping at tIoU >= t; no match scores 0;
  mean over predictions, then over thresholds.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections import Counter

from eventcap import ValidationError
from eventcap.proposals import tiou

__all__ = [
    "bleu4",
    "meteor_lite",
    "cider",
    "cider_scores",
    "dense_caption_eval",
    "ScoreReport",
    "DENSE_THRESHOLDS",
]

DENSE_THRESHOLDS = (0.3, 0.5, 0.7, 0.9)
_EXACT_LIMIT = 16  # chunk search is exact up to this many tokens per side
METRIC_NAMES = ("bleu4", "meteor", "cider")


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_sentences(candidate, references):
    if not candidate:
        raise ValidationError("empty candidate sentence")
    if not references or any(not r for r in references):
        raise ValidationError("references must be non-empty sentences")


def bleu4(candidate, references):
    candidate = list(candidate)
    references = [list(r) for r in references]
    _check_sentences(candidate, references)
    c = len(candidate)
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    log_sum = 0.0
    for n in range(1, 5):
        cand_counts = _ngrams(candidate, n)
        total = sum(cand_counts.values())
        if total == 0:
            return 0.0
        max_ref = Counter()
        for ref in references:
            for g, k in _ngrams(ref, n).items():
                if k > max_ref[g]:
                    max_ref[g] = k
        clipped = sum(min(k, max_ref[g]) for g, k in cand_counts.items())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / 4.0)


def _min_chunks_exact(cand, ref, need):
    """Minimal chunk count over all maximal 1-1 exact alignments.

    Search over candidate positions left to right; state is (position,
    bitmask of used reference slots, reference slot of the previous pair or
    -1). A new pair opens a chunk unless it extends the previous pair by one
    on both sides.
    """
    n = len(cand)
    ref_pos = {}
    for j, w in enumerate(ref):
        ref_pos.setdefault(w, []).append(j)
    rest = [Counter(cand[i:]) for i in range(n + 1)]
    memo = {}

    def go(i, mask, prev):
        if i == n:
            return 0
        key = (i, mask, prev)
        hit = memo.get(key)
        if hit is not None:
            return hit
        w = cand[i]
        used_w = sum(1 for j in ref_pos.get(w, ()) if mask >> j & 1)
        remaining_need = need.get(w, 0) - used_w
        best = None
        if rest[i + 1][w] >= remaining_need:
            best = go(i + 1, mask, -2)  # -2: slot 0 must still open a chunk
        if remaining_need > 0:
            for j in ref_pos.get(w, ()):
                if mask >> j & 1:
                    continue
                cost = (0 if prev == j - 1 else 1) + go(i + 1, mask | 1 << j, j)
                if best is None or cost < best:
                    best = cost
        memo[key] = best
        return best

    return go(0, 0, -2)


def _min_chunks_firstfit(cand, ref, need):
    """Fallback for long sentences: first fit, preferring chunk extension."""
    remaining = dict(need)
    used = set()
    chunks = 0
    prev = -2
    for i, w in enumerate(cand):
        if remaining.get(w, 0) <= 0:
            prev = -2
            continue
        later = sum(1 for x in cand[i + 1 :] if x == w)
        slots = [j for j, x in enumerate(ref) if x == w and j not in used]
        if prev + 1 in slots:
            j = prev + 1
        elif later >= remaining[w]:
            prev = -2
            continue  # postpone: enough later occurrences
        else:
            j = slots[0]
        used.add(j)
        remaining[w] -= 1
        chunks += 0 if j == prev + 1 else 1
        prev = j
    return chunks


def _meteor_one(candidate, ref):
    c_counts = Counter(candidate)
    r_counts = Counter(ref)
    need = {w: min(k, r_counts[w]) for w, k in c_counts.items() if r_counts[w] > 0}
    m = sum(need.values())
    if m == 0:
        return 0.0
    if len(candidate) <= _EXACT_LIMIT and len(ref) <= _EXACT_LIMIT:
        chunks = _min_chunks_exact(candidate, ref, need)
    else:
        chunks = _min_chunks_firstfit(candidate, ref, need)
    precision = m / len(candidate)
    recall = m / len(ref)
    fmean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1.0 - penalty)


def meteor_lite(candidate, references):
    candidate = list(candidate)
    references = [list(r) for r in references]
    _check_sentences(candidate, references)
    return max(_meteor_one(candidate, ref) for ref in references)


def _cosine(a, b):
    common = set(a) & set(b)
    dot = sum(a[g] * b[g] for g in common)
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def cider_scores(candidates, references):
    """Per-key CIDEr ({key: tokens} vs {key: list of token lists})."""
    if set(candidates) != set(references):
        raise ValidationError("cider: candidate and reference keys differ")
    if not references:
        raise ValidationError("cider: empty corpus")
    n_docs = len(references)
    scores = {}
    idf = []
    for n in range(1, 5):
        df = Counter()
        for refs in references.values():
            grams = set()
            for ref in refs:
                grams.update(_ngrams(ref, n))
            df.update(grams)
        if n_docs > 1:
            idf.append({g: math.log(n_docs / max(1, k)) for g, k in df.items()})
        else:
            idf.append(None)  # uniform idf; cancels under cosine
    log_n = math.log(n_docs) if n_docs > 1 else 1.0
    for key in sorted(candidates):
        per_n = []
        for n in range(1, 5):
            table = idf[n - 1]

            def weight(g):
                if table is None:
                    return 1.0
                return table.get(g, log_n)  # unseen gram: df clamped to 1

            c_vec = {g: k * weight(g) for g, k in _ngrams(candidates[key], n).items()}
            sims = [_cosine(c_vec, {g: k * weight(g) for g, k in _ngrams(ref, n).items()})
                    for ref in references[key]]
            per_n.append(10.0 * sum(sims) / len(sims))
        scores[key] = sum(per_n) / 4.0
    return scores


def cider(candidates, references):
    scores = cider_scores(candidates, references)
    return sum(scores.values()) / len(scores)


@dataclasses.dataclass
class ScoreReport:
    overall: dict  # metric -> corpus score
    per_threshold: dict  # metric -> {threshold: score}
    counts: dict  # matched / unmatched / n_predictions / n_videos / empty_sentences

    def to_json(self):
        return {
            "overall": self.overall,
            "per_threshold": {m: {str(t): v for t, v in d.items()}
                              for m, d in self.per_threshold.items()},
            "counts": self.counts,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    def format_table(self):
        """Aligned table; scores reported in points (x100)."""
        metrics = sorted(self.overall)
        thresholds = sorted(next(iter(self.per_threshold.values()))) if self.per_threshold else []
        header = ["metric"] + [f"tIoU {t:g}" for t in thresholds] + ["overall"]
        rows = [header]
        for m in metrics:
            row = [m] + [f"{self.per_threshold[m][t] * 100:.2f}" for t in thresholds]
            row.append(f"{self.overall[m] * 100:.2f}")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
                         for r in rows)


def _one_annotation_eval(predictions, annotations, thresholds, metrics):
    per_threshold = {m: {} for m in metrics}
    matched = unmatched = n_pred = empty = 0
    for vid in predictions:
        if vid not in annotations:
            raise ValidationError(f"predictions contain unknown video {vid!r}")
    flat = []  # (vid, idx, tokens, span)
    for vid, preds in sorted(predictions.items()):
        for i, (span, tokens) in enumerate(preds):
            flat.append((vid, i, list(tokens), (float(span[0]), float(span[1]))))
    n_pred = len(flat)
    for t in thresholds:
        match_sets = []
        for vid, i, tokens, span in flat:
            refs = [ev.sentence for ev in annotations[vid].events
                    if tiou(span, (ev.start, ev.end)) >= t]
            match_sets.append(refs)
        if t == thresholds[0]:
            matched = sum(1 for r in match_sets if r)
            unmatched = sum(1 for r in match_sets if not r)
            empty = sum(1 for (_, _, tokens, _) in flat if not tokens)
        for m in metrics:
            if not flat:
                per_threshold[m][t] = 0.0
                continue
            if m == "cider":
                keyed_c, keyed_r = {}, {}
                for (vid, i, tokens, _span), refs in zip(flat, match_sets):
                    if refs and tokens:
                        keyed_c[(vid, i)] = tokens
                        keyed_r[(vid, i)] = refs
                sc = cider_scores(keyed_c, keyed_r) if keyed_c else {}
                per_threshold[m][t] = sum(sc.values()) / n_pred if n_pred else 0.0
            else:
                fn = bleu4 if m == "bleu4" else meteor_lite
                total = 0.0
                for (_vid, _i, tokens, _span), refs in zip(flat, match_sets):
                    if refs and tokens:
                        total += fn(tokens, refs)
                per_threshold[m][t] = total / n_pred if n_pred else 0.0
    overall = {m: (sum(per_threshold[m].values()) / len(thresholds)) for m in metrics}
    counts = {"matched": matched, "unmatched": unmatched, "n_predictions": n_pred,
              "n_videos": len(predictions), "empty_sentences": empty}
    return ScoreReport(overall=overall, per_threshold=per_threshold, counts=counts)


def dense_caption_eval(predictions, references, thresholds=DENSE_THRESHOLDS,
                       metric="meteor"):
    """Evaluate {video: [(span, tokens), ...]} against reference annotations.

    ``references`` is {video: VideoAnnotation} or a list of such sets; with
    several sets the reports are averaged (counts summed). ``metric`` is one
    of bleu4/meteor/cider or "all".
    """
    if not thresholds or any(not 0 < t <= 1 for t in thresholds):
        raise ValidationError("thresholds must be non-empty, each in (0, 1]")
    thresholds = tuple(sorted(thresholds))
    metrics = list(METRIC_NAMES) if metric == "all" else [metric]
    for m in metrics:
        if m not in METRIC_NAMES:
            raise ValidationError(f"unknown metric {m!r}")
    annotation_sets = references if isinstance(references, list) else [references]
    reports = [_one_annotation_eval(predictions, anns, thresholds, metrics)
               for anns in annotation_sets]
    if len(reports) == 1:
        return reports[0]
    k = len(reports)
    overall = {m: sum(r.overall[m] for r in reports) / k for m in metrics}
    per_threshold = {m: {t: sum(r.per_threshold[m][t] for r in reports) / k
                         for t in thresholds} for m in metrics}
    counts = {key: sum(r.counts[key] for r in reports) for key in reports[0].counts}
    return ScoreReport(overall=overall, per_threshold=per_threshold, counts=counts)
