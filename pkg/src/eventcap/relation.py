"""Pairwise event relations: temporal geometry plus semantic similarity.

For each ordered pair of events the temporal branch scores a sinusoidal
encoding of (log length ratio, center offset / reference length) through a
two-layer map, and the semantic branch takes scaled dot products of
projected mean-pooled features. The two N x N score matrices are added,
softmax-normalized per row, and used to aggregate value-projected features
of all events into a relational feature, concatenated onto the pooled one.

Both position scalars are ratios, so the temporal branch is exactly
invariant to shifting or rescaling the time axis.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from eventcap import ValidationError
from eventcap.autodiff import Tensor, concat, softmax, tensor
from eventcap.layers import affine_step, init_affine

__all__ = [
    "RelationScores",
    "sinusoid_encode",
    "mean_pool",
    "pair_position_code",
    "init_relation",
    "temporal_scores",
    "semantic_scores",
    "encode_events",
]


@dataclasses.dataclass
class RelationScores:
    temporal: np.ndarray
    semantic: np.ndarray
    fused: np.ndarray
    attention: np.ndarray

    def to_json(self):
        return {k: getattr(self, k).tolist()
                for k in ("temporal", "semantic", "fused", "attention")}


def sinusoid_encode(x, d_pos):
    """Interleaved sin/cos expansion of a real scalar, d_pos/2 frequency
    pairs with wavelengths geometric from 1 to 1e4."""
    if d_pos < 2 or d_pos % 2:
        raise ValidationError("d_pos must be an even integer >= 2")
    half = d_pos // 2
    if half == 1:
        wavelengths = np.array([1.0])
    else:
        wavelengths = np.power(10.0, 4.0 * np.arange(half) / (half - 1))
    angles = x / wavelengths
    out = np.empty(d_pos)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def mean_pool(record, proposal):
    """Mean of the feature rows the proposal's span overlaps."""
    return record.mean_feature(proposal.start, proposal.end)


def pair_position_code(p_i, p_j, d_pos):
    len_i = p_i.end - p_i.start
    len_j = p_j.end - p_j.start
    rel_len = math.log(len_j / len_i)
    rel_dist = (0.5 * (p_j.start + p_j.end) - 0.5 * (p_i.start + p_i.end)) / len_i
    return np.concatenate([sinusoid_encode(rel_len, d_pos),
                           sinusoid_encode(rel_dist, d_pos)])


def init_relation(params, rng, d_feature, d_pos, d_hidden, d_k, d_v):
    init_affine(params, "rel.pos0", rng, 2 * d_pos, d_hidden)
    init_affine(params, "rel.pos1", rng, d_hidden, 1)
    init_affine(params, "rel.q", rng, d_feature, d_k, bias=False)
    init_affine(params, "rel.k", rng, d_feature, d_k, bias=False)
    init_affine(params, "rel.v", rng, d_feature, d_v, bias=False)
    return params


def temporal_scores(proposals, params, d_pos):
    """N x N matrix: two-layer map of each ordered pair's position code."""
    n = len(proposals)
    codes = np.stack([pair_position_code(p_i, p_j, d_pos)
                      for p_i in proposals for p_j in proposals])
    h = affine_step(params, "rel.pos0", tensor(codes)).relu()
    return affine_step(params, "rel.pos1", h).reshape((n, n))


def semantic_scores(pooled, params):
    """Scaled dot products of query/key projections of pooled features."""
    pooled = pooled if isinstance(pooled, Tensor) else tensor(np.asarray(pooled, dtype=np.float64))
    q = affine_step(params, "rel.q", pooled)
    k = affine_step(params, "rel.k", pooled)
    d_k = q.shape[1]
    return (q @ k.T) / math.sqrt(d_k)


def encode_events(record, proposals, params, d_pos):
    """Relational features for a set of events.

    Returns (RelationScores, z, pooled) where z = pooled concat relational,
    one row per event, both on the autodiff tape.
    """
    if not proposals:
        raise ValidationError("encode_events needs at least one proposal")
    pooled_np = np.stack([mean_pool(record, p) for p in proposals])
    pooled = tensor(pooled_np)
    t_scores = temporal_scores(proposals, params, d_pos)
    s_scores = semantic_scores(pooled, params)
    fused = t_scores + s_scores
    attention = softmax(fused, axis=1)
    values = affine_step(params, "rel.v", pooled)
    relational = attention @ values
    z = concat([pooled, relational], axis=1)
    scores = RelationScores(
        temporal=t_scores.data.copy(),
        semantic=s_scores.data.copy(),
        fused=fused.data.copy(),
        attention=attention.data.copy(),
    )
    return scores, z, pooled
