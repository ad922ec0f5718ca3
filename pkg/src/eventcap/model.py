"""Model assembly: configuration, parameter initialization, checkpoints.

A checkpoint is a directory: one binary matrix file per parameter tensor
(the same container format as the corpus features, 64-bit variant) plus a
JSON manifest carrying the config, a 64-bit config hash, the vocabulary and
its hash, and the training step counter.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os

import numpy as np

from eventcap import ValidationError
from eventcap.data.features import read_matrix, write_matrix
from eventcap.data.vocab import Vocabulary
from eventcap.decoder import init_decoder
from eventcap.layers import parameter
from eventcap.proposals import ProposalConfig, init_scorer
from eventcap.relation import init_relation
from eventcap.selector import init_selector

__all__ = ["ModelConfig", "Model", "config_hash"]

CHECKPOINT_VERSION = 1


@dataclasses.dataclass
class ModelConfig:
    d_feature: int
    vocab_size: int
    hidden_sentence: int = 512
    hidden_word: int = 512
    hidden_selector: int = 512
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
    scales: tuple = (0.08, 0.12, 0.18, 0.26, 0.38, 0.55, 0.80)
    window_stride: float = 0.5
    scorer_hidden: int = 32

    @property
    def d_z(self):
        return self.d_feature + (self.d_v if self.use_relation else 0)

    def proposal_config(self):
        return ProposalConfig(scales=tuple(self.scales), window_stride=self.window_stride,
                              nms_tiou=self.nms_tiou, top_k=self.top_k,
                              scorer_hidden=self.scorer_hidden)

    def validate(self):
        for name in ("d_feature", "vocab_size", "hidden_sentence", "hidden_word",
                     "hidden_selector", "d_emb", "d_enc", "d_ptr", "d_rel_hidden",
                     "d_k", "d_v", "d_l", "d_pos_hidden", "d_gate", "d_att",
                     "max_len", "max_events"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.d_pos < 2 or self.d_pos % 2:
            raise ValidationError("d_pos must be an even integer >= 2")
        self.proposal_config().validate()
        return self


def config_hash(cfg):
    """64-bit hash of the canonical JSON form of a config dataclass."""
    payload = json.dumps(dataclasses.asdict(cfg), sort_keys=True, default=list)
    return hashlib.blake2b(payload.encode(), digest_size=8).hexdigest()


class Model:
    """Parameter store plus config and vocabulary for the full pipeline."""

    def __init__(self, cfg, vocab, params=None, step=0):
        cfg.validate()
        if cfg.vocab_size != len(vocab):
            raise ValidationError(
                f"config vocab_size {cfg.vocab_size} != vocabulary size {len(vocab)}")
        self.cfg = cfg
        self.vocab = vocab
        self.params = params if params is not None else {}
        self.step = step

    @classmethod
    def init(cls, cfg, vocab, seed=0):
        model = cls(cfg, vocab)
        rng = np.random.default_rng(seed)
        init_scorer(model.params, rng, cfg.d_feature, cfg.proposal_config())
        init_selector(model.params, rng, cfg.d_feature, cfg.d_enc,
                      cfg.hidden_selector, cfg.d_ptr)
        init_relation(model.params, rng, cfg.d_feature, cfg.d_pos,
                      cfg.d_rel_hidden, cfg.d_k, cfg.d_v)
        init_decoder(model.params, rng, cfg, cfg.d_z)
        return model

    def save(self, out_dir, extra=None):
        os.makedirs(out_dir, exist_ok=True)
        tensors = {}
        for name in sorted(self.params):
            fname = name.replace("/", "_") + ".dvct"
            write_matrix(os.path.join(out_dir, fname), self.params[name].data,
                         dtype="float64")
            tensors[name] = {"file": fname, "shape": list(self.params[name].shape)}
        manifest = {
            "version": CHECKPOINT_VERSION,
            "config": dataclasses.asdict(self.cfg),
            "config_hash": config_hash(self.cfg),
            "vocab_hash": self.vocab.content_hash(),
            "step": self.step,
            "tensors": tensors,
        }
        if extra:
            manifest.update(extra)
        self.vocab.save(os.path.join(out_dir, "vocab.json"))
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1)
        return manifest

    @classmethod
    def load(cls, ckpt_dir):
        manifest_path = os.path.join(ckpt_dir, "manifest.json")
        if not os.path.exists(manifest_path):
            raise ValidationError(f"no checkpoint manifest under {ckpt_dir}")
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {manifest.get('version')}")
        raw = dict(manifest["config"])
        raw["scales"] = tuple(raw["scales"])
        cfg = ModelConfig(**raw)
        if config_hash(cfg) != manifest["config_hash"]:
            raise ValidationError("checkpoint config hash mismatch")
        vocab = Vocabulary.load(os.path.join(ckpt_dir, "vocab.json"))
        if vocab.content_hash() != manifest["vocab_hash"]:
            raise ValidationError("checkpoint vocabulary hash mismatch")
        params = {}
        for name, info in manifest["tensors"].items():
            data = read_matrix(os.path.join(ckpt_dir, info["file"]))
            if list(data.shape) != info["shape"]:
                raise ValidationError(f"tensor {name} has shape {list(data.shape)}, "
                                      f"manifest says {info['shape']}")
            params[name] = parameter(data)
        model = cls(cfg, vocab, params=params, step=int(manifest.get("step", 0)))
        model.manifest = manifest
        return model

    def check_vocab(self, vocab):
        if vocab.content_hash() != self.vocab.content_hash():
            raise ValidationError("vocabulary mismatch between checkpoint and corpus")
