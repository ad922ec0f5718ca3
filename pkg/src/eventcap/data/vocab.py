"""Token vocabulary with min-count filtering and fixed special tokens."""

from __future__ import annotations

import hashlib
import json
import string
from collections import Counter

from eventcap import ValidationError

__all__ = ["tokenize", "Vocabulary", "PAD", "BOS", "EOS", "UNK"]

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text):
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


class Vocabulary:
    """token <-> id mapping; ids 0..3 are <pad>, <bos>, <eos>, <unk>."""

    def __init__(self, tokens=(), min_count=5, max_len=30):
        self.min_count = min_count
        self.max_len = max_len
        self.id_to_token = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    @classmethod
    def build(cls, sentences, min_count=5, max_len=30):
        """Build from an iterable of token lists.

        Non-special tokens are exactly those occurring >= min_count times,
        ordered by descending frequency, ties broken lexicographically.
        """
        counts = Counter()
        for sent in sentences:
            counts.update(sent)
        kept = sorted(
            (t for t, c in counts.items() if c >= min_count and t not in SPECIALS),
            key=lambda t: (-counts[t], t),
        )
        return cls(kept, min_count=min_count, max_len=max_len)

    @classmethod
    def from_corpus(cls, records, min_count=5, max_len=30):
        return cls.build(
            (ev.sentence for rec in records for ev in rec.events),
            min_count=min_count,
            max_len=max_len,
        )

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode(self, tokens):
        """[BOS] + ids of the first max_len tokens (unknowns -> UNK) + [EOS]."""
        payload = [self.token_to_id.get(t, UNK) for t in tokens[: self.max_len]]
        return [BOS] + payload + [EOS]

    def decode(self, ids):
        """Tokens until the first EOS; BOS/PAD skipped; bad ids rejected."""
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.id_to_token):
                raise ValidationError(f"token id {i} outside vocabulary of size {len(self)}")
            if i == EOS:
                break
            if i in (BOS, PAD):
                continue
            out.append(self.id_to_token[i])
        return out

    def content_hash(self):
        blob = "\n".join(self.id_to_token) + f"\n{self.min_count}\n{self.max_len}"
        return hashlib.blake2b(blob.encode(), digest_size=8).hexdigest()

    def save(self, path):
        payload = {
            "tokens": self.id_to_token[len(SPECIALS) :],
            "min_count": self.min_count,
            "max_len": self.max_len,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot load vocabulary {path}: {exc}") from exc
        return cls(payload["tokens"], min_count=payload["min_count"], max_len=payload["max_len"])
