"""Lowercased word/punctuation tokenizer and corpus-built vocabulary."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import DataError

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
RESERVED = (PAD, UNK, CLS, SEP)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def split_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]
    attention_mask: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.attention_mask):
            raise DataError("ids and attention_mask differ in length")

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_ids(cls, ids: Iterable[int]) -> TokenSeq:
        ids = tuple(int(i) for i in ids)
        return cls(ids, tuple(0 if i == PAD_ID else 1 for i in ids))

    def padded(self, length: int) -> TokenSeq:
        extra = length - len(self.ids)
        if extra < 0:
            raise DataError(f"cannot pad a length-{len(self.ids)} sequence to {length}")
        return TokenSeq(self.ids + (PAD_ID,) * extra, self.attention_mask + (0,) * extra)


class Vocab:
    """Token <-> id map. Ids 0..3 are always [PAD], [UNK], [CLS], [SEP]."""

    def __init__(self, tokens: Iterable[str], min_freq: int = 1):
        self.itos: list[str] = list(RESERVED)
        for tok in tokens:
            if tok in RESERVED:
                continue
            self.itos.append(tok)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("vocabulary contains duplicate tokens")
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def to_json(self) -> str:
        return json.dumps({"min_freq": self.min_freq, "tokens": self.itos[len(RESERVED) :]}, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> Vocab:
        raw = json.loads(text)
        return cls(raw["tokens"], raw.get("min_freq", 1))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocab:
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot load vocabulary from {path}: {exc}") from exc


def build_vocab(corpus: Iterable[str], min_freq: int = 1) -> Vocab:
    """Keep tokens seen at least ``min_freq`` times, most frequent first, ties lexicographic."""
    counts: Counter[str] = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        counts.update(split_tokens(doc))
    if n_docs == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab(kept, min_freq)


def tokenize(text: str, vocab: Vocab, max_len: int) -> TokenSeq:
    ids = [vocab.id(t) for t in split_tokens(text)][:max_len]
    return TokenSeq(tuple(ids), (1,) * len(ids))
