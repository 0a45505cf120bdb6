"""Word-level tokenizer with a fixed vocabulary.

Normalization (lowercase, punctuation stripped, whitespace split) is the
single rule shared by encoding and WER scoring.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ["<pad>", "<bos>", "<eos>", "<unk>"]
N_SPECIAL = len(SPECIALS)

_PUNCT = re.compile(r"[^\w\s]|_")


def normalize(text: str) -> list[str]:
    return _PUNCT.sub("", text.lower()).split()


class Vocab:
    def __init__(self, words):
        self.words = list(words)
        seen = set()
        for w in self.words:
            if w in seen or w in SPECIALS:
                raise ValueError(f"duplicate or reserved word in vocab: {w!r}")
            seen.add(w)
        self._id = {w: i + N_SPECIAL for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words) + N_SPECIAL

    def __contains__(self, word):
        return word in self._id

    def id_of(self, word: str) -> int:
        return self._id.get(word, UNK)

    def word_of(self, idx: int) -> str:
        if idx < N_SPECIAL:
            return SPECIALS[idx]
        return self.words[idx - N_SPECIAL]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for w in self.words:
                f.write(w + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.strip()])


@dataclass
class TokenSeq:
    ids: list[int]
    words: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.ids)


def build_vocab(corpus_lines, max_size: int) -> Vocab:
    """Most frequent max_size - 4 words; frequency ties break lexicographically."""
    counts = {}
    empty = True
    for line in corpus_lines:
        empty = False
        for w in normalize(line):
            counts[w] = counts.get(w, 0) + 1
    if empty:
        raise ValueError("build_vocab: empty corpus")
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    return Vocab(ranked[: max(0, max_size - N_SPECIAL)])


def encode(text: str, vocab: Vocab, add_frame: bool = False) -> TokenSeq:
    words = normalize(text)
    ids = [vocab.id_of(w) for w in words]
    if add_frame:
        ids = [BOS] + ids + [EOS]
    return TokenSeq(ids=ids, words=words)


def decode(seq: TokenSeq, vocab: Vocab) -> str:
    return " ".join(vocab.word_of(i) for i in seq.ids if i >= N_SPECIAL)
