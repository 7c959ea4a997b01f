"""Cased WordPiece tokenization with word-level alignment.

Words are split by greedy longest-match against a fixed vocabulary;
continuation pieces carry a ``##`` prefix. A word that cannot be covered
becomes a single unknown piece. Alongside the piece ids the tokenizer
reports which contiguous id range each input word occupies, so encoder
states can be pooled back to word positions.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

__all__ = ["PAD", "UNK", "CLS", "SEP", "SPECIALS", "WordPiece", "build_vocab"]

PAD = "[PAD]"
UNK = "[UNK]"
CLS = "[CLS]"
SEP = "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)


class WordPiece:
    """Greedy longest-match subword tokenizer over an ordered vocabulary."""

    def __init__(self, vocab: Sequence[str]):
        if len(set(vocab)) != len(vocab):
            raise ValueError("vocabulary contains duplicate pieces")
        self.pieces = tuple(vocab)
        self._ids = {p: i for i, p in enumerate(self.pieces)}
        missing = [s for s in SPECIALS if s not in self._ids]
        if missing:
            raise ValueError(f"vocabulary is missing special pieces {missing}")
        self.pad_id = self._ids[PAD]
        self.unk_id = self._ids[UNK]
        self.cls_id = self._ids[CLS]
        self.sep_id = self._ids[SEP]

    def __len__(self) -> int:
        return len(self.pieces)

    @classmethod
    def from_file(cls, path: str | Path) -> "WordPiece":
        text = Path(path).read_bytes().decode("utf-8")
        return cls([line for line in text.splitlines() if line])

    def encode_word(self, word: str) -> list[int]:
        """Piece ids for one word; [UNK] if no cover exists."""
        if not word:
            raise ValueError("cannot encode an empty word")
        out: list[int] = []
        start = 0
        while start < len(word):
            piece_id = None
            for end in range(len(word), start, -1):
                cand = word[start:end] if start == 0 else "##" + word[start:end]
                found = self._ids.get(cand)
                if found is not None:
                    piece_id = found
                    start = end
                    break
            if piece_id is None:
                return [self.unk_id]
            out.append(piece_id)
        return out

    def encode_words(
        self, words: Iterable[str]
    ) -> tuple[list[int], list[tuple[int, int]]]:
        """Ids for a word sequence plus each word's [start, end) id span."""
        ids: list[int] = []
        spans: list[tuple[int, int]] = []
        for word in words:
            piece_ids = self.encode_word(word)
            spans.append((len(ids), len(ids) + len(piece_ids)))
            ids.extend(piece_ids)
        return ids, spans


def build_vocab(words: Iterable[str]) -> list[str]:
    """Deterministic vocabulary covering the given words.

    Specials first, then every single character seen (as word-initial and
    as ## continuation pieces), then the whole words. Character pieces
    guarantee any word over the seen alphabet tokenizes without [UNK];
    whole-word entries keep common words to one piece.
    """
    words = sorted(set(words))
    chars = sorted({c for w in words for c in w})
    vocab = list(SPECIALS)
    vocab.extend(chars)
    vocab.extend("##" + c for c in chars)
    seen = set(vocab)
    vocab.extend(w for w in words if len(w) > 1 and w not in seen)
    return vocab
