"""Model inputs built from a word: jamo, morpheme pieces, and their concatenation.

Morpheme segmentation is greedy longest-match over syllables with ``##``
marking continuation pieces, e.g. ``맛있다 -> [맛있, ##다]``.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from phonoov.g2p import Transducer, to_ipa
from phonoov.hangul import word_to_jamo

PAD = "<pad>"
UNK = "<unk>"
CONTINUATION = "##"


@dataclass(frozen=True)
class MorphemeVocab:
    """Known morpheme pieces.

    Any single-character piece (with or without ``##``) is accepted even if
    it was never listed, which makes segmentation total.
    """

    tokens: frozenset
    max_token_len: int = 8

    def __contains__(self, piece: str) -> bool:
        bare = piece[len(CONTINUATION):] if piece.startswith(CONTINUATION) else piece
        return len(bare) == 1 or piece in self.tokens

    @classmethod
    def from_tokens(cls, tokens: Iterable[str], max_token_len: int | None = None) -> "MorphemeVocab":
        tokens = frozenset(t for t in tokens if t)
        if max_token_len is None:
            max_token_len = max((len(t.removeprefix(CONTINUATION)) for t in tokens), default=1)
        return cls(tokens, max(1, max_token_len))

    @classmethod
    def load(cls, path: str | Path) -> "MorphemeVocab":
        lines = Path(path).read_text("utf-8").splitlines()
        return cls.from_tokens(line.strip() for line in lines)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in sorted(self.tokens)), "utf-8")


def build_morpheme_vocab(words: Iterable[str], min_count: int = 2, max_token_len: int = 4) -> MorphemeVocab:
    """Collect multi-syllable pieces seen at least ``min_count`` times.

    Word-initial substrings become plain pieces, the rest ``##`` pieces.
    """
    counts = Counter()
    for word in words:
        word = unicodedata.normalize("NFC", word)
        for i in range(len(word)):
            for j in range(i + 2, min(len(word), i + max_token_len) + 1):
                counts[(CONTINUATION if i else "") + word[i:j]] += 1
    return MorphemeVocab.from_tokens(
        (t for t, c in counts.items() if c >= min_count), max_token_len
    )


def segment(word: str, vocab: MorphemeVocab) -> list[str]:
    word = unicodedata.normalize("NFC", word)
    pieces = []
    start = 0
    while start < len(word):
        end = min(len(word), start + vocab.max_token_len)
        while end > start + 1:
            piece = (CONTINUATION if start else "") + word[start:end]
            if piece in vocab:
                break
            end -= 1
        pieces.append((CONTINUATION if start else "") + word[start:end])
        start = end
    return pieces


@dataclass(frozen=True)
class MixedTokenSequence:
    tokens: tuple
    source: str
    num_jamo: int

    def __len__(self) -> int:
        return len(self.tokens)


def build_mixed_input(word: str, vocab: MorphemeVocab) -> MixedTokenSequence:
    jamo = word_to_jamo(word).symbols
    return MixedTokenSequence(tuple(jamo + segment(word, vocab)), word, len(jamo))


class SymbolTable:
    """Symbol <-> id map shared by jamo, morpheme pieces and IPA symbols."""

    def __init__(self, symbols: Sequence[str]):
        if list(symbols[:2]) != [PAD, UNK]:
            raise ValueError("symbol table must start with <pad>, <unk>")
        self.symbols = list(symbols)
        self.ids = {s: i for i, s in enumerate(self.symbols)}
        if len(self.ids) != len(self.symbols):
            raise ValueError("duplicate symbols")

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.ids

    def __eq__(self, other) -> bool:
        return isinstance(other, SymbolTable) and self.symbols == other.symbols

    def encode(self, symbols: Iterable[str]) -> list[int]:
        return [self.ids.get(s, 1) for s in symbols]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            "".join(f"{s}\t{i}\n" for i, s in enumerate(self.symbols)), "utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "SymbolTable":
        pairs = []
        for line in Path(path).read_text("utf-8").splitlines():
            if line:
                sym, idx = line.rsplit("\t", 1)
                pairs.append((int(idx), sym))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError(f"{path}: ids are not contiguous")
        return cls([s for _, s in pairs])


def build_symbol_table(
    corpus: Iterable[str],
    vocab: MorphemeVocab | None = None,
    transducer: Transducer | None = None,
) -> SymbolTable:
    """Ids 0/1 are padding/unknown; the rest by descending count, ties lexicographic."""
    vocab = vocab or MorphemeVocab.from_tokens([])
    counts = Counter()
    for word in corpus:
        counts.update(build_mixed_input(word, vocab).tokens)
        counts.update(to_ipa(word, transducer).phonemes)
    ordered = sorted(counts, key=lambda s: (-counts[s], s))
    return SymbolTable([PAD, UNK, *ordered])
