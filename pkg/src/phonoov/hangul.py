"""Hangul syllable <-> jamo arithmetic.

Precomposed syllables live in U+AC00..U+D7A3 and are laid out as
``0xAC00 + (lead * 21 + vowel) * 28 + tail``.  Jamo are surfaced as
compatibility-jamo code points (U+3131 block), which is how they are
usually displayed.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from enum import Enum
from typing import Optional

SYLLABLE_BASE = 0xAC00
SYLLABLE_LAST = 0xD7A3
NUM_LEADS = 19
NUM_VOWELS = 21
NUM_TAILS = 28  # index 0 is "no tail"
SYLLABLES_PER_LEAD = NUM_VOWELS * NUM_TAILS  # 588

LEADS = "ㄱㄲㄴㄷㄸㄹㅁㅂㅃㅅㅆㅇㅈㅉㅊㅋㅌㅍㅎ"
VOWELS = "ㅏㅐㅑㅒㅓㅔㅕㅖㅗㅘㅙㅚㅛㅜㅝㅞㅟㅠㅡㅢㅣ"
TAILS = ["", *"ㄱㄲㄳㄴㄵㄶㄷㄹㄺㄻㄼㄽㄾㄿㅀㅁㅂㅄㅅㅆㅇㅈㅊㅋㅌㅍㅎ"]


class HangulError(ValueError):
    pass


class NotHangulSyllable(HangulError):
    pass


class InvalidJamo(HangulError):
    pass


class JamoKind(Enum):
    CHOSEONG = "choseong"
    JUNGSEONG = "jungseong"
    JONGSEONG = "jongseong"


_TABLES = {
    JamoKind.CHOSEONG: list(LEADS),
    JamoKind.JUNGSEONG: list(VOWELS),
    JamoKind.JONGSEONG: TAILS,
}


@dataclass(frozen=True)
class Jamo:
    kind: JamoKind
    index: int

    def __post_init__(self):
        table = _TABLES[self.kind]
        lo = 1 if self.kind is JamoKind.JONGSEONG else 0
        if not lo <= self.index < len(table):
            raise InvalidJamo(f"{self.kind.value} index {self.index} out of range")

    @property
    def symbol(self) -> str:
        return _TABLES[self.kind][self.index]

    @classmethod
    def lead(cls, symbol: str) -> "Jamo":
        return cls._from_symbol(JamoKind.CHOSEONG, symbol)

    @classmethod
    def vowel(cls, symbol: str) -> "Jamo":
        return cls._from_symbol(JamoKind.JUNGSEONG, symbol)

    @classmethod
    def tail(cls, symbol: str) -> "Jamo":
        return cls._from_symbol(JamoKind.JONGSEONG, symbol)

    @classmethod
    def _from_symbol(cls, kind: JamoKind, symbol: str) -> "Jamo":
        table = _TABLES[kind]
        if not symbol or symbol not in table:
            raise InvalidJamo(f"{symbol!r} is not a {kind.value}")
        return cls(kind, table.index(symbol))

    def __str__(self) -> str:
        return self.symbol


@dataclass(frozen=True)
class JamoSequence:
    """Jamo of ``source`` in reading order.

    Non-Hangul characters appear as plain one-character strings.
    """

    jamos: tuple
    source: str

    @property
    def symbols(self) -> list[str]:
        return [str(j) for j in self.jamos]

    def __len__(self) -> int:
        return len(self.jamos)

    def __iter__(self):
        return iter(self.jamos)


def is_syllable(ch: str) -> bool:
    return len(ch) == 1 and SYLLABLE_BASE <= ord(ch) <= SYLLABLE_LAST


def decompose_syllable(ch: str | int) -> tuple[Jamo, Jamo, Optional[Jamo]]:
    code = ch if isinstance(ch, int) else (ord(ch) if len(ch) == 1 else -1)
    if not SYLLABLE_BASE <= code <= SYLLABLE_LAST:
        raise NotHangulSyllable(f"{ch!r} is not a precomposed Hangul syllable")
    offset = code - SYLLABLE_BASE
    lead, rest = divmod(offset, SYLLABLES_PER_LEAD)
    vowel, tail = divmod(rest, NUM_TAILS)
    return (
        Jamo(JamoKind.CHOSEONG, lead),
        Jamo(JamoKind.JUNGSEONG, vowel),
        Jamo(JamoKind.JONGSEONG, tail) if tail else None,
    )


def compose_syllable(lead: Jamo, vowel: Jamo, tail: Optional[Jamo] = None) -> str:
    if lead.kind is not JamoKind.CHOSEONG:
        raise InvalidJamo(f"expected choseong, got {lead.kind.value}")
    if vowel.kind is not JamoKind.JUNGSEONG:
        raise InvalidJamo(f"expected jungseong, got {vowel.kind.value}")
    if tail is not None and tail.kind is not JamoKind.JONGSEONG:
        raise InvalidJamo(f"expected jongseong, got {tail.kind.value}")
    t = tail.index if tail is not None else 0
    return chr(SYLLABLE_BASE + (lead.index * NUM_VOWELS + vowel.index) * NUM_TAILS + t)


def compose_indices(lead: int, vowel: int, tail: int = 0) -> str:
    if not (0 <= lead < NUM_LEADS and 0 <= vowel < NUM_VOWELS and 0 <= tail < NUM_TAILS):
        raise InvalidJamo(f"index triple {(lead, vowel, tail)} out of range")
    return chr(SYLLABLE_BASE + (lead * NUM_VOWELS + vowel) * NUM_TAILS + tail)


def split_syllable(ch: str) -> tuple[str, str, str]:
    """Like :func:`decompose_syllable` but returns symbols; empty tail is ``""``."""
    lead, vowel, tail = decompose_syllable(ch)
    return lead.symbol, vowel.symbol, tail.symbol if tail else ""


def join_syllable(lead: str, vowel: str, tail: str = "") -> str:
    return compose_syllable(
        Jamo.lead(lead), Jamo.vowel(vowel), Jamo.tail(tail) if tail else None
    )


def word_to_jamo(word: str) -> JamoSequence:
    word = unicodedata.normalize("NFC", word)
    out = []
    for ch in word:
        if is_syllable(ch):
            out.extend(j for j in decompose_syllable(ch) if j is not None)
        else:
            out.append(ch)
    return JamoSequence(tuple(out), word)


def jamo_to_word(seq: JamoSequence) -> str:
    """Recompose a sequence produced by :func:`word_to_jamo`."""
    out = []
    items = list(seq.jamos)
    i = 0
    while i < len(items):
        item = items[i]
        if isinstance(item, Jamo) and item.kind is JamoKind.CHOSEONG:
            lead, vowel = item, items[i + 1]
            tail = None
            if i + 2 < len(items):
                nxt = items[i + 2]
                if isinstance(nxt, Jamo) and nxt.kind is JamoKind.JONGSEONG:
                    tail = nxt
            out.append(compose_syllable(lead, vowel, tail))
            i += 3 if tail is not None else 2
        else:
            out.append(str(item))
            i += 1
    return "".join(out)
