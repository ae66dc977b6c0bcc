"""Rule-based Korean grapheme-to-phoneme conversion.

Words are converted syllable by syllable.  Phonological processes are
expressed as rewrites of the (coda, next onset) pair at each syllable
boundary, grouped into stages that run in a fixed order:

    1 coda neutralization   2 liaison   3 nasal assimilation
    4 tensification         5 aspiration   6 palatalization

The rule table lives in ``data/g2p_rules.txt``.  Within a stage every
boundary is rewritten independently (a boundary only touches its own coda
and onset), and the loader rejects tables where two rules of one stage
can fire on the same context, so rule order inside a stage is irrelevant.
"""

from __future__ import annotations

import functools
import itertools
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from phonoov.hangul import LEADS, TAILS, VOWELS, is_syllable, split_syllable

WORD_END = "#"
SILENT_ONSET = "ㅇ"

ONSET_IPA = {
    "ㄱ": "k", "ㄲ": "k'", "ㅋ": "kʰ",
    "ㄷ": "t", "ㄸ": "t'", "ㅌ": "tʰ",
    "ㅂ": "p", "ㅃ": "p'", "ㅍ": "pʰ",
    "ㅅ": "s", "ㅆ": "s'",
    "ㅈ": "tɕ", "ㅉ": "tɕ'", "ㅊ": "tɕʰ",
    "ㄴ": "n", "ㅁ": "m", "ㄹ": "ɾ", "ㅎ": "h",
}
CODA_IPA = {"ㄱ": "k", "ㄴ": "n", "ㄷ": "t", "ㄹ": "l", "ㅁ": "m", "ㅂ": "p", "ㅇ": "ŋ"}
VOWEL_IPA = {
    "ㅏ": "ʌ", "ㅐ": "ɛ", "ㅑ": "jʌ", "ㅒ": "jɛ", "ㅓ": "ɔ", "ㅔ": "e", "ㅕ": "jɔ",
    "ㅖ": "je", "ㅗ": "o", "ㅘ": "wʌ", "ㅙ": "wɛ", "ㅚ": "we", "ㅛ": "jo", "ㅜ": "u",
    "ㅝ": "wɔ", "ㅞ": "we", "ㅟ": "wi", "ㅠ": "ju", "ㅡ": "ɯ", "ㅢ": "ɰi", "ㅣ": "i",
}

_CODAS = tuple(TAILS)  # includes "" for an open syllable
_ONSETS = tuple(LEADS) + (WORD_END,)


class RuleTableError(ValueError):
    pass


@dataclass(frozen=True)
class Slot:
    """Set-membership test over jamo; ``negated`` flips the set."""

    members: frozenset
    negated: bool = False

    def __call__(self, value: Optional[str]) -> bool:
        return (value in self.members) != self.negated

    @classmethod
    def parse(cls, text: str, universe: Sequence[str]) -> "Slot":
        if text == "*":
            return cls(frozenset(), negated=True)
        if text.startswith("[^") and text.endswith("]"):
            return cls(cls._members(text[2:-1], universe), negated=True)
        if text.startswith("[") and text.endswith("]"):
            return cls(cls._members(text[1:-1], universe))
        return cls(cls._members(text, universe))

    @staticmethod
    def _members(chars: str, universe: Sequence[str]) -> frozenset:
        out = set()
        for ch in chars:
            value = "" if ch == "_" else ch
            if value not in universe:
                raise RuleTableError(f"{ch!r} is not valid here")
            out.add(value)
        return frozenset(out)


@dataclass(frozen=True)
class PhonRule:
    stage: int
    name: str
    coda: Slot
    onset: Slot
    vowel: Optional[Slot]
    new_coda: str  # "=" keeps, "" deletes
    new_onset: str
    pattern: str = field(default="", compare=False)

    def matches(self, coda: str, onset: str, vowel: Optional[str]) -> bool:
        if not (self.coda(coda) and self.onset(onset)):
            return False
        if self.vowel is None:
            return True
        return vowel is not None and self.vowel(vowel)

    def apply(self, coda: str, onset: str) -> tuple[str, str]:
        return (
            coda if self.new_coda == "=" else self.new_coda,
            onset if self.new_onset == "=" else self.new_onset,
        )


_PATTERN = re.compile(r"^(\S+?)\+(\S+?)(?:/(\S+))?$")


def parse_rule(line: str, lineno: int = 0) -> PhonRule:
    parts = line.split("\t")
    if len(parts) != 4:
        raise RuleTableError(f"line {lineno}: expected 4 tab-separated fields")
    stage_s, name, pattern, rewrite = (p.strip() for p in parts)
    try:
        stage = int(stage_s)
    except ValueError:
        raise RuleTableError(f"line {lineno}: bad stage {stage_s!r}") from None
    m = _PATTERN.match(pattern)
    if not m:
        raise RuleTableError(f"line {lineno}: bad pattern {pattern!r}")
    coda_s, onset_s, vowel_s = m.groups()
    try:
        coda = Slot.parse(coda_s, _CODAS)
        onset = Slot.parse(onset_s, _ONSETS)
        vowel = Slot.parse(vowel_s, VOWELS) if vowel_s else None
    except RuleTableError as e:
        raise RuleTableError(f"line {lineno}: {e}") from None
    if "+" not in rewrite:
        raise RuleTableError(f"line {lineno}: bad rewrite {rewrite!r}")
    new_coda, new_onset = rewrite.split("+", 1)
    new_coda = "" if new_coda == "_" else new_coda
    if new_coda not in ("=", *_CODAS):
        raise RuleTableError(f"line {lineno}: bad coda rewrite {new_coda!r}")
    if new_onset not in ("=", *LEADS):
        raise RuleTableError(f"line {lineno}: bad onset rewrite {new_onset!r}")
    return PhonRule(stage, name, coda, onset, vowel, new_coda, new_onset, pattern)


def _contexts():
    for coda in _CODAS:
        for onset in _ONSETS:
            vowels = (None,) if onset == WORD_END else VOWELS
            for vowel in vowels:
                yield coda, onset, vowel


def lint_rules(rules: Iterable[PhonRule]) -> list[str]:
    """Return one message per context matched by two rules of the same stage."""
    problems = []
    by_stage = {}
    for rule in rules:
        by_stage.setdefault(rule.stage, []).append(rule)
    for stage, group in sorted(by_stage.items()):
        for ctx in _contexts():
            hits = [r.name for r in group if r.matches(*ctx)]
            if len(hits) > 1:
                problems.append(f"stage {stage}: {'/'.join(hits)} overlap on {ctx}")
    return problems


def load_rules(path: str | Path | None = None) -> list[PhonRule]:
    if path is None:
        text = resources.files("phonoov.data").joinpath("g2p_rules.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    rules = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rules.append(parse_rule(line, lineno))
    problems = lint_rules(rules)
    if problems:
        raise RuleTableError(f"{len(problems)} overlapping rules, first: {problems[0]}")
    return rules


def load_inventory(path: str | Path | None = None) -> frozenset:
    if path is None:
        text = resources.files("phonoov.data").joinpath("ipa_inventory.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return frozenset(s.strip() for s in text.splitlines() if s.strip())


@dataclass(frozen=True)
class PhonemeSequence:
    phonemes: tuple
    source: str
    warning: bool = False  # set when the input had no Hangul at all

    def __len__(self) -> int:
        return len(self.phonemes)

    def __iter__(self):
        return iter(self.phonemes)

    def __str__(self) -> str:
        return " ".join(self.phonemes)


class Transducer:
    def __init__(self, rules: Sequence[PhonRule], inventory: frozenset):
        self.rules = tuple(rules)
        self.inventory = inventory
        self.stages = [
            tuple(group)
            for _, group in itertools.groupby(
                sorted(self.rules, key=lambda r: r.stage), key=lambda r: r.stage
            )
        ]
        missing = set(ONSET_IPA.values()) | set(CODA_IPA.values()) | set(VOWEL_IPA.values())
        missing -= inventory
        if missing:
            raise RuleTableError(f"IPA inventory lacks {sorted(missing)}")

    @classmethod
    def from_files(cls, rules=None, inventory=None) -> "Transducer":
        return cls(load_rules(rules), load_inventory(inventory))

    def surface_syllables(self, run: str) -> list[list[str]]:
        """Apply every stage to a run of Hangul syllables; returns [onset, vowel, coda] lists."""
        syls = [list(split_syllable(ch)) for ch in run]
        for stage in self.stages:
            for i, syl in enumerate(syls):
                nxt = syls[i + 1] if i + 1 < len(syls) else None
                onset = nxt[0] if nxt else WORD_END
                vowel = nxt[1] if nxt else None
                for rule in stage:
                    if rule.matches(syl[2], onset, vowel):
                        syl[2], new_onset = rule.apply(syl[2], onset)
                        if nxt is not None:
                            nxt[0] = new_onset
                        break
        return syls

    def run_to_ipa(self, run: str) -> list[str]:
        out = []
        prev_coda = ""
        for onset, vowel, coda in self.surface_syllables(run):
            if onset == "ㄹ" and prev_coda == "ㄹ":
                out.append("l")
            elif onset != SILENT_ONSET:
                out.append(ONSET_IPA[onset])
            out.append(VOWEL_IPA[vowel])
            if coda:
                if coda not in CODA_IPA:
                    raise RuleTableError(f"coda {coda!r} in {run!r} survived all stages")
                out.append(CODA_IPA[coda])
            prev_coda = coda
        return out

    def to_ipa(self, word: str) -> PhonemeSequence:
        word = unicodedata.normalize("NFC", word)
        phonemes = []
        for run in _hangul_runs(word):
            phonemes.extend(self.run_to_ipa(run))
        bad = [p for p in phonemes if p not in self.inventory]
        if bad:
            raise RuleTableError(f"symbols {bad} missing from the IPA inventory")
        return PhonemeSequence(tuple(phonemes), word, warning=not phonemes)


def _hangul_runs(word: str) -> list[str]:
    runs, cur = [], []
    for ch in word:
        if is_syllable(ch):
            cur.append(ch)
        elif cur:
            runs.append("".join(cur))
            cur = []
    if cur:
        runs.append("".join(cur))
    return runs


@functools.lru_cache(maxsize=None)
def default_transducer() -> Transducer:
    return Transducer.from_files()


def to_ipa(word: str, transducer: Transducer | None = None) -> PhonemeSequence:
    return (transducer or default_transducer()).to_ipa(word)


def pronunciation_distance(a: Sequence[str] | PhonemeSequence, b: Sequence[str] | PhonemeSequence) -> int:
    """Levenshtein distance counted in IPA symbols."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]
