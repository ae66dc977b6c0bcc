"""Synthetic corpora for desk-scale experiments.

Real targets come from large pre-trained embedding tables; these helpers
build small stand-ins: random Hangul words with random unit targets, and
misspellings that keep the pronunciation (e.g. 맛있다 -> 마싯다).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from phonoov.downstream import LabeledExample
from phonoov.g2p import Transducer, default_transducer
from phonoov.hangul import LEADS, TAILS, VOWELS, join_syllable, split_syllable
from phonoov.pretrain import EmbeddingTable

# frequent jamo, so words look vaguely Korean and share pieces
_LEADS = "ㄱㄴㄷㄹㅁㅂㅅㅇㅈㅊㅎㅇㅇ"
_VOWELS = "ㅏㅓㅗㅜㅡㅣㅐㅔㅕ"
_TAILS = ["", "", "", "ㄱ", "ㄴ", "ㄹ", "ㅁ", "ㅂ", "ㅅ", "ㅆ", "ㅇ", "ㅈ", "ㅊ", "ㅎ", "ㄺ", "ㅄ"]


def random_word(rng: np.random.Generator, min_syl: int = 2, max_syl: int = 4) -> str:
    n = int(rng.integers(min_syl, max_syl + 1))
    return "".join(
        join_syllable(_LEADS[rng.integers(len(_LEADS))], _VOWELS[rng.integers(len(_VOWELS))],
                      _TAILS[rng.integers(len(_TAILS))])
        for _ in range(n)
    )


def random_words(rng: np.random.Generator, n: int, min_syl: int = 2, max_syl: int = 4,
                 exclude: Sequence[str] = ()) -> list[str]:
    seen = set(exclude)
    out = []
    while len(out) < n:
        w = random_word(rng, min_syl, max_syl)
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def unit_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    return (v / np.linalg.norm(v, axis=1, keepdims=True)).astype(np.float32)


def random_table(rng: np.random.Generator, words: Sequence[str], dim: int) -> EmbeddingTable:
    return EmbeddingTable(list(words), unit_vectors(rng, len(words), dim))


def homophone_respellings(word: str, transducer: Optional[Transducer] = None) -> list[str]:
    """All spellings differing in one syllable's onset/coda that are pronounced like ``word``.

    Edits considered: the coda of syllable i together with the onset of
    syllable i+1 (covers liaison and tensification respellings), and the
    coda of the last syllable.
    """
    t = transducer or default_transducer()
    target = t.to_ipa(word).phonemes
    syls = [list(split_syllable(ch)) for ch in word]
    out = []
    for i in range(len(syls)):
        onsets = LEADS if i + 1 < len(syls) else [None]
        for tail in TAILS:
            for onset in onsets:
                cand = [s[:] for s in syls]
                cand[i][2] = tail
                if onset is not None:
                    cand[i + 1][0] = onset
                spelled = "".join(join_syllable(*s) for s in cand)
                if spelled != word and spelled not in out and t.to_ipa(spelled).phonemes == target:
                    out.append(spelled)
    return out


def homophone_pairs(rng: np.random.Generator, words: Sequence[str], n: int,
                    transducer: Optional[Transducer] = None, exclude: Sequence[str] = ()) -> list[tuple[str, str]]:
    """Pick up to ``n`` (word, misspelling) pairs; misspellings avoid ``words`` and ``exclude``."""
    taken = set(words) | set(exclude)
    pairs = []
    for i in rng.permutation(len(words)):
        options = [s for s in homophone_respellings(words[i], transducer) if s not in taken]
        if options:
            mis = options[int(rng.integers(len(options)))]
            taken.add(mis)
            pairs.append((words[i], mis))
            if len(pairs) == n:
                break
    return pairs


def homophone_friendly_word(rng: np.random.Generator) -> str:
    """A word whose first boundary is a coda before a silent onset (so liaison respellings exist)."""
    first = join_syllable(_LEADS[rng.integers(len(_LEADS))], _VOWELS[rng.integers(len(_VOWELS))],
                          "ㄱㄴㄹㅁㅂㅅㅈㅊㄺㅄ"[rng.integers(10)])
    second = join_syllable("ㅇ", _VOWELS[rng.integers(len(_VOWELS))], _TAILS[rng.integers(len(_TAILS))])
    rest = random_word(rng, 0, 1) if rng.random() < 0.5 else ""
    return first + second + rest


@dataclass
class HomophoneTask:
    """Toy sentence classification where the label is carried by one keyword.

    ``test_oov`` replaces each keyword with a homophone misspelling that is
    absent from ``vocabulary`` (the reference vocabulary).
    """

    vocabulary: list
    targets: EmbeddingTable
    train: list
    dev: list
    test: list
    test_oov: list
    misspellings: dict
    num_classes: int


def homophone_task(
    seed: int = 0,
    num_classes: int = 4,
    keywords_per_class: int = 8,
    num_fillers: int = 40,
    sentence_len: int = 6,
    train_size: int = 200,
    eval_size: int = 80,
    dim: int = 300,
    noise: float = 0.6,
    transducer: Optional[Transducer] = None,
) -> HomophoneTask:
    rng = np.random.default_rng(seed)
    keywords: list[str] = []
    misspell = {}
    while len(keywords) < num_classes * keywords_per_class:
        w = homophone_friendly_word(rng)
        if w in keywords or w in misspell.values():
            continue
        options = [s for s in homophone_respellings(w, transducer) if s not in keywords and s not in misspell.values()]
        if options:
            keywords.append(w)
            misspell[w] = options[int(rng.integers(len(options)))]
    fillers = random_words(rng, num_fillers, exclude=keywords + list(misspell.values()))
    label_of = {w: i // keywords_per_class for i, w in enumerate(keywords)}

    # keyword targets cluster by class, as semantically related words would
    centroids = unit_vectors(rng, num_classes, dim)
    vocab = keywords + fillers
    vecs = np.concatenate([
        centroids[[label_of[w] for w in keywords]] + noise * unit_vectors(rng, len(keywords), dim),
        unit_vectors(rng, len(fillers), dim),
    ])
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    table = EmbeddingTable(vocab, vecs)

    def sentences(n, spell):
        out = []
        for _ in range(n):
            kw = keywords[int(rng.integers(len(keywords)))]
            words = [fillers[int(j)] for j in rng.integers(len(fillers), size=sentence_len - 1)]
            words.insert(int(rng.integers(sentence_len)), spell(kw))
            out.append(LabeledExample(tuple(words), label_of[kw]))
        return out

    same = lambda w: w  # noqa: E731
    train = sentences(train_size, same)
    dev = sentences(eval_size, same)
    test = sentences(eval_size, same)
    test_oov = [
        LabeledExample(tuple(misspell.get(w, w) for w in ex.words), ex.label) for ex in test
    ]
    return HomophoneTask(vocab, table, train, dev, test, test_oov, misspell, num_classes)
