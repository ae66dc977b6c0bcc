from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from phonoov.g2p import (
    PhonRule,
    RuleTableError,
    Transducer,
    default_transducer,
    lint_rules,
    load_inventory,
    load_rules,
    parse_rule,
    pronunciation_distance,
    to_ipa,
)
from phonoov.hangul import LEADS, TAILS, VOWELS, join_syllable

GOLDEN = [
    line.split("\t")[:2]
    for line in (Path(__file__).parent / "golden_g2p.tsv").read_text("utf-8").splitlines()
    if line and not line.startswith("#")
]


@pytest.mark.parametrize("word,ipa", GOLDEN)
def test_golden(word, ipa):
    assert " ".join(to_ipa(word).phonemes) == ipa


def test_homophone_anchor_examples():
    assert to_ipa("맛있다").phonemes == ("m", "ʌ", "s", "i", "t", "t'", "ʌ")
    assert to_ipa("마싯다") == to_ipa("마싯다")
    assert to_ipa("맛있다").phonemes == to_ipa("마싯다").phonemes
    assert to_ipa("찾다").phonemes == to_ipa("찼다").phonemes == ("tɕʰ", "ʌ", "t", "t'", "ʌ")


def test_every_syllable_pair_converts():
    inventory = load_inventory()
    t = default_transducer()
    for tail in TAILS:
        first = join_syllable("ㄱ", "ㅏ", tail)
        assert set(t.to_ipa(first).phonemes) <= inventory
        for lead in LEADS:
            for vowel in VOWELS:
                out = t.to_ipa(first + join_syllable(lead, vowel))
                assert set(out.phonemes) <= inventory


def test_non_hangul():
    out = to_ipa("abc")
    assert out.phonemes == () and out.warning
    assert to_ipa("밥a밥").phonemes == ("p", "ʌ", "p", "p", "ʌ", "p")
    assert not to_ipa("밥").warning


def test_default_table_is_lint_clean():
    rules = load_rules()
    assert lint_rules(rules) == []
    assert sorted({r.stage for r in rules}) == [1, 2, 3, 4, 5, 6]


def test_overlapping_rules_rejected(tmp_path):
    path = tmp_path / "rules.txt"
    path.write_text("1\ta\tㄱ+*\tㅇ+=\n1\tb\t[ㄱㄴ]+ㄴ\t=+ㄹ\n", "utf-8")
    with pytest.raises(RuleTableError, match="overlap"):
        load_rules(path)


def test_same_context_different_stage_is_fine(tmp_path):
    path = tmp_path / "rules.txt"
    path.write_text("# comment\n1\ta\tㄱ+*\tㅇ+=\n2\tb\tㄱ+ㄴ\t=+ㄹ\n", "utf-8")
    assert len(load_rules(path)) == 2


@pytest.mark.parametrize(
    "line",
    ["x\ta\tㄱ+ㄴ\t=+=", "1\ta\tㄱㄴ\t=+=", "1\ta\tq+ㄴ\t=+=", "1\ta\tㄱ+ㄴ\t==", "1\ta\tㄱ+ㄴ"],
)
def test_malformed_rules(line):
    with pytest.raises(RuleTableError):
        parse_rule(line)


def test_stage_order_is_respected():
    # a stage-2 rule sees the output of stage 1
    rules = [parse_rule("1\tn\tㅅ+ㄷ\tㄷ+="), parse_rule("2\tt\tㄷ+ㄷ\t=+ㄸ")]
    t = Transducer(rules, load_inventory())
    assert t.to_ipa("갓다").phonemes == ("k", "ʌ", "t", "t'", "ʌ")


def test_custom_rules_from_file(tmp_path):
    rules = tmp_path / "r.txt"
    rules.write_text("1\tall-t\t*+#\tㄷ+=\n", "utf-8")
    t = Transducer.from_files(rules)
    assert t.to_ipa("밥").phonemes == ("p", "ʌ", "t")


def test_inventory_must_cover_mapping(tmp_path):
    inv = tmp_path / "inv.txt"
    inv.write_text("m\n", "utf-8")
    with pytest.raises(RuleTableError):
        Transducer.from_files(None, inv)


def _brute_distance(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        _brute_distance(a[1:], b) + 1,
        _brute_distance(a, b[1:]) + 1,
        _brute_distance(a[1:], b[1:]) + (a[0] != b[0]),
    )


symbols = st.lists(st.sampled_from(["m", "ʌ", "s", "t'", "tɕʰ", "i"]), max_size=6)


def test_distance_examples():
    x = to_ipa("맛있다")
    assert pronunciation_distance(x, x) == 0
    assert pronunciation_distance(to_ipa("맛있다"), to_ipa("마싯다")) == 0
    # symbol level: t' is one symbol, not two characters
    assert pronunciation_distance(["t'"], ["t"]) == 1


@given(symbols, symbols)
def test_distance_matches_brute_force(a, b):
    assert pronunciation_distance(a, b) == _brute_distance(a, b)


@given(symbols, symbols, symbols)
def test_distance_is_metric(a, b, c):
    d = pronunciation_distance
    assert d(a, b) == d(b, a)
    assert (d(a, b) == 0) == (a == b)
    assert d(a, c) <= d(a, b) + d(b, c)


@given(st.text(alphabet=st.characters(min_codepoint=0xAC00, max_codepoint=0xD7A3), min_size=1, max_size=6))
def test_deterministic_and_nonempty(word):
    out = to_ipa(word)
    assert len(out) > 0
    assert out == to_ipa(word)
