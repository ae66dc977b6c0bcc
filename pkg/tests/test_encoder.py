import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from phonoov import numerics as nx
from phonoov.encoder import (
    EmptyInput,
    EncoderConfig,
    Modality,
    Representation,
    TwinEncoder,
    mix,
)
from phonoov.tokenize import MorphemeVocab, build_symbol_table

WORDS = ["맛있다", "마싯다", "국물", "같이", "학교", "좋다"]
SMALL = EncoderConfig(num_layers=1, model_dim=12, num_heads=3, ffn_dim=16, max_seq_len=16)


@pytest.fixture(scope="module")
def vocab():
    return MorphemeVocab.from_tokens(["맛있", "##다", "국"])


@pytest.fixture(scope="module")
def encoder(vocab):
    return TwinEncoder(EncoderConfig(), build_symbol_table(WORDS, vocab), vocab, seed=3)


@pytest.fixture(scope="module")
def small(vocab):
    return TwinEncoder(SMALL, build_symbol_table(WORDS, vocab), vocab, seed=3)


def test_outputs_are_300_dimensional(encoder):
    for w in WORDS:
        for rep in (encoder.encode_phonemes(w), encoder.encode_word(w), encoder.encode(w)):
            assert rep.vector.shape == (300,)
    assert encoder.encode("마싯다").modality is Modality.MIXED


def test_word_input_is_jamo_then_pieces(encoder):
    expected = ["ㅁ", "ㅏ", "ㅅ", "ㅇ", "ㅣ", "ㅆ", "ㄷ", "ㅏ", "맛있", "##다"]
    assert encoder.word_ids("맛있다") == encoder.symbols.encode(expected)


def test_inference_is_deterministic(encoder):
    a, b = encoder.encode("맛있다"), encoder.encode("맛있다")
    assert np.array_equal(a.vector, b.vector)


def test_same_seed_same_parameters(vocab):
    symbols = build_symbol_table(WORDS, vocab)
    assert TwinEncoder(SMALL, symbols, vocab, seed=5).checksum() == TwinEncoder(SMALL, symbols, vocab, seed=5).checksum()
    assert TwinEncoder(SMALL, symbols, vocab, seed=5).checksum() != TwinEncoder(SMALL, symbols, vocab, seed=6).checksum()


def test_swapping_two_symbols_changes_output(encoder):
    a = encoder.encode_phonemes(["m", "ʌ", "s", "i"]).vector
    b = encoder.encode_phonemes(["s", "ʌ", "m", "i"]).vector
    assert np.max(np.abs(a - b)) > 1e-6


def test_empty_inputs_raise(encoder):
    with pytest.raises(EmptyInput):
        encoder.encode("")
    with pytest.raises(EmptyInput):
        encoder.encode_phonemes([])


def test_long_input_is_truncated_with_warning(small):
    with pytest.warns(UserWarning, match="truncated"):
        rep = small.encode_word("맛있다" * 10)
    assert rep.vector.shape == (12,)


def test_encode_is_mix_of_the_two_sides(encoder):
    m = encoder.encode("국물").vector
    p, w = encoder.encode_phonemes("국물").vector, encoder.encode_word("국물").vector
    assert np.allclose(m, 0.1 * p + 0.9 * w, atol=1e-7)


def test_batched_encoding_matches_single(small):
    ps, ws, ms = small.encode_many(WORDS)
    for i, w in enumerate(WORDS):
        assert np.allclose(ps[i], small.encode_phonemes(w).vector, atol=1e-5)
        assert np.allclose(ws[i], small.encode_word(w).vector, atol=1e-5)
        assert np.allclose(ms[i], small.encode(w).vector, atol=1e-5)


def test_dropout_only_in_training(small):
    ids = [small.word_ids("맛있다")]
    rng = np.random.default_rng(0)
    with nx.no_grad():
        eval_a = small.forward("W", ids).data
        eval_b = small.forward("W", ids, training=False, rng=rng).data
        train = small.forward("W", ids, training=True, rng=rng).data
    assert np.array_equal(eval_a, eval_b)
    assert not np.allclose(eval_a, train)


def test_save_load_round_trip(small, tmp_path):
    small.save(tmp_path)
    loaded = TwinEncoder.load(tmp_path)
    assert loaded.checksum() == small.checksum()
    assert loaded.symbols == small.symbols
    for w in WORDS:
        assert np.array_equal(loaded.encode(w).vector, small.encode(w).vector)


def test_config_text_round_trip():
    cfg = EncoderConfig(num_layers=3, model_dim=60, num_heads=4, mix_ratio=0.25)
    assert EncoderConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("kw", [dict(model_dim=301), dict(mix_ratio=1.5), dict(mix_ratio=-0.1)])
def test_bad_config_rejected(kw):
    with pytest.raises(ValueError):
        EncoderConfig(**kw)


def test_representation_rejects_non_finite():
    with pytest.raises(ValueError):
        Representation(np.array([np.nan, 1.0]), Modality.WORD)


# ---- mix

vec = arrays(np.float64, 8, elements=st.floats(-100, 100))


@given(vec, vec)
def test_mix_endpoints_exact(rp, rw):
    assert np.array_equal(mix(rp, rw, 0.0).vector, rw)
    assert np.array_equal(mix(rp, rw, 1.0).vector, rp)


@given(vec, vec, st.floats(0, 1))
def test_mix_matches_arithmetic(rp, rw, lam):
    assert np.allclose(mix(rp, rw, lam).vector, lam * rp + (1 - lam) * rw, atol=1e-7, rtol=0)


@given(vec, vec, st.floats(0, 1), st.floats(-10, 10))
def test_mix_is_linear(rp, rw, lam, a):
    lhs = mix(a * rp, a * rw, lam).vector
    rhs = a * mix(rp, rw, lam).vector
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


def test_mix_default_ratio_example():
    out = mix(np.ones(300), np.zeros(300), 0.1).vector
    assert np.allclose(out, 0.1, atol=1e-12)


def test_mix_validates():
    with pytest.raises(nx.ShapeError):
        mix(np.ones(3), np.ones(4), 0.5)
    with pytest.raises(ValueError):
        mix(np.ones(3), np.ones(3), 1.2)
