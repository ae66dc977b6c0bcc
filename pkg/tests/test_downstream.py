import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from phonoov import downstream as ds
from phonoov import numerics as nx
from phonoov.downstream import (
    ConfigError,
    EmptyDataset,
    FinetuneConfig,
    LabeledExample,
    ModalFeatures,
    attach_external_embeddings,
    combine_scores,
    ensemble_predict,
    evaluate,
    macro_f1,
    multimodal_loss,
    oov_subset,
    train_head,
)
from phonoov.encoder import EncoderConfig, TwinEncoder
from phonoov.pretrain import DimMismatch, EmbeddingTable
from phonoov.tokenize import build_morpheme_vocab, build_symbol_table

from gradcases import StaticFeatures, toy_modal_setup

TINY = dict(cnn_widths=(2, 3), cnn_maps=8, lstm_hidden=6, dropout=0.0)


def head_for(cfg, feats, num_labels=3):
    return ds.build_head(cfg, feats.dim, num_labels)


# ---- types and config

def test_example_validation():
    with pytest.raises(ValueError):
        LabeledExample((), 0)
    with pytest.raises(ValueError):
        LabeledExample(("a", "b"), (1,))
    assert LabeledExample(["a", "b"], [0, 1]).is_tagging
    assert not LabeledExample(["a"], 2).is_tagging


def test_all_modalities_disabled_is_config_error():
    with pytest.raises(ConfigError):
        FinetuneConfig(modality_mask=(False, False, False))


def test_betas_renormalised_over_enabled():
    cfg = FinetuneConfig(betas=(0.2, 0.2, 0.6), modality_mask=(True, False, True))
    betas = cfg.effective_betas()
    assert set(betas) == {"phoneme", "mixed"}
    assert np.isclose(betas["phoneme"], 0.25) and np.isclose(betas["mixed"], 0.75)


def test_config_text_round_trip():
    cfg = FinetuneConfig(head="bilstm", alphas=(1, 0.5, 2), modality_mask=(False, True, True), epochs=3)
    assert FinetuneConfig.from_text(cfg.to_text()) == cfg


def test_ablation_rows_cover_every_nonempty_mask():
    masks = set(ds.ABLATION_ROWS.values())
    assert len(masks) == 7 and (False, False, False) not in masks
    assert ds.ABLATION_ROWS[2] == (False, True, False) and ds.ABLATION_ROWS[7] == (True, True, True)
    assert ds.row_label(7) == "phoneme+word+mixed"


# ---- multimodal loss

def test_identical_inputs_give_three_times_one_loss():
    rng = np.random.default_rng(0)
    feats, examples = toy_modal_setup(rng, dim=5)
    for w, (p, _, _) in list(feats.vectors_by_word.items()):
        feats.vectors_by_word[w] = (p, p, p)
    cfg = FinetuneConfig(**TINY)
    head = head_for(cfg, feats)
    out = multimodal_loss(examples, head, feats, cfg)
    single = out.components["phoneme"]
    assert np.isclose(out.total.item(), 3 * single, rtol=1e-6)
    assert out.components["word"] == out.components["mixed"] == single


def test_word_only_alpha_gives_word_loss_exactly():
    rng = np.random.default_rng(1)
    feats, examples = toy_modal_setup(rng, dim=5)
    cfg = FinetuneConfig(alphas=(0, 1, 0), **TINY)
    out = multimodal_loss(examples, head_for(cfg, feats), feats, cfg)
    assert out.total.item() == out.components["word"]


@pytest.mark.parametrize("head", ["cnn", "bilstm"])
def test_loss_equals_weighted_sum_of_separate_terms(head):
    rng = np.random.default_rng(2)
    feats, examples = toy_modal_setup(rng, dim=5, tagging=head == "bilstm")
    cfg = FinetuneConfig(head=head, alphas=tuple(rng.uniform(0.1, 2, 3)), **TINY)
    g = head_for(cfg, feats)
    inputs, lengths = feats.batch(examples, g.min_len)
    expected = 0.0
    for m, a in zip(ds.MODALITIES, cfg.alphas):
        logits = g.forward(nx.Tensor(inputs[m]), lengths).data.astype(np.float64)
        if head == "bilstm":
            pairs = [(logits[i, j], t) for i, ex in enumerate(examples) for j, t in enumerate(ex.label)]
        else:
            pairs = [(logits[i], ex.label) for i, ex in enumerate(examples)]
        ce = np.mean([np.log(np.exp(z).sum()) - z[y] for z, y in pairs])
        expected += a * ce
    assert abs(multimodal_loss(examples, g, feats, cfg).total.item() - expected) < 1e-5


def test_disabled_modalities_contribute_nothing():
    rng = np.random.default_rng(3)
    feats, examples = toy_modal_setup(rng, dim=5)
    cfg = FinetuneConfig(modality_mask=(True, False, True), **TINY)
    out = multimodal_loss(examples, head_for(cfg, feats), feats, cfg)
    assert set(out.components) == {"phoneme", "mixed"}
    assert np.isclose(out.total.item(), out.components["phoneme"] + out.components["mixed"], rtol=1e-6)


def test_one_head_serves_every_modality():
    rng = np.random.default_rng(4)
    feats, examples = toy_modal_setup(rng, dim=5)
    touched = []
    for mask in [(True, False, False), (False, True, False), (False, False, True)]:
        cfg = FinetuneConfig(modality_mask=mask, **TINY)
        head = head_for(cfg, feats)
        multimodal_loss(examples, head, feats, cfg).total.backward()
        touched.append(sorted(k for k, p in head.params.items() if p.grad is not None))
    assert touched[0] == touched[1] == touched[2] == sorted(head.params)


# ---- ensemble

logits3 = arrays(np.float64, (3, 4), elements=st.floats(-20, 20))


@given(logits3)
def test_identical_scores_pass_through(z):
    cfg = FinetuneConfig()
    out = combine_scores({m: z[0] for m in ds.MODALITIES}, cfg)
    assert np.allclose(out, z[0], rtol=1e-12, atol=1e-12)
    assert out.argmax() == z[0].argmax()


@given(logits3, st.floats(0.01, 100))
def test_positive_beta_rescaling_keeps_prediction(z, c):
    scores = dict(zip(ds.MODALITIES, z))
    base = FinetuneConfig(betas=(0.2, 0.5, 0.3))
    scaled = FinetuneConfig(betas=tuple(c * b for b in base.betas))
    assert combine_scores(scores, base).argmax() == combine_scores(scores, scaled).argmax()


@given(logits3)
def test_beta_endpoints_select_one_path(z):
    scores = dict(zip(ds.MODALITIES, z))
    for i, m in enumerate(ds.MODALITIES):
        betas = tuple(1.0 if j == i else 0.0 for j in range(3))
        assert np.array_equal(combine_scores(scores, FinetuneConfig(betas=betas)), z[i])


def test_combine_matches_hand_sum():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(3, 7, 5))
    out = combine_scores(dict(zip(ds.MODALITIES, z)), FinetuneConfig(betas=(0.5, 0.3, 0.2)))
    assert np.allclose(out, 0.5 * z[0] + 0.3 * z[1] + 0.2 * z[2], atol=1e-6)


def test_phoneme_endpoint_prediction_equals_phoneme_path():
    rng = np.random.default_rng(6)
    feats, examples = toy_modal_setup(rng, dim=5, num_examples=8)
    cfg = FinetuneConfig(betas=(1, 0, 0), **TINY)
    head = head_for(cfg, feats)
    scores, preds = ensemble_predict(examples, head, feats, cfg)
    inputs, lengths = feats.batch(examples, head.min_len)
    direct = head.forward(nx.Tensor(inputs["phoneme"]), lengths).data.argmax(-1)
    assert preds == [int(x) for x in direct]
    assert set(scores.per_modality) == set(ds.MODALITIES)


def test_word_only_pipeline_matches_single_input_run():
    rng = np.random.default_rng(7)
    feats, examples = toy_modal_setup(rng, dim=5, num_examples=8)
    cfg = FinetuneConfig(modality_mask=(False, True, False), **TINY)
    head = head_for(cfg, feats)
    scores, preds = ensemble_predict(examples, head, feats, cfg)
    assert set(scores.per_modality) == {"word"}
    inputs, lengths = feats.batch(examples, head.min_len)
    logits = head.forward(nx.Tensor(inputs["word"]), lengths)
    assert np.array_equal(scores.ensemble, logits.data.astype(np.float64))
    assert preds == [int(x) for x in logits.data.argmax(-1)]
    loss = nx.cross_entropy(logits, [ex.label for ex in examples]).item()
    assert multimodal_loss(examples, head, feats, cfg).total.item() == loss


@pytest.mark.parametrize("head", ["cnn", "bilstm"])
def test_padding_does_not_change_predictions(head):
    rng = np.random.default_rng(8)
    feats, examples = toy_modal_setup(rng, dim=5, num_examples=6, tagging=head == "bilstm")
    cfg = FinetuneConfig(head=head, **TINY)
    g = head_for(cfg, feats)
    batched, _ = ensemble_predict(examples, g, feats, cfg)
    for i, ex in enumerate(examples):
        alone, _ = ensemble_predict([ex], g, feats, cfg)
        if head == "bilstm":
            n = len(ex.words)
            assert np.allclose(alone.ensemble[0, :n], batched.ensemble[i, :n], atol=1e-5)
        else:
            assert np.allclose(alone.ensemble[0], batched.ensemble[i], atol=1e-5)


# ---- metrics

def brute_macro_f1(gold, pred):
    scores = []
    for c in set(gold) | set(pred):
        tp = sum(1 for g, p in zip(gold, pred) if g == p == c)
        prec = tp / max(1, sum(p == c for p in pred))
        rec = tp / max(1, sum(g == c for g in gold))
        scores.append(0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec))
    return sum(scores) / len(scores)


def test_macro_f1_examples():
    assert macro_f1([0, 1, 2], [0, 1, 2]) == 1.0
    # TP=1 FP=1 FN=1 TN=1 for class 1
    assert macro_f1([1, 1, 0, 0], [1, 0, 1, 0]) == 0.5
    assert macro_f1([3, 3, 3], [3, 3, 3]) == 1.0


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=40))
def test_macro_f1_matches_brute_force(pairs):
    gold, pred = zip(*pairs)
    assert np.isclose(macro_f1(gold, pred), brute_macro_f1(gold, pred))


def test_evaluate_empty_dataset():
    rng = np.random.default_rng(9)
    feats, _ = toy_modal_setup(rng)
    cfg = FinetuneConfig(**TINY)
    with pytest.raises(EmptyDataset):
        evaluate([], head_for(cfg, feats), feats, cfg)


def test_score_predictions_for_tagging():
    ex = [LabeledExample(("a", "b"), (0, 1)), LabeledExample(("c",), (1,))]
    assert ds.score_predictions(ex, [(0, 1), (0,)])["accuracy"] == 2 / 3


# ---- OOV subset

def test_oov_subset_examples():
    data = [LabeledExample(("a", "b"), 0), LabeledExample(("c",), 1)]
    assert oov_subset(data, {"a", "b", "c"}) == []
    assert oov_subset(data, set()) == data
    assert oov_subset(data, {"a", "b"}) == [data[1]]


@given(st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=5), max_size=20),
       st.sets(st.sampled_from("abcdefg")))
def test_oov_subset_matches_scan(sentences, vocab):
    data = [LabeledExample(tuple(s), 0) for s in sentences]
    expected = [ex for ex in data if not all(w in vocab for w in ex.words)]
    assert oov_subset(data, vocab) == expected


# ---- external embeddings

@pytest.fixture(scope="module")
def tiny_encoder():
    words = ["학교", "병원", "학교가", "병원에", "친구", "밥"]
    vocab = build_morpheme_vocab(words, min_count=1)
    cfg = EncoderConfig(num_layers=1, model_dim=16, num_heads=2, ffn_dim=32, max_seq_len=24)
    return TwinEncoder(cfg, build_symbol_table(words, vocab), vocab, seed=0)


def test_external_table_covering_all_words(tiny_encoder):
    words = ["학교", "병원"]
    table = EmbeddingTable(words, np.random.default_rng(0).normal(size=(2, 16)))
    feats = attach_external_embeddings(ModalFeatures(tiny_encoder), table)
    base = ModalFeatures(tiny_encoder)
    for w in words:
        p, e, m = feats.vectors(w)
        assert np.array_equal(e, table[w])
        assert np.array_equal(p, base.vectors(w)[0]) and np.array_equal(m, base.vectors(w)[2])


def test_empty_external_table_changes_nothing(tiny_encoder):
    feats = attach_external_embeddings(ModalFeatures(tiny_encoder), EmbeddingTable.empty(16))
    base = ModalFeatures(tiny_encoder)
    for w in ["학교", "새말"]:
        assert all(np.array_equal(a, b) for a, b in zip(feats.vectors(w), base.vectors(w)))
        assert feats.source(w) == "encoder"


def test_partial_table_source_flags(tiny_encoder):
    table = EmbeddingTable(["학교", "밥"], np.ones((2, 16)))
    feats = attach_external_embeddings(ModalFeatures(tiny_encoder), table)
    words = ["학교", "병원", "밥", "친구", "새말"]
    assert [feats.source(w) for w in words] == ["external" if w in {"학교", "밥"} else "encoder" for w in words]


def test_external_dim_mismatch(tiny_encoder):
    with pytest.raises(DimMismatch):
        attach_external_embeddings(ModalFeatures(tiny_encoder), EmbeddingTable(["a"], np.ones((1, 5))))


# ---- training

def keyed_sentences(rng, n):
    """Class 0 sentences contain a 학교-word, class 1 a 병원-word."""
    keys = [["학교", "학교가", "학교에"], ["병원", "병원가", "병원에"]]
    fillers = ["친구", "밥", "오늘", "내일", "우리", "그냥"]
    out = []
    for _ in range(n):
        y = int(rng.integers(2))
        words = [fillers[int(i)] for i in rng.integers(len(fillers), size=3)]
        words.insert(int(rng.integers(4)), keys[y][int(rng.integers(3))])
        out.append(LabeledExample(tuple(words), y))
    return out


@pytest.fixture(scope="module")
def keyed_setup(tiny_encoder):
    rng = np.random.default_rng(10)
    return keyed_sentences(rng, 200), keyed_sentences(rng, 40), ModalFeatures(tiny_encoder)


def test_separable_set_reaches_full_dev_accuracy(keyed_setup):
    train, dev, feats = keyed_setup
    cfg = FinetuneConfig(epochs=5, batch_size=16, lr=1e-2, cnn_maps=16)
    result = train_head(train, dev, feats, cfg, 2)
    assert max(r["dev_accuracy"] for r in result.metric_log) == 1.0
    assert evaluate(dev, result.head, feats, cfg)["accuracy"] == 1.0


def test_training_is_deterministic_and_keeps_encoder_frozen(keyed_setup, tiny_encoder):
    train, dev, feats = keyed_setup
    before = tiny_encoder.checksum()
    cfg = FinetuneConfig(epochs=2, batch_size=8, cnn_maps=8, seed=4)
    a = train_head(train, dev, feats, cfg, 2)
    b = train_head(train, dev, ModalFeatures(tiny_encoder), cfg, 2)
    assert a.metric_log == b.metric_log
    assert all(np.array_equal(a.head.params[k].data, b.head.params[k].data) for k in a.head.params)
    assert tiny_encoder.checksum() == before


def test_best_dev_epoch_is_kept(keyed_setup):
    train, dev, feats = keyed_setup
    cfg = FinetuneConfig(epochs=3, batch_size=8, cnn_maps=8)
    result = train_head(train, dev, feats, cfg, 2)
    best = max(result.metric_log, key=lambda r: r["dev_macro_f1"])
    assert result.best_epoch == best["epoch"]
    assert np.isclose(evaluate(dev, result.head, feats, cfg)["macro_f1"], best["dev_macro_f1"])


def test_tagger_trains_and_predicts_per_token(keyed_setup):
    train, dev, feats = keyed_setup
    tag = lambda data: [LabeledExample(ex.words, tuple(int(w[:2] in ("학교", "병원")) for w in ex.words)) for ex in data]  # noqa: E731
    cfg = FinetuneConfig(head="bilstm", epochs=5, batch_size=16, lstm_hidden=8, lr=1e-2)
    result = train_head(tag(train), tag(dev), feats, cfg, 2)
    _, preds = ensemble_predict(tag(dev), result.head, feats, cfg)
    assert [len(p) for p in preds] == [len(ex.words) for ex in dev]
    assert evaluate(tag(dev), result.head, feats, cfg)["accuracy"] > 0.9


def test_empty_training_set():
    rng = np.random.default_rng(11)
    feats, _ = toy_modal_setup(rng)
    with pytest.raises(EmptyDataset):
        train_head([], [], feats, FinetuneConfig(**TINY), 3)


def test_non_finite_gradient_reported():
    rng = np.random.default_rng(12)
    feats, examples = toy_modal_setup(rng, dim=5)
    w = next(iter(feats.vectors_by_word))
    feats.vectors_by_word[w] = tuple(np.full(5, np.inf) for _ in range(3))
    examples = [LabeledExample((w,), 0)]
    with np.errstate(all="ignore"), pytest.raises(nx.NonFiniteGradient, match="epoch 1 batch 0"):
        train_head(examples, [], feats, FinetuneConfig(**TINY), 3)


def test_head_save_load_round_trip(keyed_setup, tmp_path):
    train, dev, feats = keyed_setup
    cfg = FinetuneConfig(epochs=1, batch_size=8, cnn_maps=8)
    result = train_head(train, dev, feats, cfg, 2)
    ds.save_head(result.head, cfg, ["학교", "병원"], tmp_path)
    head, cfg2, labels = ds.load_head(tmp_path, feats.dim)
    assert cfg2 == cfg and labels == ["학교", "병원"]
    a, _ = ensemble_predict(dev, result.head, feats, cfg)
    b, _ = ensemble_predict(dev, head, feats, cfg2)
    assert np.array_equal(a.ensemble, b.ensemble)


# ---- files

def test_classification_file_round_trip(tmp_path):
    data = [LabeledExample(("가", "나"), 1), LabeledExample(("다",), 0)]
    ds.write_classification(data, ["neg", "pos"], tmp_path / "d.tsv")
    back, labels = ds.load_classification(tmp_path / "d.tsv")
    assert labels == ["neg", "pos"] and back == data


def test_tagging_file(tmp_path):
    (tmp_path / "t.tsv").write_text("가\tB\n나\tO\n\n다\tO\n", "utf-8")
    data, labels = ds.load_tagging(tmp_path / "t.tsv")
    assert labels == ["B", "O"]
    assert data == [LabeledExample(("가", "나"), (0, 1)), LabeledExample(("다",), (1,))]


@pytest.mark.parametrize("text", ["no tab here\n", "pos\t   \n"])
def test_bad_classification_lines(tmp_path, text):
    (tmp_path / "d.tsv").write_text(text, "utf-8")
    with pytest.raises(ValueError, match=":1:"):
        ds.load_classification(tmp_path / "d.tsv")


def test_unknown_label_against_fixed_label_set(tmp_path):
    (tmp_path / "d.tsv").write_text("zzz\t가\n", "utf-8")
    with pytest.raises(ValueError, match="unknown label"):
        ds.load_classification(tmp_path / "d.tsv", ["neg", "pos"])


def test_metrics_csv(tmp_path):
    ds.write_metrics_csv([("test", "accuracy", 0.5), ("dev", "best_epoch", 3)], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text("utf-8") == "split,metric,value\ntest,accuracy,0.500000\ndev,best_epoch,3\n"


def test_training_without_dev_keeps_lowest_loss_epoch():
    rng = np.random.default_rng(13)
    feats, examples = toy_modal_setup(rng, dim=5, num_examples=12)
    cfg = FinetuneConfig(epochs=3, batch_size=4, **TINY)
    result = train_head(examples, [], feats, cfg, 3)
    losses = [r["train_loss"] for r in result.metric_log]
    assert result.best_epoch == 1 + int(np.argmin(losses))
    assert all("dev_accuracy" not in r for r in result.metric_log)
