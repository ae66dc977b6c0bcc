"""Command-line entry point.

Settings come from built-in defaults, then an optional ``--config`` file of
``key=value`` lines, then command-line flags.  Commands that write a run
directory freeze the merged settings to ``config.txt`` in it, so
``--config RUN/config.txt`` repeats the run.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from phonoov import downstream as ds
from phonoov import numerics as nx
from phonoov import pretrain as pt
from phonoov.encoder import EncoderConfig, TwinEncoder
from phonoov.g2p import Transducer, default_transducer
from phonoov.hangul import word_to_jamo

log = logging.getLogger("phonoov")

USAGE, DATA, NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# settings


def _floats(s: str) -> tuple:
    return tuple(ds._number(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _modalities(s: str) -> tuple:
    names = [x.strip() for x in s.split(",") if x.strip()]
    bad = [x for x in names if x not in ds.MODALITIES]
    if bad:
        raise ValueError(f"unknown modality {bad[0]!r} (choose from {', '.join(ds.MODALITIES)})")
    return tuple(m in names for m in ds.MODALITIES)


def _bool(s: str) -> bool:
    if s.strip().lower() in ("1", "true", "yes"):
        return True
    if s.strip().lower() in ("0", "false", "no", ""):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _fmt(value) -> str:
    if isinstance(value, tuple):
        if value and isinstance(value[0], bool):
            return ",".join(m for m, on in zip(ds.MODALITIES, value) if on)
        return ",".join(str(x) for x in value)
    return "" if value is None else str(value)


# name -> (parser, default, help); a default of None means "not set"
COMMON = {
    "seed": (int, 0, "run seed; every component draws a named sub-seed from it"),
}
ENCODER_OPTS = {
    "num_layers": (int, 2, "transformer blocks per encoder"),
    "num_heads": (int, 6, "attention heads"),
    "ffn_dim": (int, 600, "feed-forward width"),
    "max_seq_len": (int, 64, "longest input sequence; longer inputs are truncated"),
    "dropout": (float, 0.1, "encoder dropout"),
    "mix_ratio": (float, 0.1, "weight of the phoneme representation in the mixed vector"),
}
PRETRAIN_OPTS = {
    "embeddings": (str, None, "target vectors in word2vec text format"),
    "synthetic_words": (int, 0, "instead of --embeddings, synthesize this many random words with unit targets"),
    "synthetic_dim": (int, 300, "dimension of synthesized targets"),
    "rules": (str, None, "G2P rule table (defaults to the bundled one)"),
    "epochs": (int, 10, "training epochs"),
    "batch_size": (int, 32, "mini-batch size (in-batch negatives)"),
    "lr": (float, 1e-3, "AdamW learning rate"),
    "weight_decay": (float, 0.01, "AdamW decoupled weight decay"),
    "temperature": (float, 0.07, "contrastive temperature"),
    "score": (str, "cosine", "similarity: cosine or dot"),
    "morpheme_min_count": (int, 2, "minimum count for a multi-syllable morpheme piece"),
    **ENCODER_OPTS,
}
FINETUNE_OPTS = {
    "checkpoint": (str, None, "pre-trained encoder directory"),
    "task": (str, "classification", "classification or tagging"),
    "train": (str, None, "training set"),
    "dev": (str, None, "development set (selects the best epoch)"),
    "test": (str, None, "test set"),
    "reference_vocab": (str, None, "word list; test examples with words outside it form the test_oov split"),
    "external_embeddings": (str, None, "word2vec table replacing the word-modality vectors it covers"),
    "head": (str, "cnn", "cnn or bilstm"),
    "alphas": (_floats, (1.0, 1.0, 1.0), "loss weights for phoneme,word,mixed"),
    "betas": (_floats, (1 / 3, 1 / 3, 1 / 3), "ensemble weights for phoneme,word,mixed"),
    "modalities": (_modalities, (True, True, True), "enabled inputs, e.g. phoneme,word,mixed"),
    "epochs": (int, 10, "training epochs"),
    "lr": (float, 1e-3, "AdamW learning rate"),
    "weight_decay": (float, 0.01, "AdamW decoupled weight decay"),
    "batch_size": (int, 32, "mini-batch size"),
    "dropout": (float, 0.5, "head dropout"),
    "cnn_widths": (_ints, (3, 4, 5), "CNN filter widths"),
    "cnn_maps": (int, 100, "feature maps per CNN width"),
    "lstm_hidden": (int, 256, "BiLSTM hidden size per direction"),
}
ABLATE_OPTS = {
    "seeds": (_ints, None, "comma-separated seeds averaged in the table (default: the --seed value)"),
    "toy": (_bool, False, "use the synthetic homophone task, pre-training an encoder per seed"),
}
TOY_OPTS = {
    "num_classes": (int, 4, "classes in the toy task"),
    "keywords_per_class": (int, 8, "label-bearing words per class"),
    "num_fillers": (int, 40, "label-free filler words"),
    "train_size": (int, 200, "training sentences"),
    "eval_size": (int, 80, "sentences in dev and test"),
    "dim": (int, 300, "target vector dimension"),
}


def _finetune_config(s: dict) -> ds.FinetuneConfig:
    return ds.FinetuneConfig(
        alphas=s["alphas"], betas=s["betas"], modality_mask=s["modalities"], head=s["head"],
        epochs=s["epochs"], lr=s["lr"], weight_decay=s["weight_decay"], batch_size=s["batch_size"],
        seed=s["seed"], dropout=s["dropout"], cnn_widths=s["cnn_widths"], cnn_maps=s["cnn_maps"],
        lstm_hidden=s["lstm_hidden"],
    )


def read_config_file(path: str, options: dict) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for n, line in enumerate(p.read_text("utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in options:
            raise UsageError(f"{path}:{n}: unknown setting {key!r}")
        out[key] = _parse_value(options, key, value)
    return out


def _parse_value(options: dict, key: str, value: str):
    parse, default = options[key][:2]
    if value == "" and default is None:
        return None
    try:
        return parse(value)
    except ValueError as e:
        raise UsageError(f"bad value for {key}: {e}") from None


def merge_settings(options: dict, args: argparse.Namespace) -> dict:
    """defaults < config file < flags."""
    settings = {k: opt[1] for k, opt in options.items()}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config, options))
    for k in options:
        if k in vars(args):
            settings[k] = getattr(args, k)
    return settings


def freeze_settings(settings: dict, path: Path) -> None:
    path.write_text("".join(f"{k}={_fmt(v)}\n" for k, v in sorted(settings.items())), "utf-8")


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message} (see '{self.prog} --help')")


def _add_options(p: argparse.ArgumentParser, options: dict, skip: Sequence[str] = ()) -> None:
    for name, (parse, default, help_) in options.items():
        if name in skip:
            continue

        def conv(v, _name=name):
            try:
                return options[_name][0](v)
            except ValueError as e:
                raise argparse.ArgumentTypeError(str(e)) from None

        conv.__name__ = getattr(parse, "__name__", "value").lstrip("_")
        shown = f" (default: {_fmt(default)})" if default is not None and default != "" else ""
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=conv, default=argparse.SUPPRESS,
                       help=help_ + shown)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phonoov", description="Phoneme-aware OOV word representations for Korean.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("decompose", help="print the jamo of each word")
    p.add_argument("words", nargs="+")

    p = sub.add_parser("g2p", help="print the IPA transcription of each word")
    p.add_argument("words", nargs="+")
    p.add_argument("--rules", help="G2P rule table (defaults to the bundled one)")

    p = sub.add_parser("pretrain", help="train the twin encoders to mimic target vectors")
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--run-dir", required=True, help="output directory")
    _add_options(p, {**COMMON, **PRETRAIN_OPTS})

    p = sub.add_parser("embed", help="print mixed vectors for words in word2vec text format")
    p.add_argument("--checkpoint", required=True, help="pre-trained encoder directory")
    p.add_argument("words", nargs="+")

    p = sub.add_parser("finetune", help="train a downstream head on frozen representations")
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--run-dir", required=True, help="output directory")
    _add_options(p, {**COMMON, **FINETUNE_OPTS})

    p = sub.add_parser("predict", help="predict labels with per-modality and ensemble logits")
    p.add_argument("--checkpoint", required=True, help="pre-trained encoder directory")
    p.add_argument("--head", required=True, help="finetune run directory")
    p.add_argument("--input", required=True, help="sentences, one per line (a leading label<TAB> is ignored); "
                                                  "for tagging, token lines with blank lines between sentences")
    p.add_argument("--external-embeddings", help="word2vec table replacing the word-modality vectors it covers")

    p = sub.add_parser("ablate", help="fine-tune and evaluate every input-representation row")
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--run-dir", required=True, help="output directory")
    p.add_argument("--toy", action="store_const", const=True, default=argparse.SUPPRESS, help=ABLATE_OPTS["toy"][2])
    _add_options(p, {**COMMON, **ABLATE_OPTS, **FINETUNE_OPTS, **_prefixed(PRETRAIN_OPTS), **TOY_OPTS}, skip=("toy",))

    p = sub.add_parser("toy", help="write the synthetic homophone task to a directory")
    p.add_argument("--out", required=True, help="output directory")
    _add_options(p, {**COMMON, **TOY_OPTS})
    return parser


def _prefixed(options: dict) -> dict:
    keep = ("epochs", "batch_size", "lr", "temperature", "score", "morpheme_min_count", "mix_ratio")
    return {"pretrain_" + k: options[k] for k in keep}


# ---------------------------------------------------------------------------
# helpers


def _need_file(path: Optional[str], what: str) -> Path:
    if not path:
        raise UsageError(f"missing --{what.replace('_', '-')}")
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {path}")
    return p


def _need_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not (p / "encoder.bin").is_file():
        raise DataError(f"{what} is not an encoder directory: {path}")
    return p


def _load_dataset(path: Path, task: str, labels=None):
    if task == "classification":
        return ds.load_classification(path, labels)
    if task == "tagging":
        return ds.load_tagging(path, labels)
    raise UsageError(f"unknown task {task!r}")


def _out(line: str) -> None:
    sys.stdout.write(line + "\n")


def _fmt_vec(v) -> str:
    return " ".join(f"{float(x):.6g}" for x in v)


# ---------------------------------------------------------------------------
# commands


def cmd_decompose(args) -> None:
    for w in args.words:
        _out(f"{w}\t{' '.join(word_to_jamo(w).symbols)}")


def cmd_g2p(args) -> None:
    t = Transducer.from_files(_need_file(args.rules, "rules")) if args.rules else default_transducer()
    for w in args.words:
        _out(f"{w}\t{' '.join(t.to_ipa(w).phonemes)}")


def cmd_pretrain(args) -> None:
    options = {**COMMON, **PRETRAIN_OPTS}
    s = merge_settings(options, args)
    cfg = pt.PretrainConfig(temperature=s["temperature"], batch_size=s["batch_size"], epochs=s["epochs"],
                            lr=s["lr"], weight_decay=s["weight_decay"], seed=s["seed"], score=s["score"],
                            morpheme_min_count=s["morpheme_min_count"])
    transducer = Transducer.from_files(_need_file(s["rules"], "rules")) if s["rules"] else None
    if s["embeddings"]:
        table = pt.load_embeddings(_need_file(s["embeddings"], "embeddings"))
    elif s["synthetic_words"] > 0:
        from phonoov import toydata
        from phonoov.seeding import sub_rng

        rng = sub_rng(s["seed"], "data.synthetic")
        table = toydata.random_table(rng, toydata.random_words(rng, s["synthetic_words"]), s["synthetic_dim"])
    else:
        raise UsageError("pretrain needs --embeddings or --synthetic-words")
    enc_cfg = EncoderConfig(num_layers=s["num_layers"], model_dim=table.dim, num_heads=s["num_heads"],
                            ffn_dim=s["ffn_dim"], max_seq_len=s["max_seq_len"], dropout=s["dropout"],
                            mix_ratio=s["mix_ratio"])
    result = pt.train(table, cfg, enc_cfg, transducer=transducer)
    run = Path(args.run_dir)
    pt.write_run(run, result, cfg, s["rules"])
    if not s["embeddings"]:
        pt.save_embeddings(table, run / "targets.txt")
    freeze_settings(s, run / "config.txt")
    _out(f"epochs\t{len(result.loss_log)}\tfinal_loss\t{result.loss_log[-1]:.6f}")


def cmd_embed(args) -> None:
    enc = TwinEncoder.load(_need_dir(args.checkpoint, "checkpoint"))
    reps = pt.embed_oov(args.words, enc)
    _out(f"{len(reps)} {enc.config.model_dim}")
    for w, r in zip(args.words, reps):
        _out(w + " " + " ".join(repr(float(x)) for x in r.vector))


def _features(checkpoint: str, external: Optional[str]) -> ds.ModalFeatures:
    enc = TwinEncoder.load(_need_dir(checkpoint, "checkpoint"))
    feats = ds.ModalFeatures(enc)
    if external:
        feats = ds.attach_external_embeddings(feats, pt.load_embeddings(_need_file(external, "external_embeddings")))
    return feats


def _reference_vocab(path: Optional[str]):
    if not path:
        return None
    return [w.strip() for w in _need_file(path, "reference_vocab").read_text("utf-8").splitlines() if w.strip()]


def cmd_finetune(args) -> None:
    s = merge_settings({**COMMON, **FINETUNE_OPTS}, args)
    cfg = _finetune_config(s)
    if not s["checkpoint"]:
        raise UsageError("missing --checkpoint")
    train, labels = _load_dataset(_need_file(s["train"], "train"), s["task"])
    dev = _load_dataset(_need_file(s["dev"], "dev"), s["task"], labels)[0] if s["dev"] else []
    test = _load_dataset(_need_file(s["test"], "test"), s["task"], labels)[0] if s["test"] else []
    vocab = _reference_vocab(s["reference_vocab"])
    feats = _features(s["checkpoint"], s["external_embeddings"])
    checksum = feats.encoder.checksum()

    result = ds.train_head(train, dev, feats, cfg, len(labels))
    if feats.encoder.checksum() != checksum:
        raise RuntimeError("encoder parameters changed during fine-tuning")

    run = Path(args.run_dir)
    ds.save_head(result.head, cfg, labels, run)
    freeze_settings(s, run / "config.txt")
    rows = []
    for r in result.metric_log:
        rows += [(f"epoch{r['epoch']}", k, v) for k, v in r.items() if k != "epoch"]
    splits = {"dev": dev, "test": test}
    if vocab is not None and test:
        splits["test_oov"] = ds.oov_subset(test, vocab)
    for split, examples in splits.items():
        if examples:
            for k, v in ds.evaluate(examples, result.head, feats, cfg).items():
                rows.append((split, k, v))
                _out(f"{split}\t{k}\t{v:.6f}")
    rows.append(("dev", "best_epoch", result.best_epoch))
    ds.write_metrics_csv(rows, run / "metrics.csv")


def _read_predict_input(path: Path, task: str) -> list:
    lines = path.read_text("utf-8").splitlines()
    if task == "tagging":
        out, cur = [], []
        for line in lines + [""]:
            if line.strip():
                cur.append(line.split("\t", 1)[0].strip())
            elif cur:
                out.append(cur)
                cur = []
        return out
    return [line.split("\t", 1)[-1].split() for line in lines if line.split("\t", 1)[-1].strip()]


def cmd_predict(args) -> None:
    feats = _features(args.checkpoint, args.external_embeddings)
    head_dir = Path(args.head)
    if not (head_dir / "head.bin").is_file():
        raise DataError(f"not a finetune run directory: {args.head}")
    head, cfg, labels = ds.load_head(head_dir, feats.dim)
    settings = read_config_file(str(head_dir / "config.txt"), {**COMMON, **FINETUNE_OPTS}) \
        if (head_dir / "config.txt").is_file() else {}
    task = settings.get("task") or "classification"
    sentences = _read_predict_input(_need_file(args.input, "input"), task)
    if not sentences:
        raise DataError(f"no sentences in {args.input}")
    enabled = cfg.enabled()
    _out("\t".join(["input", "prediction", *(f"Z_{m}" for m in enabled), "Z"]))
    for words in sentences:
        dummy = tuple(0 for _ in words) if task == "tagging" else 0
        scores, preds = ds.ensemble_predict([ds.LabeledExample(tuple(words), dummy)], head, feats, cfg)
        if task == "tagging":
            for j, w in enumerate(words):
                cols = [_fmt_vec(scores.per_modality[m][0, j]) for m in enabled] + [_fmt_vec(scores.ensemble[0, j])]
                _out("\t".join([w, labels[preds[0][j]], *cols]))
            _out("")
        else:
            cols = [_fmt_vec(scores.per_modality[m][0]) for m in enabled] + [_fmt_vec(scores.ensemble[0])]
            _out("\t".join([" ".join(words), labels[preds[0]], *cols]))


def cmd_ablate(args) -> None:
    options = {**COMMON, **ABLATE_OPTS, **FINETUNE_OPTS, **_prefixed(PRETRAIN_OPTS), **TOY_OPTS}
    s = merge_settings(options, args)
    seeds = s["seeds"] or (s["seed"],)
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    grids = []
    for seed in seeds:
        cfg = _finetune_config({**s, "seed": seed})
        if s["toy"]:
            from phonoov import toydata

            task = toydata.homophone_task(seed, s["num_classes"], s["keywords_per_class"], s["num_fillers"],
                                          train_size=s["train_size"], eval_size=s["eval_size"], dim=s["dim"])
            pcfg = pt.PretrainConfig(temperature=s["pretrain_temperature"], batch_size=s["pretrain_batch_size"],
                                     epochs=s["pretrain_epochs"], lr=s["pretrain_lr"], seed=seed,
                                     score=s["pretrain_score"], morpheme_min_count=s["pretrain_morpheme_min_count"])
            ecfg = EncoderConfig(model_dim=s["dim"], mix_ratio=s["pretrain_mix_ratio"])
            feats = ds.ModalFeatures(pt.train(task.targets, pcfg, ecfg).encoder)
            train, dev, num_labels = task.train, task.dev, task.num_classes
            evals = {"test": task.test, "test_oov": ds.oov_subset(task.test_oov, task.vocabulary)}
        else:
            if not s["checkpoint"]:
                raise UsageError("ablate needs --toy or --checkpoint with datasets")
            train, labels = _load_dataset(_need_file(s["train"], "train"), s["task"])
            dev = _load_dataset(_need_file(s["dev"], "dev"), s["task"], labels)[0] if s["dev"] else []
            test = _load_dataset(_need_file(s["test"], "test"), s["task"], labels)[0]
            feats = _features(s["checkpoint"], s["external_embeddings"])
            num_labels = len(labels)
            evals = {"test": test}
            vocab = _reference_vocab(s["reference_vocab"])
            if vocab is not None:
                evals["test_oov"] = ds.oov_subset(test, vocab)
        grids.append(ds.run_ablation(train, dev, evals, feats, cfg, num_labels))
        log.info("seed %d done", seed)

    splits = sorted({sp for g in grids for row in g.values() for sp in row})
    header = ["row", "inputs"] + [f"{sp}_{m}" for sp in splits for m in ("accuracy", "macro_f1")]
    table = ["\t".join(header)]
    csv_rows = []
    for row in ds.ABLATION_ROWS:
        cells = [str(row), ds.row_label(row)]
        for sp in splits:
            for m in ("accuracy", "macro_f1"):
                vals = [g[row][sp][m] for g in grids if sp in g[row]]
                mean = float(np.mean(vals))
                cells.append(f"{mean:.6f}")
                csv_rows.append((f"row{row}.{sp}", m, mean))
                for seed, v in zip(seeds, vals):
                    csv_rows.append((f"row{row}.{sp}.seed{seed}", m, v))
        table.append("\t".join(cells))
    for line in table:
        _out(line)
    (run / "ablation.tsv").write_text("\n".join(table) + "\n", "utf-8")
    ds.write_metrics_csv(csv_rows, run / "metrics.csv")
    freeze_settings({**s, "seeds": seeds}, run / "config.txt")


def cmd_toy(args) -> None:
    from phonoov import toydata

    s = merge_settings({**COMMON, **TOY_OPTS}, args)
    task = toydata.homophone_task(s["seed"], s["num_classes"], s["keywords_per_class"], s["num_fillers"],
                                  train_size=s["train_size"], eval_size=s["eval_size"], dim=s["dim"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = [f"c{i}" for i in range(task.num_classes)]
    pt.save_embeddings(task.targets, out / "embeddings.txt")
    for name in ("train", "dev", "test", "test_oov"):
        ds.write_classification(getattr(task, name), labels, out / f"{name}.tsv")
    (out / "vocab.txt").write_text("".join(w + "\n" for w in task.vocabulary), "utf-8")
    (out / "misspellings.tsv").write_text("".join(f"{a}\t{b}\n" for a, b in task.misspellings.items()), "utf-8")
    _out(f"wrote\t{out}")


COMMANDS: dict[str, Callable] = {
    "decompose": cmd_decompose,
    "g2p": cmd_g2p,
    "pretrain": cmd_pretrain,
    "embed": cmd_embed,
    "finetune": cmd_finetune,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
    "toy": cmd_toy,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    for stream in (sys.stdout, sys.stderr):
        if hasattr(stream, "reconfigure"):
            stream.reconfigure(encoding="utf-8")
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"phonoov: error: {e}", file=sys.stderr)
        return USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except (UsageError, ds.ConfigError) as e:
        code, msg = USAGE, str(e)
    except (nx.NonFiniteGradient, FloatingPointError) as e:
        code, msg = NUMERIC, str(e)
    except (DataError, OSError, ValueError, KeyError) as e:
        code, msg = DATA, str(e)
    else:
        return 0
    print(f"phonoov: error: {' '.join(msg.split())}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
