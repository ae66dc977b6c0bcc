"""Downstream fine-tuning on frozen phoneme / word / mixed word representations.

One head G is trained on three views of each sentence: the phoneme
vectors p, the word vectors e and the interpolated vectors m.  The loss is
``a1*CE(G(p)) + a2*CE(G(e)) + a3*CE(G(m))`` and prediction averages the
logits: ``Z = b1*G(p) + b2*G(e) + b3*G(m)``.  Disabling a modality removes
its loss term and its logits; the remaining betas are renormalised.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from phonoov import numerics as nx
from phonoov.seeding import sub_rng, sub_seed

log = logging.getLogger(__name__)

MODALITIES = ("phoneme", "word", "mixed")

# input-representation rows of the ablation grid (phoneme, word, mixed)
ABLATION_ROWS = {
    1: (True, False, False),
    2: (False, True, False),
    3: (False, False, True),
    4: (True, True, False),
    5: (True, False, True),
    6: (False, True, True),
    7: (True, True, True),
}


class ConfigError(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class LabeledExample:
    """A sentence with a class id, or with one tag id per word (tagging)."""

    words: tuple
    label: object

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        if not self.words:
            raise ValueError("an example needs at least one word")
        if isinstance(self.label, (tuple, list)):
            object.__setattr__(self, "label", tuple(int(x) for x in self.label))
            if len(self.label) != len(self.words):
                raise ValueError("tagging example needs one tag per word")

    @property
    def is_tagging(self) -> bool:
        return isinstance(self.label, tuple)


@dataclass
class FinetuneConfig:
    alphas: tuple = (1.0, 1.0, 1.0)
    betas: tuple = (1 / 3, 1 / 3, 1 / 3)
    modality_mask: tuple = (True, True, True)
    head: str = "cnn"  # or "bilstm"
    epochs: int = 10
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 32
    seed: int = 0
    dropout: float = 0.5
    cnn_widths: tuple = (3, 4, 5)
    cnn_maps: int = 100
    lstm_hidden: int = 256

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        self.betas = tuple(float(b) for b in self.betas)
        self.modality_mask = tuple(bool(m) for m in self.modality_mask)
        self.cnn_widths = tuple(int(w) for w in self.cnn_widths)
        if len(self.alphas) != 3 or len(self.betas) != 3 or len(self.modality_mask) != 3:
            raise ConfigError("alphas, betas and modality_mask need three entries")
        if self.head not in ("cnn", "bilstm"):
            raise ConfigError(f"unknown head {self.head!r}")
        self.enabled()  # validates the mask

    def enabled(self) -> list[str]:
        names = [m for m, on in zip(MODALITIES, self.modality_mask) if on]
        if not names:
            raise ConfigError("at least one modality must be enabled")
        return names

    def effective_betas(self) -> dict:
        names = self.enabled()
        raw = {m: b for m, b, on in zip(MODALITIES, self.betas, self.modality_mask) if on}
        total = sum(raw.values())
        if total <= 0:
            raise ConfigError("betas of enabled modalities must have a positive sum")
        return {m: raw[m] / total for m in names}

    def alpha(self, modality: str) -> float:
        return self.alphas[MODALITIES.index(modality)]

    def with_row(self, row: int) -> "FinetuneConfig":
        c = copy.copy(self)
        c.modality_mask = ABLATION_ROWS[row]
        return c

    def to_text(self) -> str:
        out = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out.append(f"{k}={v}\n")
        return "".join(out)

    @classmethod
    def from_text(cls, text: str) -> "FinetuneConfig":
        kw = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(**coerce_config(kw))


def coerce_config(kw: dict) -> dict:
    """Turn key=value strings into FinetuneConfig field values."""
    defaults = FinetuneConfig()
    out = {}
    for k, v in kw.items():
        if not hasattr(defaults, k):
            raise ConfigError(f"unknown finetune setting {k!r}")
        d = getattr(defaults, k)
        if not isinstance(v, str):
            out[k] = v
        elif isinstance(d, tuple):
            items = [x for x in v.split(",") if x]
            if isinstance(d[0], bool):
                out[k] = tuple(x.strip().lower() in ("1", "true", "yes") for x in items)
            elif isinstance(d[0], int):
                out[k] = tuple(int(x) for x in items)
            else:
                out[k] = tuple(_number(x) for x in items)
        elif isinstance(d, bool):
            out[k] = v.strip().lower() in ("1", "true", "yes")
        elif isinstance(d, int):
            out[k] = int(v)
        elif isinstance(d, float):
            out[k] = _number(v)
        else:
            out[k] = v.strip()
    return out


def _number(s: str) -> float:
    s = s.strip()
    if "/" in s:
        a, b = s.split("/")
        return float(a) / float(b)
    return float(s)


# ---------------------------------------------------------------------------
# frozen input representations


class ModalFeatures:
    """Per-word (phoneme, word, mixed) vectors from a frozen encoder, cached.

    An external table, when attached, replaces the word vector of every word
    it covers; the phoneme and mixed vectors still come from the encoder.
    """

    def __init__(self, encoder, external=None):
        self.encoder = encoder
        self.external = external
        self.dim = encoder.config.model_dim
        self._cache: dict = {}

    def prepare(self, words: Sequence[str]) -> None:
        missing = sorted({w for w in words if w not in self._cache})
        if not missing:
            return
        p, e, m = self.encoder.encode_many(missing)
        for i, w in enumerate(missing):
            self._cache[w] = (p[i], e[i], m[i])

    def vectors(self, word: str) -> tuple:
        self.prepare([word])
        p, e, m = self._cache[word]
        if self.external is not None and word in self.external:
            e = self.external[word]
        return p, e, m

    def source(self, word: str) -> str:
        return "external" if self.external is not None and word in self.external else "encoder"

    def batch(self, examples: Sequence[LabeledExample], min_len: int = 1) -> tuple[dict, np.ndarray]:
        """Padded (B, T, d) arrays per modality, plus the sentence lengths."""
        self.prepare([w for ex in examples for w in ex.words])
        lengths = np.array([len(ex.words) for ex in examples])
        t = max(int(lengths.max()), min_len)
        out = {m: np.zeros((len(examples), t, self.dim), np.float32) for m in MODALITIES}
        for i, ex in enumerate(examples):
            for j, w in enumerate(ex.words):
                for m, vec in zip(MODALITIES, self.vectors(w)):
                    out[m][i, j] = vec
        return out, lengths


def attach_external_embeddings(features: ModalFeatures, table) -> ModalFeatures:
    if len(table) and table.dim != features.dim:
        from phonoov.pretrain import DimMismatch

        raise DimMismatch(f"external table dim {table.dim} != encoder dim {features.dim}")
    out = ModalFeatures(features.encoder, table if len(table) else None)
    out._cache = features._cache
    return out


# ---------------------------------------------------------------------------
# heads


class CNNHead:
    """Text CNN: parallel convolutions over time, max-over-time pooling, linear layer."""

    kind = "cnn"

    def __init__(self, dim: int, num_classes: int, widths=(3, 4, 5), maps: int = 100,
                 dropout: float = 0.5, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.widths = tuple(widths)
        self.dropout = dropout
        self.params = {}
        for k in self.widths:
            self.params[f"conv{k}.w"] = nx.xavier_uniform(rng, k * dim, maps)
            self.params[f"conv{k}.b"] = nx.parameter(np.zeros(maps))
        self.params["out.w"] = nx.xavier_uniform(rng, len(self.widths) * maps, num_classes)
        self.params["out.b"] = nx.parameter(np.zeros(num_classes))

    @property
    def min_len(self) -> int:
        return max(self.widths)

    def forward(self, x: nx.Tensor, lengths: np.ndarray, training: bool = False, rng=None) -> nx.Tensor:
        b, t, d = x.shape
        pooled = []
        for k in self.widths:
            n_win = t - k + 1
            idx = np.arange(n_win)[:, None] + np.arange(k)[None, :]
            win = nx.reshape(nx.take(x, idx, axis=1), (b, n_win, k * d))
            feat = nx.relu(nx.add(nx.matmul(win, self.params[f"conv{k}.w"]), self.params[f"conv{k}.b"]))
            valid = np.arange(n_win)[None, :] <= np.maximum(lengths - k, 0)[:, None]
            pooled.append(nx.max_pool(feat, valid))
        h = nx.dropout(nx.concat(pooled, axis=-1), self.dropout, rng, training)
        return nx.add(nx.matmul(h, self.params["out.w"]), self.params["out.b"])


class BiLSTMHead:
    """Single-layer bidirectional LSTM with a per-token linear projection."""

    kind = "bilstm"
    min_len = 1

    def __init__(self, dim: int, num_tags: int, hidden: int = 256, dropout: float = 0.5, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.dropout = dropout
        self.params = {}
        for side in ("fw", "bw"):
            self.params[f"{side}.wx"] = nx.xavier_uniform(rng, dim, 4 * hidden)
            self.params[f"{side}.wh"] = nx.xavier_uniform(rng, hidden, 4 * hidden)
            bias = np.zeros(4 * hidden)
            bias[hidden: 2 * hidden] = 1.0  # forget gate
            self.params[f"{side}.b"] = nx.parameter(bias)
        self.params["out.w"] = nx.xavier_uniform(rng, 2 * hidden, num_tags)
        self.params["out.b"] = nx.parameter(np.zeros(num_tags))

    def _run(self, x: nx.Tensor, mask: np.ndarray, side: str, reverse: bool) -> list:
        b, t, _ = x.shape
        hsz = self.hidden
        dtype = x.data.dtype
        gates_x = nx.add(nx.matmul(x, self.params[f"{side}.wx"]), self.params[f"{side}.b"])
        h = nx.Tensor(np.zeros((b, hsz), dtype), dtype=dtype)
        c = nx.Tensor(np.zeros((b, hsz), dtype), dtype=dtype)
        outs = [None] * t
        steps = range(t - 1, -1, -1) if reverse else range(t)
        for s in steps:
            g = nx.add(gates_x[:, s], nx.matmul(h, self.params[f"{side}.wh"]))
            i = nx.sigmoid(g[:, :hsz])
            f = nx.sigmoid(g[:, hsz: 2 * hsz])
            o = nx.sigmoid(g[:, 2 * hsz: 3 * hsz])
            cand = nx.tanh(g[:, 3 * hsz:])
            c_new = nx.add(nx.mul(f, c), nx.mul(i, cand))
            h_new = nx.mul(o, nx.tanh(c_new))
            keep = np.repeat(mask[:, s:s + 1], hsz, axis=1).astype(dtype)
            keep_t, drop_t = nx.Tensor(keep, dtype=dtype), nx.Tensor(1 - keep, dtype=dtype)
            c = nx.add(nx.mul(keep_t, c_new), nx.mul(drop_t, c))
            h = nx.add(nx.mul(keep_t, h_new), nx.mul(drop_t, h))
            outs[s] = h
        return outs

    def forward(self, x: nx.Tensor, lengths: np.ndarray, training: bool = False, rng=None) -> nx.Tensor:
        b, t, _ = x.shape
        mask = np.arange(t)[None, :] < lengths[:, None]
        fw = self._run(x, mask, "fw", reverse=False)
        bw = self._run(x, mask, "bw", reverse=True)
        h = nx.stack([nx.concat([f, r], axis=-1) for f, r in zip(fw, bw)], axis=1)
        h = nx.dropout(h, self.dropout, rng, training)
        return nx.add(nx.matmul(h, self.params["out.w"]), self.params["out.b"])


def build_head(config: FinetuneConfig, dim: int, num_labels: int):
    seed = sub_seed(config.seed, "finetune.head_init")
    if config.head == "cnn":
        return CNNHead(dim, num_labels, config.cnn_widths, config.cnn_maps, config.dropout, seed)
    return BiLSTMHead(dim, num_labels, config.lstm_hidden, config.dropout, seed)


def head_parameters(head) -> list:
    return list(head.params.values())


# ---------------------------------------------------------------------------
# losses and prediction


def _flat_targets(examples: Sequence[LabeledExample], t: int):
    """Flat indices of real tokens in a (B*T) layout, and their tag ids."""
    idx, tags = [], []
    for i, ex in enumerate(examples):
        for j, tag in enumerate(ex.label):
            idx.append(i * t + j)
            tags.append(tag)
    return np.array(idx), np.array(tags)


def modality_logits(head, inputs: np.ndarray, lengths: np.ndarray, training=False, rng=None) -> nx.Tensor:
    return head.forward(nx.Tensor(inputs), lengths, training, rng)


def cross_entropy_for(logits: nx.Tensor, examples: Sequence[LabeledExample]) -> nx.Tensor:
    if examples[0].is_tagging:
        b, t, c = logits.shape
        idx, tags = _flat_targets(examples, t)
        return nx.cross_entropy(nx.take(nx.reshape(logits, (b * t, c)), idx, axis=0), tags)
    return nx.cross_entropy(logits, [ex.label for ex in examples])


@dataclass
class LossBreakdown:
    total: nx.Tensor
    components: dict = field(default_factory=dict)  # modality -> float


def multimodal_loss(examples: Sequence[LabeledExample], head, features: ModalFeatures,
                    config: FinetuneConfig, training: bool = False, rng=None) -> LossBreakdown:
    enabled = config.enabled()
    inputs, lengths = features.batch(examples, head.min_len)
    total = None
    parts = {}
    for m in enabled:
        loss = cross_entropy_for(modality_logits(head, inputs[m], lengths, training, rng), examples)
        parts[m] = loss.item()
        term = nx.scale(loss, config.alpha(m))
        total = term if total is None else nx.add(total, term)
    return LossBreakdown(total, parts)


@dataclass
class PredictionScores:
    per_modality: dict  # modality -> logits array
    ensemble: np.ndarray


def combine_scores(scores: dict, config: FinetuneConfig) -> np.ndarray:
    betas = config.effective_betas()
    out = None
    for m, beta in betas.items():
        term = beta * np.asarray(scores[m], dtype=np.float64)
        out = term if out is None else out + term
    return out


def ensemble_predict(examples: Sequence[LabeledExample], head, features: ModalFeatures,
                     config: FinetuneConfig) -> tuple[PredictionScores, list]:
    """Ensemble logits and predicted labels (a list of tag lists for tagging)."""
    inputs, lengths = features.batch(examples, head.min_len)
    with nx.no_grad():
        scores = {m: modality_logits(head, inputs[m], lengths).data for m in config.enabled()}
    z = combine_scores(scores, config)
    argmax = z.argmax(axis=-1)
    if z.ndim == 3:
        preds = [tuple(int(x) for x in argmax[i, : lengths[i]]) for i in range(len(examples))]
    else:
        preds = [int(x) for x in argmax]
    return PredictionScores(scores, z), preds


# ---------------------------------------------------------------------------
# metrics


def macro_f1(gold: Sequence[int], pred: Sequence[int]) -> float:
    """Unweighted mean of per-class F1 over classes present in gold or predictions."""
    gold, pred = list(gold), list(pred)
    scores = []
    for c in sorted(set(gold) | set(pred)):
        tp = sum(g == c and p == c for g, p in zip(gold, pred))
        fp = sum(g != c and p == c for g, p in zip(gold, pred))
        fn = sum(g == c and p != c for g, p in zip(gold, pred))
        scores.append(2 * tp / (2 * tp + fp + fn))
    return sum(scores) / len(scores)


def score_predictions(examples: Sequence[LabeledExample], preds: Sequence) -> dict:
    if examples and examples[0].is_tagging:
        gold = [t for ex in examples for t in ex.label]
        flat = [t for p in preds for t in p]
    else:
        gold = [ex.label for ex in examples]
        flat = list(preds)
    acc = sum(g == p for g, p in zip(gold, flat)) / len(gold)
    return {"accuracy": acc, "macro_f1": macro_f1(gold, flat)}


def evaluate(examples: Sequence[LabeledExample], head, features: ModalFeatures,
             config: FinetuneConfig, batch_size: int = 256) -> dict:
    if not examples:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    preds = []
    for s in range(0, len(examples), batch_size):
        preds.extend(ensemble_predict(examples[s: s + batch_size], head, features, config)[1])
    return score_predictions(examples, preds)


def oov_subset(examples: Sequence[LabeledExample], reference_vocab) -> list:
    """Examples containing at least one word outside ``reference_vocab``."""
    vocab = set(reference_vocab)
    return [ex for ex in examples if any(w not in vocab for w in ex.words)]


# ---------------------------------------------------------------------------
# training


@dataclass
class FinetuneResult:
    head: object
    metric_log: list  # one dict per epoch
    best_epoch: int


def train_head(train: Sequence[LabeledExample], dev: Sequence[LabeledExample], features: ModalFeatures,
               config: FinetuneConfig, num_labels: int) -> FinetuneResult:
    """AdamW on the multimodal loss; keeps the parameters of the best dev epoch (macro-F1)."""
    if not train:
        raise EmptyDataset("no training examples")
    head = build_head(config, features.dim, num_labels)
    opt = nx.AdamW(head_parameters(head), lr=config.lr, weight_decay=config.weight_decay)
    order_rng = sub_rng(config.seed, "finetune.shuffle")
    drop_rng = sub_rng(config.seed, "finetune.dropout")
    features.prepare([w for ex in list(train) + list(dev) for w in ex.words])
    metric_log = []
    best, best_epoch, best_params = -np.inf, 0, None
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(len(train))
        losses = []
        for bi, s in enumerate(range(0, len(train), config.batch_size)):
            batch = [train[i] for i in order[s: s + config.batch_size]]
            out = multimodal_loss(batch, head, features, config, training=True, rng=drop_rng)
            opt.zero_grad()
            out.total.backward()
            try:
                opt.step()
            except nx.NonFiniteGradient as e:
                raise nx.NonFiniteGradient(f"epoch {epoch} batch {bi}: {e}; losses {out.components}") from e
            losses.append(out.total.item())
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if dev:
            dev_metrics = evaluate(dev, head, features, config)
            row.update({f"dev_{k}": v for k, v in dev_metrics.items()})
            score = dev_metrics["macro_f1"]
        else:
            score = -row["train_loss"]
        metric_log.append(row)
        log.info("epoch %d %s", epoch, row)
        if score > best:
            best, best_epoch = score, epoch
            best_params = {k: v.data.copy() for k, v in head.params.items()}
    for k, v in best_params.items():
        head.params[k].data = v
    return FinetuneResult(head, metric_log, best_epoch)


def save_head(head, config: FinetuneConfig, labels: Sequence[str], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nx.save_checkpoint(directory / "head.bin", {k: v.data for k, v in head.params.items()})
    (directory / "finetune_config.txt").write_text(config.to_text(), "utf-8")
    (directory / "labels.txt").write_text("".join(f"{x}\n" for x in labels), "utf-8")


def load_head(directory: str | Path, dim: int):
    directory = Path(directory)
    config = FinetuneConfig.from_text((directory / "finetune_config.txt").read_text("utf-8"))
    labels = (directory / "labels.txt").read_text("utf-8").splitlines()
    head = build_head(config, dim, len(labels))
    for k, arr in nx.load_checkpoint(directory / "head.bin").items():
        if head.params[k].shape != arr.shape:
            raise nx.ShapeError(f"load {k}", arr.shape, head.params[k].shape)
        head.params[k].data = arr
    return head, config, labels


# ---------------------------------------------------------------------------
# dataset files


def load_classification(path: str | Path, label_names: Optional[Sequence[str]] = None):
    """``label<TAB>text`` lines; returns (examples, label names)."""
    rows = []
    for n, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ValueError(f"{path}:{n}: expected 'label<TAB>text'")
        label, text = line.split("\t", 1)
        words = text.split()
        if not words:
            raise ValueError(f"{path}:{n}: empty text")
        rows.append((label.strip(), words))
    names = list(label_names) if label_names is not None else sorted({r[0] for r in rows})
    ids = {x: i for i, x in enumerate(names)}
    try:
        return [LabeledExample(tuple(w), ids[lab]) for lab, w in rows], names
    except KeyError as e:
        raise ValueError(f"{path}: unknown label {e.args[0]!r}") from None


def load_tagging(path: str | Path, label_names: Optional[Sequence[str]] = None):
    """``token<TAB>tag`` lines with blank lines between sentences."""
    sentences, cur = [], []
    for n, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            if cur:
                sentences.append(cur)
                cur = []
            continue
        if "\t" not in line:
            raise ValueError(f"{path}:{n}: expected 'token<TAB>tag'")
        tok, tag = line.split("\t", 1)
        cur.append((tok.strip(), tag.strip()))
    if cur:
        sentences.append(cur)
    names = list(label_names) if label_names is not None else sorted({t for s in sentences for _, t in s})
    ids = {x: i for i, x in enumerate(names)}
    try:
        return [LabeledExample(tuple(w for w, _ in s), tuple(ids[t] for _, t in s)) for s in sentences], names
    except KeyError as e:
        raise ValueError(f"{path}: unknown tag {e.args[0]!r}") from None


def write_classification(examples: Sequence[LabeledExample], labels: Sequence[str], path: str | Path) -> None:
    Path(path).write_text(
        "".join(f"{labels[ex.label]}\t{' '.join(ex.words)}\n" for ex in examples), "utf-8"
    )


def write_metrics_csv(rows: Sequence[tuple], path: str | Path) -> None:
    """``split,metric,value`` rows."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["split", "metric", "value"])
        for split, metric, value in rows:
            w.writerow([split, metric, f"{value:.6f}" if isinstance(value, float) else value])


def run_ablation(train: Sequence[LabeledExample], dev: Sequence[LabeledExample], eval_sets: dict,
                 features: ModalFeatures, config: FinetuneConfig, num_labels: int,
                 rows: Sequence[int] = tuple(ABLATION_ROWS)) -> dict:
    """Fine-tune one head per modality-mask row; returns {row: {split: metrics}}.

    Every row uses the same seed, so rows differ only in their inputs.
    """
    out = {}
    for row in rows:
        cfg = config.with_row(row)
        result = train_head(train, dev, features, cfg, num_labels)
        out[row] = {split: evaluate(ex, result.head, features, cfg) for split, ex in eval_sets.items() if ex}
    return out


def row_label(row: int) -> str:
    return "+".join(m for m, on in zip(MODALITIES, ABLATION_ROWS[row]) if on)
