"""Mimick pre-training: fit interpolated encoder outputs to target word vectors.

The objective is an in-batch contrastive loss: for each word the positive
is its own target vector and the negatives are the other targets in the
mini-batch, scored by cosine (default) or dot product over a temperature.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from phonoov import numerics as nx
from phonoov.encoder import EncoderConfig, Modality, Representation, TwinEncoder
from phonoov.g2p import Transducer
from phonoov.seeding import sub_rng, sub_seed
from phonoov.tokenize import MorphemeVocab, build_morpheme_vocab, build_symbol_table

log = logging.getLogger(__name__)


class ParseError(ValueError):
    pass


class DimMismatch(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


@dataclass
class EmbeddingTable:
    words: list
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.words):
            raise DimMismatch(f"{len(self.words)} words but vectors of shape {self.vectors.shape}")
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate words in embedding table")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite target vectors")
        self.index = {w: i for i, w in enumerate(self.words)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors[self.index[word]]

    @classmethod
    def empty(cls, dim: int) -> "EmbeddingTable":
        return cls([], np.zeros((0, dim), np.float32))


def load_embeddings(path: str | Path, dim: Optional[int] = None) -> EmbeddingTable:
    """Read word2vec text format: a ``count dim`` header, then ``word v1 .. vd`` lines."""
    lines = Path(path).read_text("utf-8").splitlines()
    if not lines:
        raise ParseError(f"{path}:1: missing header")
    try:
        count, file_dim = (int(x) for x in lines[0].split())
    except ValueError:
        raise ParseError(f"{path}:1: header must be 'count dim'") from None
    if dim is not None and dim != file_dim:
        raise DimMismatch(f"{path}: file dimension {file_dim}, expected {dim}")
    body = [(n, line) for n, line in enumerate(lines[1:], 2) if line.strip()]
    if len(body) != count:
        raise ParseError(f"{path}:{len(lines)}: header announces {count} vectors, found {len(body)}")
    words, vectors = [], np.zeros((count, file_dim), np.float32)
    for i, (n, line) in enumerate(body):
        parts = line.rstrip().split(" ")
        if len(parts) != file_dim + 1:
            raise ParseError(f"{path}:{n}: expected {file_dim} values, got {len(parts) - 1}")
        words.append(parts[0])
        try:
            vectors[i] = [float(x) for x in parts[1:]]
        except ValueError:
            raise ParseError(f"{path}:{n}: non-numeric value") from None
    try:
        return EmbeddingTable(words, vectors)
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from None


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(table)} {table.dim}\n")
        for w, v in zip(table.words, table.vectors):
            f.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")


@dataclass
class PretrainConfig:
    temperature: float = 0.07
    batch_size: int = 32
    epochs: int = 10
    lr: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    score: str = "cosine"  # or "dot"
    morpheme_min_count: int = 2

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.score not in ("cosine", "dot"):
            raise ValueError("score must be 'cosine' or 'dot'")


def contrastive_loss(reps: nx.Tensor, targets: nx.Tensor | np.ndarray, temperature: float = 0.07,
                     score: str = "cosine") -> nx.Tensor:
    """Mean over rows of -log softmax_j(s(rep_i, target_j) / T)[i]."""
    if not isinstance(targets, nx.Tensor):
        targets = nx.Tensor(targets, dtype=reps.data.dtype)
    if reps.shape[0] == 0:
        raise EmptyBatch("contrastive loss needs at least one pair")
    if reps.ndim != 2 or reps.shape != targets.shape:
        raise nx.ShapeError("contrastive_loss", reps.shape, targets.shape)
    if score == "cosine":
        reps, targets = nx.l2_normalize(reps), nx.l2_normalize(targets)
    sims = nx.matmul(reps, nx.transpose(targets, (1, 0)))
    return nx.cross_entropy(nx.scale(sims, 1.0 / temperature), np.arange(reps.shape[0]))


@dataclass
class PretrainResult:
    encoder: TwinEncoder
    loss_log: list


def train(
    table: EmbeddingTable,
    config: PretrainConfig = PretrainConfig(),
    encoder_config: Optional[EncoderConfig] = None,
    vocab: Optional[MorphemeVocab] = None,
    transducer: Optional[Transducer] = None,
) -> PretrainResult:
    if len(table) == 0:
        raise ValueError("embedding table is empty")
    encoder_config = encoder_config or EncoderConfig(model_dim=table.dim)
    if encoder_config.model_dim != table.dim:
        raise DimMismatch(f"encoder dim {encoder_config.model_dim} != target dim {table.dim}")
    if vocab is None:
        vocab = build_morpheme_vocab(table.words, min_count=config.morpheme_min_count)
    symbols = build_symbol_table(table.words, vocab, transducer)
    enc = TwinEncoder(encoder_config, symbols, vocab, transducer, seed=sub_seed(config.seed, "encoder.init"))
    p_ids = [enc.phoneme_ids(w) for w in table.words]
    w_ids = [enc.word_ids(w) for w in table.words]

    opt = nx.AdamW(enc.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    order_rng = sub_rng(config.seed, "pretrain.shuffle")
    drop_rng = sub_rng(config.seed, "pretrain.dropout")
    loss_log = []
    n = len(table)
    for epoch in range(config.epochs):
        order = order_rng.permutation(n)
        batch_losses = []
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start: start + config.batch_size]
            rp = enc.forward("P", [p_ids[i] for i in idx], training=True, rng=drop_rng)
            rw = enc.forward("W", [w_ids[i] for i in idx], training=True, rng=drop_rng)
            reps = nx.add(nx.scale(rp, enc.lam), nx.scale(rw, 1 - enc.lam))
            loss = contrastive_loss(reps, table.vectors[idx], config.temperature, config.score)
            opt.zero_grad()
            loss.backward()
            try:
                opt.step()
            except nx.NonFiniteGradient as e:
                raise nx.NonFiniteGradient(f"epoch {epoch} batch {bi}: {e}") from e
            batch_losses.append(loss.item())
        loss_log.append(float(np.mean(batch_losses)))
        log.info("epoch %d mean loss %.6f", epoch + 1, loss_log[-1])
    return PretrainResult(enc, loss_log)


def embed_oov(words: Sequence[str], encoder: TwinEncoder) -> list[Representation]:
    if not words:
        return []
    _, _, mixed = encoder.encode_many(list(words))
    return [Representation(v, Modality.MIXED) for v in mixed]


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    b = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    return a @ b.T


def nearest_words(vectors: np.ndarray, table: EmbeddingTable, k: int = 1) -> list[list[str]]:
    sims = cosine_matrix(np.atleast_2d(vectors), table.vectors)
    top = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    return [[table.words[j] for j in row] for row in top]


def write_run(directory: str | Path, result: PretrainResult, config: PretrainConfig,
              rules_path: str | Path | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    result.encoder.save(directory, rules_path)
    (directory / "loss_log.tsv").write_text(
        "".join(f"{e}\t{loss:.9g}\n" for e, loss in enumerate(result.loss_log, 1)), "utf-8"
    )
    (directory / "pretrain_config.txt").write_text(
        "".join(f"{k}={v}\n" for k, v in asdict(config).items()), "utf-8"
    )


def retrieval_accuracy(encoder: TwinEncoder, table: EmbeddingTable) -> float:
    reps = np.stack([r.vector for r in embed_oov(table.words, encoder)])
    hits = [nn[0] == w for nn, w in zip(nearest_words(reps, table), table.words)]
    return sum(hits) / len(hits) if hits else math.nan
