"""Twin self-attention encoders for phoneme and word inputs, and their interpolation.

Both encoders map a symbol sequence to one ``model_dim`` vector:
shared symbol embeddings + learned positions, ``num_layers`` post-LN
transformer blocks, then masked mean pooling.  The phoneme encoder reads
IPA symbols; the word encoder reads jamo followed by morpheme pieces.
"""

from __future__ import annotations

import hashlib
import shutil
import warnings
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from phonoov import numerics as nx
from phonoov.g2p import PhonemeSequence, Transducer, default_transducer, load_rules, load_inventory
from phonoov.tokenize import MorphemeVocab, SymbolTable, build_mixed_input

PHONEME = "P"
WORD = "W"


class EmptyInput(ValueError):
    pass


class Modality(Enum):
    PHONEME = "phoneme"
    WORD = "word"
    MIXED = "mixed"


@dataclass(frozen=True)
class Representation:
    vector: np.ndarray
    modality: Modality

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("representation has non-finite entries")


@dataclass
class EncoderConfig:
    num_layers: int = 2
    model_dim: int = 300
    num_heads: int = 6
    ffn_dim: int = 600
    max_seq_len: int = 64
    dropout: float = 0.1
    mix_ratio: float = 0.1  # weight of the phoneme representation

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ValueError("mix_ratio must lie in [0, 1]")

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "EncoderConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if line.strip():
                k, v = line.split("=", 1)
                kw[k] = float(v) if types[k] in ("float", float) else int(v)
        return cls(**kw)


def mix(rp: Representation | np.ndarray, rw: Representation | np.ndarray, lam: float) -> Representation:
    """lam * phoneme + (1 - lam) * word, elementwise."""
    a = rp.vector if isinstance(rp, Representation) else np.asarray(rp)
    b = rw.vector if isinstance(rw, Representation) else np.asarray(rw)
    if a.shape != b.shape:
        raise nx.ShapeError("mix", a.shape, b.shape)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    if lam == 0.0:
        return Representation(b.copy(), Modality.MIXED)
    if lam == 1.0:
        return Representation(a.copy(), Modality.MIXED)
    return Representation(lam * a + (1 - lam) * b, Modality.MIXED)


def mix_tensors(rp: nx.Tensor, rw: nx.Tensor, lam: float) -> nx.Tensor:
    if rp.shape != rw.shape:
        raise nx.ShapeError("mix", rp.shape, rw.shape)
    return nx.add(nx.scale(rp, lam), nx.scale(rw, 1.0 - lam))


def pad_batch(id_lists: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(x) for x in id_lists)
    ids = np.zeros((len(id_lists), width), dtype=np.int64)
    for i, x in enumerate(id_lists):
        ids[i, : len(x)] = x
    return ids, ids != 0


class TwinEncoder:
    """Phoneme encoder and word encoder sharing one symbol-embedding table."""

    def __init__(
        self,
        config: EncoderConfig,
        symbols: SymbolTable,
        vocab: MorphemeVocab,
        transducer: Optional[Transducer] = None,
        seed: int = 0,
    ):
        self.config = config
        self.symbols = symbols
        self.vocab = vocab
        self.transducer = transducer or default_transducer()
        self.params = self._init_params(np.random.default_rng(seed))

    @property
    def lam(self) -> float:
        return self.config.mix_ratio

    def _init_params(self, rng: np.random.Generator) -> dict:
        c = self.config
        d = c.model_dim
        p = {"symbol_embeddings": nx.parameter(rng.normal(0, d ** -0.5, size=(len(self.symbols), d)))}
        for side in (PHONEME, WORD):
            p[f"{side}.positions"] = nx.parameter(rng.normal(0, 0.02, size=(c.max_seq_len, d)))
            for i in range(c.num_layers):
                pre = f"{side}.layer{i}."
                for name in ("wq", "wk", "wv", "wo"):
                    p[pre + name] = nx.xavier_uniform(rng, d, d)
                    p[pre + "b" + name[1]] = nx.parameter(np.zeros(d))
                p[pre + "ffn1"] = nx.xavier_uniform(rng, d, c.ffn_dim)
                p[pre + "ffn1_b"] = nx.parameter(np.zeros(c.ffn_dim))
                p[pre + "ffn2"] = nx.xavier_uniform(rng, c.ffn_dim, d)
                p[pre + "ffn2_b"] = nx.parameter(np.zeros(d))
                for ln in ("ln1", "ln2"):
                    p[pre + ln + "_g"] = nx.parameter(np.ones(d))
                    p[pre + ln + "_b"] = nx.parameter(np.zeros(d))
        for name, t in p.items():
            t.name = name
        return p

    def parameters(self) -> list:
        return list(self.params.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    # ---- inputs

    def _clip(self, ids: list[int], what: str) -> list[int]:
        if not ids:
            raise EmptyInput(f"empty {what} sequence")
        if len(ids) > self.config.max_seq_len:
            warnings.warn(f"{what} sequence of length {len(ids)} truncated to {self.config.max_seq_len}")
            ids = ids[: self.config.max_seq_len]
        return ids

    def phoneme_ids(self, p_w: PhonemeSequence | Sequence[str] | str) -> list[int]:
        if isinstance(p_w, str):
            p_w = self.transducer.to_ipa(p_w)
        return self._clip(self.symbols.encode(list(p_w)), "phoneme")

    def word_ids(self, word: str) -> list[int]:
        return self._clip(self.symbols.encode(build_mixed_input(word, self.vocab).tokens), "word")

    # ---- forward

    def forward(self, side: str, id_lists: Sequence[Sequence[int]], training: bool = False,
                rng: Optional[np.random.Generator] = None) -> nx.Tensor:
        """Encode a batch of id sequences with one side; returns (B, model_dim)."""
        c = self.config
        p = self.params
        ids, mask = pad_batch(id_lists)
        b, t = ids.shape
        drop = c.dropout if training else 0.0
        h = nx.add(nx.embedding_lookup(p["symbol_embeddings"], ids), p[f"{side}.positions"][:t])
        h = nx.dropout(h, drop, rng, training)
        heads, dh = c.num_heads, c.model_dim // c.num_heads
        attn_mask = mask[:, None, None, :]
        for i in range(c.num_layers):
            pre = f"{side}.layer{i}."

            def proj(x, name):
                return nx.add(nx.matmul(x, p[pre + "w" + name]), p[pre + "b" + name])

            q = nx.transpose(nx.reshape(proj(h, "q"), (b, t, heads, dh)), (0, 2, 1, 3))
            k = nx.transpose(nx.reshape(proj(h, "k"), (b, t, heads, dh)), (0, 2, 3, 1))
            v = nx.transpose(nx.reshape(proj(h, "v"), (b, t, heads, dh)), (0, 2, 1, 3))
            att = nx.softmax(nx.scale(nx.matmul(q, k), dh ** -0.5), axis=-1, mask=attn_mask)
            ctx = nx.reshape(nx.transpose(nx.matmul(att, v), (0, 2, 1, 3)), (b, t, c.model_dim))
            ctx = nx.dropout(proj(ctx, "o"), drop, rng, training)
            h = nx.layer_norm(nx.add(h, ctx), p[pre + "ln1_g"], p[pre + "ln1_b"])
            ff = nx.relu(nx.add(nx.matmul(h, p[pre + "ffn1"]), p[pre + "ffn1_b"]))
            ff = nx.dropout(nx.add(nx.matmul(ff, p[pre + "ffn2"]), p[pre + "ffn2_b"]), drop, rng, training)
            h = nx.layer_norm(nx.add(h, ff), p[pre + "ln2_g"], p[pre + "ln2_b"])
        return nx.mean_pool(h, mask)

    def forward_mixed(self, words: Sequence[str], training: bool = False,
                      rng: Optional[np.random.Generator] = None):
        """Return (phoneme, word, mixed) batch tensors for ``words``."""
        rp = self.forward(PHONEME, [self.phoneme_ids(w) for w in words], training, rng)
        rw = self.forward(WORD, [self.word_ids(w) for w in words], training, rng)
        return rp, rw, mix_tensors(rp, rw, self.lam)

    # ---- inference helpers

    def encode_phonemes(self, p_w: PhonemeSequence | Sequence[str] | str) -> Representation:
        with nx.no_grad():
            out = self.forward(PHONEME, [self.phoneme_ids(p_w)])
        return Representation(out.data[0].copy(), Modality.PHONEME)

    def encode_word(self, word: str) -> Representation:
        with nx.no_grad():
            out = self.forward(WORD, [self.word_ids(word)])
        return Representation(out.data[0].copy(), Modality.WORD)

    def encode(self, word: str) -> Representation:
        return mix(self.encode_phonemes(word), self.encode_word(word), self.lam)

    def encode_many(self, words: Sequence[str], batch_size: int = 256) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Phoneme, word and mixed matrices (len(words), d) in inference mode."""
        d = self.config.model_dim
        ps, ws = np.zeros((len(words), d), np.float32), np.zeros((len(words), d), np.float32)
        with nx.no_grad():
            for s in range(0, len(words), batch_size):
                chunk = words[s: s + batch_size]
                ps[s: s + len(chunk)] = self.forward(PHONEME, [self.phoneme_ids(w) for w in chunk]).data
                ws[s: s + len(chunk)] = self.forward(WORD, [self.word_ids(w) for w in chunk]).data
        return ps, ws, self.lam * ps + (1 - self.lam) * ws

    # ---- persistence

    def save(self, directory: str | Path, rules_path: str | Path | None = None) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        nx.save_checkpoint(directory / "encoder.bin", {k: v.data for k, v in self.params.items()})
        (directory / "encoder_config.txt").write_text(self.config.to_text(), "utf-8")
        self.symbols.save(directory / "symbols.tsv")
        self.vocab.save(directory / "morphemes.txt")
        if rules_path is not None:
            shutil.copyfile(rules_path, directory / "g2p_rules.txt")

    @classmethod
    def load(cls, directory: str | Path) -> "TwinEncoder":
        directory = Path(directory)
        config = EncoderConfig.from_text((directory / "encoder_config.txt").read_text("utf-8"))
        symbols = SymbolTable.load(directory / "symbols.tsv")
        vocab = MorphemeVocab.load(directory / "morphemes.txt")
        rules = directory / "g2p_rules.txt"
        transducer = Transducer(load_rules(rules), load_inventory()) if rules.exists() else None
        enc = cls(config, symbols, vocab, transducer)
        arrays = nx.load_checkpoint(directory / "encoder.bin")
        if set(arrays) != set(enc.params):
            raise ValueError(f"{directory}: checkpoint parameters do not match the config")
        for name, arr in arrays.items():
            if arr.shape != enc.params[name].shape:
                raise nx.ShapeError(f"load {name}", arr.shape, enc.params[name].shape)
            enc.params[name].data = arr.astype(nx.default_dtype())
        return enc
