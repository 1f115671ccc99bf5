"""The three gender-classifier architectures over the tensor core.

Variants: "cnn" (word embeddings only), "cnn_char" (word + per-token char
summary), "cnn_char_pos" (word + char + POS).  Per token the active feature
sources are concatenated, then Kim-style parallel convolutions (one per
filter width, same padding) + ReLU + masked max-over-time produce a document
vector, followed by dense, batch norm, ReLU, dropout, and a 2-way softmax
output.  Labels: female = 0, male = 1.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, ShapeError, TrainingError
from .ioutil import atomic_open
from .tensor import (
    Adam,
    BatchNormState,
    Tensor,
    add,
    batch_norm,
    concat,
    conv1d,
    dense,
    dropout,
    embedding_lookup,
    l2_penalty,
    max_over_time,
    mul_const,
    relu,
    reshape,
    softmax_xent,
)

VARIANTS = ("cnn", "cnn_char", "cnn_char_pos")

CHECKPOINT_MAGIC = b"GFUS"
CHECKPOINT_VERSION = 1


@dataclass
class ArchConfig:
    """Architecture and training hyperparameters.

    Defaults are the reference operating point; word_filters_per_width is
    read as filters per width (set filters_are_total for the split reading).
    """

    variant: str = "cnn_char_pos"
    word_dim: int = 200
    char_dim: int = 50
    pos_dim: int = 10
    char_filters: int = 50
    char_filter_width: int = 3
    word_filter_widths: tuple = (1, 2, 3)
    word_filters_per_width: int = 2048
    filters_are_total: bool = False
    dense_units: int = 256
    dropout: float = 0.2
    l2: float = 1e-5
    lr: float = 0.001
    batch_size: int = 64
    classes: int = 2
    freeze_word_emb: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.word_filter_widths = tuple(int(w) for w in self.word_filter_widths)
        for name in ("word_dim", "char_dim", "pos_dim", "char_filters",
                     "char_filter_width", "word_filters_per_width", "dense_units",
                     "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.l2 < 0 or self.lr <= 0:
            raise ConfigError(f"bad l2/lr: {self.l2}/{self.lr}")
        if not self.word_filter_widths or any(w <= 0 for w in self.word_filter_widths):
            raise ConfigError(f"bad filter widths {self.word_filter_widths}")
        if list(self.word_filter_widths) != sorted(self.word_filter_widths):
            raise ConfigError(f"filter widths must be ascending, got {self.word_filter_widths}")
        if self.classes != 2:
            raise ConfigError("only binary classification is supported")

    @property
    def uses_chars(self) -> bool:
        return self.variant in ("cnn_char", "cnn_char_pos")

    @property
    def uses_pos(self) -> bool:
        return self.variant == "cnn_char_pos"

    @property
    def fused_dim(self) -> int:
        return (self.word_dim
                + (self.char_filters if self.uses_chars else 0)
                + (self.pos_dim if self.uses_pos else 0))

    def filters_for_width(self) -> int:
        if self.filters_are_total:
            return max(1, self.word_filters_per_width // len(self.word_filter_widths))
        return self.word_filters_per_width

    @property
    def pooled_dim(self) -> int:
        return self.filters_for_width() * len(self.word_filter_widths)

    def to_json(self) -> dict:
        d = asdict(self)
        d["word_filter_widths"] = list(self.word_filter_widths)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ArchConfig":
        obj = dict(obj)
        obj["word_filter_widths"] = tuple(obj["word_filter_widths"])
        return cls(**obj)


@dataclass
class ModelParams:
    arch: ArchConfig
    fingerprint: str
    tensors: dict  # name -> Tensor, all requires_grad
    bn_state: BatchNormState

    @property
    def dtype(self):
        return self.tensors["word_emb"].data.dtype

    def trainable(self) -> dict:
        if self.arch.freeze_word_emb:
            return {k: v for k, v in self.tensors.items() if k != "word_emb"}
        return dict(self.tensors)

    def regularized(self) -> list:
        """Conv filters and dense weights only; no biases, embeddings, or BN."""
        names = [n for n in self.tensors
                 if n in ("dense_w", "out_w", "char_conv_w") or n.startswith("word_conv_w")]
        return [self.tensors[n] for n in sorted(names)]

    def zero_pad_rows(self) -> None:
        for name in ("word_emb", "char_emb", "pos_emb"):
            if name in self.tensors:
                self.tensors[name].data[0] = 0


def read_embeddings(path) -> dict:
    """Parse a whitespace-separated text embedding file (token then reals)."""
    vectors: dict = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise ShapeError(
                    f"{path}, line {lineno}: {len(values)} values, expected {dim}")
            vectors[token] = np.asarray(values, dtype=np.float64)
    return vectors


def init_params(arch: ArchConfig, vocab, pretrained: dict | None = None,
                seed: int = 0, dtype=np.float32) -> ModelParams:
    """Seeded parameter initialization; uniform [-0.05, 0.05], PAD rows zero."""
    rng = np.random.default_rng(seed)

    def uniform(*shape):
        return Tensor(rng.uniform(-0.05, 0.05, size=shape).astype(dtype), requires_grad=True)

    tensors = {}
    word = rng.uniform(-0.05, 0.05, size=(vocab.n_words, arch.word_dim))
    if pretrained:
        for token, idx in vocab.words.items():
            vec = pretrained.get(token)
            if vec is None:
                continue
            if vec.shape != (arch.word_dim,):
                raise ShapeError(
                    f"pretrained vector for {token!r} has dimension {vec.shape[0]}, "
                    f"expected {arch.word_dim}")
            word[idx] = vec
    tensors["word_emb"] = Tensor(word.astype(dtype), requires_grad=True)
    if arch.uses_chars:
        tensors["char_emb"] = uniform(vocab.n_chars, arch.char_dim)
        tensors["char_conv_w"] = uniform(arch.char_filter_width, arch.char_dim, arch.char_filters)
        tensors["char_conv_b"] = Tensor(np.zeros(arch.char_filters, dtype=dtype), requires_grad=True)
    if arch.uses_pos:
        tensors["pos_emb"] = uniform(vocab.n_tags, arch.pos_dim)
    per_width = arch.filters_for_width()
    for w in arch.word_filter_widths:
        tensors[f"word_conv_w{w}"] = uniform(w, arch.fused_dim, per_width)
        tensors[f"word_conv_b{w}"] = Tensor(np.zeros(per_width, dtype=dtype), requires_grad=True)
    tensors["dense_w"] = uniform(arch.pooled_dim, arch.dense_units)
    tensors["dense_b"] = Tensor(np.zeros(arch.dense_units, dtype=dtype), requires_grad=True)
    tensors["bn_gamma"] = Tensor(np.ones(arch.dense_units, dtype=dtype), requires_grad=True)
    tensors["bn_beta"] = Tensor(np.zeros(arch.dense_units, dtype=dtype), requires_grad=True)
    tensors["out_w"] = uniform(arch.dense_units, arch.classes)
    tensors["out_b"] = Tensor(np.zeros(arch.classes, dtype=dtype), requires_grad=True)

    params = ModelParams(arch=arch, fingerprint=vocab.fingerprint(), tensors=tensors,
                         bn_state=BatchNormState.fresh(arch.dense_units, dtype=dtype))
    params.zero_pad_rows()
    return params


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    word_ids: np.ndarray   # (B, T) int64, PAD = 0
    pos_ids: np.ndarray    # (B, T)
    char_ids: np.ndarray   # (B, T, C)
    char_lens: np.ndarray  # (B, T), clamped to >= 1
    doc_lens: np.ndarray   # (B,)
    labels: np.ndarray | None
    fingerprint: str

    @property
    def size(self) -> int:
        return self.word_ids.shape[0]


def make_batch(docs, vocab, labels=None) -> Batch:
    """Pad a list of TokenizedDocs to common token/char lengths."""
    if not docs:
        raise ShapeError("make_batch: empty document list")
    b = len(docs)
    t_max = max(len(d.tokens) for d in docs)
    c_max = max((len(tok.chars) for d in docs for tok in d.tokens), default=1)
    c_max = max(c_max, 1)
    word_ids = np.zeros((b, t_max), dtype=np.int64)
    pos_ids = np.zeros((b, t_max), dtype=np.int64)
    char_ids = np.zeros((b, t_max, c_max), dtype=np.int64)
    char_lens = np.ones((b, t_max), dtype=np.int64)
    doc_lens = np.zeros(b, dtype=np.int64)
    for r, doc in enumerate(docs):
        doc_lens[r] = len(doc.tokens)
        for t, tok in enumerate(doc.tokens):
            word_ids[r, t] = vocab.word_id(tok.surface)
            pos_ids[r, t] = tok.pos
            char_ids[r, t, :len(tok.chars)] = tok.chars
            char_lens[r, t] = max(1, len(tok.chars))
    return Batch(word_ids=word_ids, pos_ids=pos_ids, char_ids=char_ids,
                 char_lens=char_lens, doc_lens=doc_lens,
                 labels=None if labels is None else np.asarray(labels, dtype=np.int64),
                 fingerprint=vocab.fingerprint())


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def char_layer(params: ModelParams, char_ids) -> Tensor:
    """Character summary of a single token: conv (same) + ReLU + max pool."""
    ids = np.asarray(char_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ShapeError(f"char_layer: need a non-empty 1-d id sequence, got shape {ids.shape}")
    emb = embedding_lookup(params.tensors["char_emb"], ids)
    conv = conv1d(emb, params.tensors["char_conv_w"], params.tensors["char_conv_b"],
                  padding="same")
    return max_over_time(relu(conv), ids.size)


def _char_summaries(params: ModelParams, batch: Batch) -> Tensor:
    b, t, c = batch.char_ids.shape
    emb = embedding_lookup(params.tensors["char_emb"], batch.char_ids.reshape(b * t, c))
    conv = conv1d(emb, params.tensors["char_conv_w"], params.tensors["char_conv_b"],
                  padding="same")
    pooled = max_over_time(relu(conv), batch.char_lens.reshape(b * t))
    return reshape(pooled, (b, t, params.arch.char_filters))


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: ModelParams, batch: Batch, mode: str = "eval",
            rng: np.random.Generator | None = None):
    """Run the network; returns (logits Tensor, probability ndarray)."""
    if batch.fingerprint != params.fingerprint:
        raise CheckpointError(
            f"batch vocab fingerprint {batch.fingerprint} does not match "
            f"model fingerprint {params.fingerprint}")
    arch = params.arch
    parts = [embedding_lookup(params.tensors["word_emb"], batch.word_ids)]
    if arch.uses_chars:
        parts.append(_char_summaries(params, batch))
    if arch.uses_pos:
        parts.append(embedding_lookup(params.tensors["pos_emb"], batch.pos_ids))
    fused = concat(parts, axis=-1) if len(parts) > 1 else parts[0]
    # zero padded token positions so batch padding cannot leak into the conv
    t_max = batch.word_ids.shape[1]
    mask = (np.arange(t_max)[None, :] < batch.doc_lens[:, None])
    fused = mul_const(fused, mask[:, :, None].astype(params.dtype))
    pooled = []
    for w in arch.word_filter_widths:
        conv = conv1d(fused, params.tensors[f"word_conv_w{w}"],
                      params.tensors[f"word_conv_b{w}"], padding="same")
        pooled.append(max_over_time(relu(conv), batch.doc_lens))
    doc_vec = concat(pooled, axis=-1) if len(pooled) > 1 else pooled[0]
    h = dense(doc_vec, params.tensors["dense_w"], params.tensors["dense_b"])
    h = relu(batch_norm(h, params.tensors["bn_gamma"], params.tensors["bn_beta"],
                        params.bn_state, mode=mode))
    if mode == "train" and arch.dropout > 0:
        h = dropout(h, arch.dropout, mode="train", rng=rng)
    logits = dense(h, params.tensors["out_w"], params.tensors["out_b"])
    return logits, _softmax_np(logits.data)


def train_step(params: ModelParams, batch: Batch, opt: Adam,
               rng: np.random.Generator) -> float:
    """One forward/backward/update pass; returns the scalar loss."""
    if batch.labels is None:
        raise TrainingError("train_step needs a labeled batch")
    opt.zero_grad()
    logits, _ = forward(params, batch, mode="train", rng=rng)
    xent, _ = softmax_xent(logits, batch.labels)
    loss = add(xent, l2_penalty(params.regularized(), params.arch.l2))
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingError(
            f"non-finite loss {value} (lr={params.arch.lr}, l2={params.arch.l2}, "
            f"batch={batch.size}); aborting")
    loss.backward()
    opt.step()
    params.zero_pad_rows()
    return value


def predict_probs(params: ModelParams, docs, vocab, batch_size: int | None = None) -> np.ndarray:
    """Eval-mode class probabilities for a list of docs, chunked into batches."""
    bs = batch_size or params.arch.batch_size
    out = []
    for lo in range(0, len(docs), bs):
        batch = make_batch(docs[lo:lo + bs], vocab)
        out.append(forward(params, batch, mode="eval")[1])
    return np.concatenate(out, axis=0) if out else np.zeros((0, 2))


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

def save_params(params: ModelParams, path) -> None:
    """Binary checkpoint: magic, u32 version, JSON header, raw LE payload."""
    dtype = np.dtype(params.dtype).newbyteorder("<")
    entries = []
    blobs = []
    offset = 0
    named = dict(params.tensors)
    stats = {"bn_running_mean": params.bn_state.mean, "bn_running_var": params.bn_state.var}
    for name in sorted(named) + sorted(stats):
        arr = named[name].data if name in named else stats[name]
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "arch": params.arch.to_json(),
        "fingerprint": params.fingerprint,
        "dtype": dtype.str,
        "tensors": entries,
    }, sort_keys=True).encode("utf-8")
    with atomic_open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_params(path, expect_fingerprint: str | None = None,
                expect_arch: ArchConfig | None = None) -> ModelParams:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    hlen, = struct.unpack_from("<I", blob, 8)
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    arch = ArchConfig.from_json(header["arch"])
    if expect_arch is not None and expect_arch != arch:
        raise CheckpointError(
            f"{path}: checkpoint is {arch.variant!r} with different settings; "
            f"expected {expect_arch.variant!r}")
    if expect_fingerprint is not None and header["fingerprint"] != expect_fingerprint:
        raise CheckpointError(
            f"{path}: vocab fingerprint {header['fingerprint']} does not match "
            f"expected {expect_fingerprint}")
    dtype = np.dtype(header["dtype"])
    payload = blob[12 + hlen:]
    arrays = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    mean = arrays.pop("bn_running_mean")
    var = arrays.pop("bn_running_var")
    tensors = {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
    return ModelParams(arch=arch, fingerprint=header["fingerprint"], tensors=tensors,
                       bn_state=BatchNormState(mean=mean, var=var))
