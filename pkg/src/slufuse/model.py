"""The four joint intent/slot models and their loss.

=========  ====================  ===============  =============
variant    intent branch         slot branch      fusion
=========  ====================  ===============  =============
model1a    CNN -> dense (2D)     BiLSTM -> dense  broadcast+add
model1b    CNN -> dense (2D)     BiLSTM -> dense  broadcast+MLB
model2a    BiGRU -> drop -> dns  BiGRU -> dense   add
model2b    BiGRU -> drop -> dns  BiGRU -> dense   MLB
=========  ====================  ===============  =============

Model-1 slot head scores CRF emissions; Model-2 slot head is a softmax.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .datapipe import Batch, EmbeddingTable, LabelMaps, Vocabulary, random_embeddings
from .fusion import MlbParams, broadcast_intent, dense_add, mlb_fuse
from .layers import (CONV_WIDTHS, ConvEncoderParams, CrfParams, DenseParams, RnnParams, birnn,
                     conv_encoder, crf_nll, crf_viterbi, dense, dropout, embed_lookup)
from .numcore import ShapeError, Tensor

VARIANTS = ("model1a", "model1b", "model2a", "model2b")

# independent random streams derived from the run seed
STREAM_INIT, STREAM_SHUFFLE, STREAM_DROPOUT, STREAM_EMBED = range(4)


def rng_stream(seed: int, stream: int, counter: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, counter)))


@dataclass
class ModelConfig:
    variant: str = "model2b"
    embed_dim: int = 300
    max_len: int = 50
    hidden: int = 128
    feature_width: int = 128
    conv_widths: tuple[int, ...] = CONV_WIDTHS
    conv_filters: int = 128
    dropout: float = 0.5
    mlb_rank: int = 32
    mlb_out: int = 128
    branch_activation: str = "none"
    intent_loss_weight: float = 1.0
    slot_loss_weight: float = 1.0
    train_embeddings: bool = True
    embed_init_scale: float = 0.25
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    width: int = 32

    def __post_init__(self):
        self.conv_widths = tuple(int(w) for w in self.conv_widths)
        self.validate()

    @property
    def family(self) -> int:
        return 1 if self.variant.startswith("model1") else 2

    @property
    def fusion(self) -> str:
        return "mlb" if self.variant.endswith("b") else "dense_add"

    @property
    def fused_width(self) -> int:
        return self.mlb_out if self.fusion == "mlb" else self.feature_width

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.fusion == "mlb" and not self.mlb_rank < self.feature_width:
            raise ValueError(f"mlb_rank {self.mlb_rank} must be < feature width {self.feature_width}")
        if self.family == 1 and self.max_len < max(self.conv_widths):
            raise ValueError(f"max_len {self.max_len} shorter than widest filter")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.width not in (32, 64):
            raise ValueError("width must be 32 or 64")
        if self.patience < 0 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("patience >= 0, max_epochs >= 1, batch_size >= 1 required")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["conv_widths"] = list(self.conv_widths)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> ModelConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)


def _coerce(field_type: str, raw: str):
    raw = raw.strip()
    if field_type == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if field_type == "int":
        return int(raw)
    if field_type == "float":
        return float(raw)
    if field_type.startswith("tuple"):
        return tuple(int(x) for x in raw.replace(",", " ").split())
    return raw


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines (``#`` comments allowed) into typed values."""
    types = {f.name: str(f.type) for f in dataclasses.fields(ModelConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(types[key], value)
    return out


def load_config(path: str | Path, **overrides) -> ModelConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8"))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig(**values)


# ---------------------------------------------------------------------------


@dataclass
class Model:
    config: ModelConfig
    vocab: Vocabulary
    labels: LabelMaps
    embedding: Tensor
    intent_rnn: tuple[RnnParams, RnnParams] | None
    intent_conv: ConvEncoderParams | None
    intent_dense: DenseParams
    slot_rnn: tuple[RnnParams, RnnParams]
    slot_dense: DenseParams
    mlb: MlbParams | None
    intent_head: DenseParams
    slot_head: DenseParams
    crf: CrfParams | None
    _named: dict[str, Tensor] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        named = {"embedding": self.embedding}
        if self.intent_rnn is not None:
            named.update(self.intent_rnn[0].named("intent.fwd"))
            named.update(self.intent_rnn[1].named("intent.bwd"))
        if self.intent_conv is not None:
            named.update(self.intent_conv.named("intent.conv"))
        named.update(self.intent_dense.named("intent.dense"))
        named.update(self.slot_rnn[0].named("slot.fwd"))
        named.update(self.slot_rnn[1].named("slot.bwd"))
        named.update(self.slot_dense.named("slot.dense"))
        if self.mlb is not None:
            named.update(self.mlb.named("fusion"))
        named.update(self.intent_head.named("head.intent"))
        named.update(self.slot_head.named("head.slot"))
        if self.crf is not None:
            named.update(self.crf.named("crf"))
        for k, t in named.items():
            t.name = k
        self._named = named

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._named)

    def trainable(self) -> dict[str, Tensor]:
        params = self.parameters()
        if not self.config.train_embeddings:
            params.pop("embedding")
        return params


def build_model(cfg: ModelConfig, vocab: Vocabulary, labels: LabelMaps,
                embeddings: EmbeddingTable | None = None) -> Model:
    cfg.validate()
    with nc.precision(cfg.width):
        rng = rng_stream(cfg.seed, STREAM_INIT)
        if embeddings is None:
            embeddings = random_embeddings(vocab, rng_stream(cfg.seed, STREAM_EMBED),
                                           cfg.embed_dim, cfg.embed_init_scale)
        if embeddings.matrix.shape != (len(vocab), cfg.embed_dim):
            raise ShapeError(f"embedding table {embeddings.matrix.shape} vs vocab "
                             f"{len(vocab)} x {cfg.embed_dim}")
        emb = nc.parameter(embeddings.matrix)
        d, h, fw = cfg.embed_dim, cfg.hidden, cfg.feature_width
        k = labels.num_tags
        if cfg.family == 2:
            intent_rnn = (RnnParams.init(rng, "gru", d, h), RnnParams.init(rng, "gru", d, h))
            intent_conv = None
            intent_dense = DenseParams.init(rng, 2 * h, fw)
        else:
            intent_rnn = None
            intent_conv = ConvEncoderParams.init(rng, d, cfg.conv_filters, cfg.conv_widths)
            intent_dense = DenseParams.init(rng, cfg.conv_filters * len(cfg.conv_widths), fw)
        cell = "gru" if cfg.family == 2 else "lstm"
        slot_rnn = (RnnParams.init(rng, cell, d, h), RnnParams.init(rng, cell, d, h))
        slot_dense = DenseParams.init(rng, 2 * h, fw)
        mlb = MlbParams.init(rng, fw, fw, cfg.mlb_rank, cfg.mlb_out) if cfg.fusion == "mlb" else None
        lw = cfg.fused_width
        intent_head = DenseParams.init(rng, cfg.max_len * lw, labels.num_intents)
        slot_head = DenseParams.init(rng, lw, k)
        crf = CrfParams.init(k) if cfg.family == 1 else None
    return Model(cfg, vocab, labels, emb, intent_rnn, intent_conv, intent_dense, slot_rnn,
                 slot_dense, mlb, intent_head, slot_head, crf)


@dataclass
class ModelOutput:
    intent_logits: Tensor  # (B, intents)
    slot_scores: Tensor  # (B, L2, K): softmax logits (model2*) or CRF emissions (model1*)

    def intent_probs(self) -> np.ndarray:
        return nc.softmax(self.intent_logits, axis=-1).data

    def slot_probs(self) -> np.ndarray:
        return nc.softmax(self.slot_scores, axis=-1).data


def model_forward(model: Model, batch: Batch, mode: str = "infer",
                  rng: np.random.Generator | None = None) -> ModelOutput:
    cfg = model.config
    bsz, length = batch.token_ids.shape
    if length != cfg.max_len:
        raise ShapeError(f"batch width {length} != model max_len {cfg.max_len}")
    if mode == "train" and cfg.dropout > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    act = cfg.branch_activation
    emb = embed_lookup(batch.token_ids, model.embedding)
    if cfg.family == 2:
        intent = birnn(emb, *model.intent_rnn)
        intent = dropout(intent, cfg.dropout, mode, rng)
        intent = dense(intent, model.intent_dense, act)
    else:
        intent = dense(conv_encoder(emb, model.intent_conv), model.intent_dense, act)
        intent = broadcast_intent(intent, length)
    slot = dense(birnn(emb, *model.slot_rnn), model.slot_dense, act)
    fused = mlb_fuse(intent, slot, model.mlb) if model.mlb is not None else dense_add(intent, slot)
    flat = nc.reshape(fused, (bsz, length * fused.shape[-1]))
    return ModelOutput(dense(flat, model.intent_head), dense(fused, model.slot_head))


def joint_loss(outputs: ModelOutput, batch: Batch, model: Model) -> Tensor:
    """Intent cross-entropy plus the slot term (masked token CE or CRF NLL)."""
    cfg = model.config
    bsz = len(batch)
    if np.any(batch.lengths < 1):
        raise ValueError("batch holds an utterance with no tokens")
    if np.any(batch.intent_ids < 0):
        raise ValueError("batch holds intents outside the label map")
    logp = nc.log_softmax(outputs.intent_logits, axis=-1)
    intent_ce = nc.scale(nc.sum(nc.index(logp, (np.arange(bsz), batch.intent_ids))), -1.0 / bsz)
    lengths = np.minimum(batch.lengths, batch.token_ids.shape[1])
    if cfg.family == 1:
        slot = crf_nll(outputs.slot_scores, batch.tag_ids, lengths, model.crf)
    else:
        b_idx, t_idx = np.nonzero(batch.mask())
        logq = nc.log_softmax(outputs.slot_scores, axis=-1)
        picked = nc.index(logq, (b_idx, t_idx, batch.tag_ids[b_idx, t_idx]))
        slot = nc.scale(nc.sum(picked), -1.0 / len(b_idx))
    return nc.add(nc.scale(intent_ce, cfg.intent_loss_weight), nc.scale(slot, cfg.slot_loss_weight))


def decode(model: Model, outputs: ModelOutput, lengths: Sequence[int]
           ) -> tuple[np.ndarray, list[list[int]]]:
    """Intent argmax and per-utterance tag ids (Viterbi for model1*)."""
    intents = outputs.intent_logits.data.argmax(axis=-1)
    scores = outputs.slot_scores.data
    lengths = np.minimum(np.asarray(lengths), scores.shape[1])
    if model.crf is not None:
        tags = [crf_viterbi(scores[i], int(n), model.crf) for i, n in enumerate(lengths)]
    else:
        tags = [scores[i, :n].argmax(axis=-1).tolist() for i, n in enumerate(lengths)]
    return intents, tags
