"""Corpus loading, vocabularies, IOB chunking, embeddings and batch encoding.

Corpora use the three-file layout ``<root>/{train,valid,test}/{seq.in,seq.out,label}``
with one utterance per line.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
PAD_TAG = "<pad-tag>"
EMBED_DIM = 300

_TAG_RE = re.compile(r"^(O|[BI]-\S+)$")


class DataError(ValueError):
    """Malformed corpus or embedding file."""


@dataclass(frozen=True)
class TaggedUtterance:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    intent: str

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise DataError(
                f"{len(self.tokens)} tokens but {len(self.tags)} tags: {' '.join(self.tokens)!r}")
        for t in self.tags:
            if not _TAG_RE.match(t):
                raise DataError(f"malformed IOB tag {t!r}")


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DataError(f"missing corpus file {path}")
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def load_split(split_dir: str | Path) -> list[TaggedUtterance]:
    split_dir = Path(split_dir)
    seq_in = _read_lines(split_dir / "seq.in")
    seq_out = _read_lines(split_dir / "seq.out")
    labels = _read_lines(split_dir / "label")
    if not len(seq_in) == len(seq_out) == len(labels):
        raise DataError(
            f"{split_dir}: line counts differ (seq.in={len(seq_in)}, "
            f"seq.out={len(seq_out)}, label={len(labels)})")
    utts = []
    for lineno, (words, tags, intent) in enumerate(zip(seq_in, seq_out, labels), 1):
        tokens, tagseq = words.split(), tags.split()
        if not tokens:
            raise DataError(f"{split_dir}/seq.in line {lineno}: empty utterance")
        if len(tokens) != len(tagseq):
            raise DataError(
                f"{split_dir} line {lineno}: {len(tokens)} tokens vs {len(tagseq)} tags")
        try:
            utts.append(TaggedUtterance(tuple(tokens), tuple(tagseq), intent.strip()))
        except DataError as exc:
            raise DataError(f"{split_dir}/seq.out line {lineno}: {exc}") from None
    return utts


def load_dataset(root: str | Path) -> dict[str, list[TaggedUtterance]]:
    root = Path(root)
    return {split: load_split(root / split) for split in SPLITS}


# ---------------------------------------------------------------------------
# vocabularies


@dataclass
class Vocabulary:
    itos: list[str] = field(default_factory=lambda: [PAD, UNK])
    stoi: dict[str, int] = field(default_factory=lambda: {PAD: PAD_ID, UNK: UNK_ID})

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return idx

    def lookup(self, token: str) -> int:
        return self.stoi.get(token.lower(), UNK_ID)

    def __len__(self) -> int:
        return len(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> Vocabulary:
        if list(itos[:2]) != [PAD, UNK]:
            raise DataError("vocabulary must start with PAD and UNK")
        return cls(list(itos), {w: i for i, w in enumerate(itos)})


@dataclass
class LabelMaps:
    """Intent and slot-tag id maps.

    Real slot tags get ids ``0..K-1``; the padding tag is always id ``K`` so
    that model heads only score real tags.
    """

    intents: list[str]
    tags: list[str]

    def __post_init__(self):
        self.intent_to_id = {s: i for i, s in enumerate(self.intents)}
        self.tag_to_id = {s: i for i, s in enumerate(self.tags)}
        self.tag_to_id[PAD_TAG] = len(self.tags)

    @property
    def num_intents(self) -> int:
        return len(self.intents)

    @property
    def num_tags(self) -> int:
        return len(self.tags)

    @property
    def pad_tag_id(self) -> int:
        return len(self.tags)

    def to_json(self) -> dict:
        return {"intents": list(self.intents), "tags": list(self.tags)}

    @classmethod
    def from_json(cls, obj: dict) -> LabelMaps:
        return cls(list(obj["intents"]), list(obj["tags"]))


def build_vocab(train: Sequence[TaggedUtterance]) -> tuple[Vocabulary, LabelMaps]:
    if not train:
        raise DataError("cannot build a vocabulary from an empty training split")
    vocab = Vocabulary()
    intents: dict[str, None] = {}
    tags: dict[str, None] = {}
    for u in train:
        for tok in u.tokens:
            vocab.add(tok.lower())
        for t in u.tags:
            tags.setdefault(t)
        intents.setdefault(u.intent)
    return vocab, LabelMaps(list(intents), list(tags))


# ---------------------------------------------------------------------------
# IOB


class ChunkSpan(NamedTuple):
    label: str
    start: int
    end: int  # exclusive


def _split_tag(tag: str) -> tuple[str, str]:
    if tag == "O":
        return "O", ""
    if not _TAG_RE.match(tag):
        raise DataError(f"malformed IOB tag {tag!r}")
    return tag[0], tag[2:]


def parse_iob(tags: Sequence[str], stats: dict | None = None) -> list[ChunkSpan]:
    """Extract maximal chunks.

    A stray ``I-x`` that follows ``O`` or a different label opens a new chunk,
    as if it were ``B-x``; ``stats["repairs"]`` counts these when given.
    """
    chunks: list[ChunkSpan] = []
    label, start = None, 0
    for i, tag in enumerate(tags):
        prefix, name = _split_tag(tag)
        if prefix == "I" and label == name:
            continue
        if label is not None:
            chunks.append(ChunkSpan(label, start, i))
            label = None
        if prefix == "O":
            continue
        if prefix == "I" and stats is not None:
            stats["repairs"] = stats.get("repairs", 0) + 1
        label, start = name, i
    if label is not None:
        chunks.append(ChunkSpan(label, start, len(tags)))
    return chunks


def chunks_to_tags(chunks: Iterable[ChunkSpan], length: int) -> list[str]:
    tags = ["O"] * length
    for c in chunks:
        tags[c.start] = f"B-{c.label}"
        for i in range(c.start + 1, c.end):
            tags[i] = f"I-{c.label}"
    return tags


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    matrix: np.ndarray  # (vocab, EMBED_DIM)
    pretrained: np.ndarray  # bool per row

    @property
    def matched(self) -> int:
        return int(self.pretrained.sum())

    @property
    def random_init(self) -> int:
        return int(len(self.pretrained) - self.pretrained.sum() - 1)  # PAD excluded


def random_embeddings(vocab: Vocabulary, seed: int | np.random.Generator = 0,
                      dim: int = EMBED_DIM, scale: float = 0.25) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-scale, scale, size=(len(vocab), dim))
    matrix[PAD_ID] = 0.0
    return EmbeddingTable(matrix, np.zeros(len(vocab), dtype=bool))


def load_embeddings(path: str | Path | None, vocab: Vocabulary,
                    seed: int | np.random.Generator = 0, dim: int = EMBED_DIM, scale: float = 0.25) -> EmbeddingTable:
    """Build a table from a GloVe text file; rows not found are uniform(-scale, scale).

    Random rows are drawn for the whole table up front, so a row's value does
    not depend on which other words happen to be in the file.
    """
    table = random_embeddings(vocab, seed, dim, scale)
    if path is None:
        return table
    try:
        fh = open(path, encoding="utf-8", errors="strict")
    except OSError as exc:
        raise DataError(f"cannot read embeddings {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) <= 1:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DataError(f"{path} line {lineno}: expected {dim} floats, got {len(values)}")
            idx = vocab.stoi.get(word)
            if idx is None or idx == PAD_ID or table.pretrained[idx]:
                continue
            table.matrix[idx] = np.asarray(values, dtype=np.float64)
            table.pretrained[idx] = True
    log.info("embeddings: %d pretrained rows, %d random rows", table.matched, table.random_init)
    return table


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    token_ids: np.ndarray  # (B, L2) int64
    tag_ids: np.ndarray  # (B, L2) int64, PAD tag beyond length
    intent_ids: np.ndarray  # (B,) int64, -1 for intents unseen in training
    lengths: np.ndarray  # (B,) int64

    def __len__(self) -> int:
        return len(self.lengths)

    def mask(self) -> np.ndarray:
        return np.arange(self.token_ids.shape[1])[None, :] < self.lengths[:, None]


@dataclass
class EncodeStats:
    truncated: int = 0
    unknown_tags: int = 0
    unknown_intents: int = 0


def encode_batch(utts: Sequence[TaggedUtterance], max_len: int, vocab: Vocabulary,
                 labels: LabelMaps, stats: EncodeStats | None = None) -> Batch:
    """Map utterances to fixed-width id arrays, post-padding to ``max_len``.

    Tags outside the label map become ``O``; intents outside it become -1.
    Both only occur on evaluation splits and are counted in ``stats``.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    stats = stats if stats is not None else EncodeStats()
    n = len(utts)
    tok = np.full((n, max_len), PAD_ID, dtype=np.int64)
    tag = np.full((n, max_len), labels.pad_tag_id, dtype=np.int64)
    intent = np.empty(n, dtype=np.int64)
    lengths = np.empty(n, dtype=np.int64)
    o_id = labels.tag_to_id.get("O", 0)
    for i, u in enumerate(utts):
        length = len(u.tokens)
        if length > max_len:
            stats.truncated += 1
            log.warning("truncating %d-token utterance to %d", length, max_len)
            length = max_len
        lengths[i] = length
        for j in range(length):
            tok[i, j] = vocab.lookup(u.tokens[j])
            tid = labels.tag_to_id.get(u.tags[j])
            if tid is None:
                stats.unknown_tags += 1
                tid = o_id
            tag[i, j] = tid
        iid = labels.intent_to_id.get(u.intent)
        if iid is None:
            stats.unknown_intents += 1
            iid = -1
        intent[i] = iid
    return Batch(tok, tag, intent, lengths)


def iter_batches(utts: Sequence[TaggedUtterance], batch_size: int,
                 order: Sequence[int] | None = None) -> Iterable[list[TaggedUtterance]]:
    order = range(len(utts)) if order is None else order
    order = list(order)
    for s in range(0, len(order), batch_size):
        yield [utts[i] for i in order[s:s + batch_size]]
