"""Intent accuracy, token accuracy and CoNLL-style chunk precision/recall/F1."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .datapipe import parse_iob

log = logging.getLogger(__name__)


def intent_accuracy(pred: Sequence, gold: Sequence) -> float:
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gold)} gold")
    if not gold:
        raise ValueError("intent accuracy of an empty list is undefined")
    return sum(p == g for p, g in zip(pred, gold)) / len(gold)


def _aligned(pred_tags, gold_tags, lengths):
    if len(pred_tags) != len(gold_tags):
        raise ValueError(f"length mismatch: {len(pred_tags)} vs {len(gold_tags)} sequences")
    if lengths is None:
        lengths = [len(g) for g in gold_tags]
    if len(lengths) != len(gold_tags):
        raise ValueError("lengths do not match number of sequences")
    for p, g, n in zip(pred_tags, gold_tags, lengths):
        if len(p) < n or len(g) < n:
            raise ValueError(f"sequence shorter than its length {n}")
        yield p[:n], g[:n]


@dataclass
class SlotCounts:
    """Additive counts; merging per-batch counts equals counting the whole split."""

    tokens: int = 0
    correct_tokens: int = 0
    gold_chunks: int = 0
    pred_chunks: int = 0
    correct_chunks: int = 0

    def update(self, pred_tags, gold_tags, lengths=None) -> SlotCounts:
        for p, g in _aligned(pred_tags, gold_tags, lengths):
            self.tokens += len(g)
            self.correct_tokens += sum(a == b for a, b in zip(p, g))
            gc, pc = set(parse_iob(g)), set(parse_iob(p))
            self.gold_chunks += len(gc)
            self.pred_chunks += len(pc)
            self.correct_chunks += len(gc & pc)
        return self

    def merge(self, other: SlotCounts) -> SlotCounts:
        return SlotCounts(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))

    @property
    def token_accuracy(self) -> float:
        if self.tokens == 0:
            raise ValueError("token accuracy with no tokens")
        return self.correct_tokens / self.tokens

    def prf(self) -> tuple[float, float, float]:
        if self.gold_chunks == 0 and self.pred_chunks == 0:
            log.info("no gold or predicted chunks; scoring P=R=F1=1 by convention")
            return 1.0, 1.0, 1.0
        p = self.correct_chunks / self.pred_chunks if self.pred_chunks else 0.0
        r = self.correct_chunks / self.gold_chunks if self.gold_chunks else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return p, r, f


def token_accuracy(pred_tags, gold_tags, lengths=None) -> float:
    return SlotCounts().update(pred_tags, gold_tags, lengths).token_accuracy


def chunk_prf(pred_tags, gold_tags, lengths=None) -> tuple[float, float, float]:
    return SlotCounts().update(pred_tags, gold_tags, lengths).prf()


@dataclass
class MetricsReport:
    model: str
    dataset: str
    split: str
    seed: int
    intent_accuracy: float
    slot_token_accuracy: float
    slot_chunk_precision: float
    slot_chunk_recall: float
    slot_chunk_f1: float
    counts: dict = field(default_factory=dict)

    @classmethod
    def build(cls, model: str, dataset: str, split: str, seed: int,
              intent_pred: Sequence[str], intent_gold: Sequence[str],
              slots: SlotCounts) -> MetricsReport:
        p, r, f = slots.prf()
        counts = {"utterances": len(intent_gold), **asdict(slots)}
        return cls(model, dataset, split, seed, intent_accuracy(intent_pred, intent_gold),
                   slots.token_accuracy, p, r, f, counts)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> MetricsReport:
        return cls(**json.loads(text))

    def score(self) -> float:
        """Model-selection score: mean of intent accuracy and chunk F1."""
        return (self.intent_accuracy + self.slot_chunk_f1) / 2

    def pretty(self) -> str:
        rows = [
            ("model", self.model), ("dataset", self.dataset), ("split", self.split),
            ("seed", str(self.seed)),
            ("intent accuracy", f"{100 * self.intent_accuracy:.2f}"),
            ("slot token accuracy", f"{100 * self.slot_token_accuracy:.2f}"),
            ("slot chunk P/R/F1", f"{100 * self.slot_chunk_precision:.2f} / "
                                  f"{100 * self.slot_chunk_recall:.2f} / "
                                  f"{100 * self.slot_chunk_f1:.2f}"),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{w}}  {v}" for k, v in rows)
