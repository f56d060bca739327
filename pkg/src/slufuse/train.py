from __future__ import annotations

import logging
import math
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numcore as nc
from .checkpoint import Checkpoint
from .datapipe import (PAD_ID, Batch, EmbeddingTable, LabelMaps, TaggedUtterance, Vocabulary,
                       build_vocab, encode_batch)
from .evaluate import evaluate_model
from .model import (STREAM_DROPOUT, STREAM_SHUFFLE, ModelConfig, build_model, joint_loss,
                    model_forward, rng_stream)
from .optim import AdamState, NonFiniteGradient, adam_step

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


def _rows(batch: Batch, idx: np.ndarray) -> Batch:
    return Batch(batch.token_ids[idx], batch.tag_ids[idx], batch.intent_ids[idx],
                 batch.lengths[idx])


def train(cfg: ModelConfig, data: Mapping[str, Sequence[TaggedUtterance]],
          embeddings: EmbeddingTable | None = None, vocab: Vocabulary | None = None,
          labels: LabelMaps | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[Checkpoint, list[dict]]:
    """Train with Adam and early stopping on (intent accuracy + chunk F1) / 2.

    Validation uses ``data["valid"]`` (the training split when absent). The
    returned checkpoint holds the best epoch's parameters and the full history.
    On a non-finite loss or gradient, training stops and the best checkpoint so
    far is returned; the last history entry records the abort.
    """
    train_utts = data["train"]
    valid_utts = data.get("valid") or train_utts
    if vocab is None or labels is None:
        vocab, labels = build_vocab(train_utts)
    model = build_model(cfg, vocab, labels, embeddings)
    params = model.trainable()
    state = AdamState(cfg.beta1, cfg.beta2, cfg.eps)
    shuffle_rng = rng_stream(cfg.seed, STREAM_SHUFFLE)
    drop_rng = rng_stream(cfg.seed, STREAM_DROPOUT)
    encoded = encode_batch(train_utts, cfg.max_len, vocab, labels)

    history: list[dict] = []
    best: Checkpoint | None = None
    best_score, best_epoch, stale = -math.inf, None, 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_utts))
        total, seen, abort = 0.0, 0, None
        with nc.precision(cfg.width):
            for s in range(0, len(order), cfg.batch_size):
                batch = _rows(encoded, order[s:s + cfg.batch_size])
                loss = joint_loss(model_forward(model, batch, "train", drop_rng), batch, model)
                value = loss.item()
                if not math.isfinite(value):
                    abort = f"non-finite loss at epoch {epoch}, batch {s // cfg.batch_size}"
                    break
                grads = nc.backward(loss, params)
                if "embedding" in grads:
                    grads["embedding"][PAD_ID] = 0.0
                try:
                    adam_step(params, grads, state, cfg.lr)
                except NonFiniteGradient as exc:
                    abort = f"epoch {epoch}: {exc}"
                    break
                total += value * len(batch)
                seen += len(batch)
        if abort is not None:
            log.error("training aborted: %s", abort)
            history.append({"epoch": epoch, "aborted": abort})
            if best is None:
                raise TrainingDiverged(abort)
            break
        report = evaluate_model(model, valid_utts, split="valid")
        score = report.score()
        entry = {
            "epoch": epoch,
            "train_loss": total / seen,
            "valid_intent_accuracy": report.intent_accuracy,
            "valid_slot_token_accuracy": report.slot_token_accuracy,
            "valid_slot_chunk_f1": report.slot_chunk_f1,
            "valid_score": score,
        }
        history.append(entry)
        log.info("epoch %d loss %.4f valid intent %.4f chunk-f1 %.4f", epoch,
                 entry["train_loss"], report.intent_accuracy, report.slot_chunk_f1)
        if on_epoch is not None:
            on_epoch(entry)
        if score > best_score:
            best_score, best_epoch, stale = score, epoch, 0
            best = Checkpoint.from_model(model)
        else:
            stale += 1
        if stale >= cfg.patience:
            break
    best.history = history
    best.best_epoch = best_epoch
    return best, history
