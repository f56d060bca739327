from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .checkpoint import read_checkpoint
from .datapipe import TaggedUtterance, build_vocab, encode_batch, load_split
from .metrics import MetricsReport, SlotCounts
from .model import Model, decode, model_forward


class LabelMapError(ValueError):
    pass


def eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("SLUFUSE_THREADS", "1")))
    except ValueError:
        return 1


def predict(model: Model, utts: Sequence[TaggedUtterance], batch_size: int = 64,
            threads: int | None = None) -> tuple[list[str], list[list[str]]]:
    """Predicted intent strings and tag strings, in input order."""
    threads = eval_threads() if threads is None else threads
    chunks = [utts[i:i + batch_size] for i in range(0, len(utts), batch_size)]

    def run(chunk):
        batch = encode_batch(chunk, model.config.max_len, model.vocab, model.labels)
        with nc.no_grad(), nc.precision(model.config.width):
            out = model_forward(model, batch, "infer")
        return decode(model, out, batch.lengths)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, chunks))  # map keeps input order
    else:
        results = [run(c) for c in chunks]
    intents, tags = [], []
    for ids, paths in results:
        intents.extend(model.labels.intents[i] for i in ids)
        tags.extend([model.labels.tags[t] for t in path] for path in paths)
    return intents, tags


def evaluate_model(model: Model, utts: Sequence[TaggedUtterance], dataset: str = "",
                   split: str = "", batch_size: int = 64) -> MetricsReport:
    """Score predictions against the gold strings.

    Tokens past ``max_len`` are never predicted, so they count as tagged ``O``.
    """
    pred_intents, pred_tags = predict(model, utts, batch_size)
    gold_tags = [list(u.tags) for u in utts]
    padded = [p + ["O"] * (len(g) - len(p)) for p, g in zip(pred_tags, gold_tags)]
    slots = SlotCounts().update(padded, gold_tags)
    return MetricsReport.build(model.config.variant, dataset, split, model.config.seed,
                               pred_intents, [u.intent for u in utts], slots)


def evaluate_checkpoint(ckpt_path: str | Path, data_dir: str | Path, split: str,
                        dataset: str | None = None) -> MetricsReport:
    ckpt = read_checkpoint(ckpt_path)
    data_dir = Path(data_dir)
    _, labels = build_vocab(load_split(data_dir / "train"))
    if labels.to_json() != ckpt.labels:
        raise LabelMapError(
            f"label maps of {data_dir} do not match checkpoint "
            f"({labels.num_intents} intents/{labels.num_tags} tags vs "
            f"{len(ckpt.labels['intents'])}/{len(ckpt.labels['tags'])})")
    model = ckpt.to_model()
    utts = load_split(data_dir / split)
    return evaluate_model(model, utts, dataset or data_dir.name, split)


def summarize(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "min": float(arr.min()), "max": float(arr.max())}
