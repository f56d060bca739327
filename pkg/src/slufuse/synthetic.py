"""A 10-utterance, 2-intent, 3-tag corpus for smoke tests and overfit checks."""

from __future__ import annotations

from pathlib import Path

from .datapipe import SPLITS, TaggedUtterance

_ROWS = [
    ("show flights to boston", "O O O B-city", "flight"),
    ("flights from new york", "O O B-city I-city", "flight"),
    ("list flights to san francisco", "O O O B-city I-city", "flight"),
    ("i need a flight to denver", "O O O O O B-city", "flight"),
    ("book a flight from dallas", "O O O O B-city", "flight"),
    ("weather in boston", "O O B-city", "weather"),
    ("is it raining in new york", "O O O O B-city I-city", "weather"),
    ("forecast for san francisco today", "O O B-city I-city O", "weather"),
    ("how cold is denver", "O O O B-city", "weather"),
    ("will it snow in dallas", "O O O O B-city", "weather"),
]


def tiny_corpus() -> list[TaggedUtterance]:
    return [TaggedUtterance(tuple(w.split()), tuple(t.split()), i) for w, t, i in _ROWS]


def write_corpus(root: str | Path, utts: list[TaggedUtterance] | None = None) -> Path:
    """Write ``utts`` (default: the tiny corpus) as every split under ``root``."""
    utts = tiny_corpus() if utts is None else utts
    root = Path(root)
    for split in SPLITS:
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        (d / "seq.in").write_text("".join(" ".join(u.tokens) + "\n" for u in utts), "utf-8")
        (d / "seq.out").write_text("".join(" ".join(u.tags) + "\n" for u in utts), "utf-8")
        (d / "label").write_text("".join(u.intent + "\n" for u in utts), "utf-8")
    return root
