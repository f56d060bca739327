"""Comparison tables in the published layout, with quoted and computed rows."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .checkpoint import save_checkpoint
from .datapipe import build_vocab, load_dataset, load_embeddings
from .evaluate import evaluate_model
from .metrics import MetricsReport
from .model import STREAM_EMBED, ModelConfig, rng_stream
from .train import train

log = logging.getLogger(__name__)

DATASETS = ("atis", "snips")
DEFAULT_MAX_LEN = {"atis": 50, "snips": 36}

# published corpus statistics: split sizes, vocabulary, slot tags, intents
CORPUS_STATS = {
    "atis": {"train": 4978, "valid": 500, "test": 893, "vocab": 722, "slots": 120, "intents": 21,
             "max_len": 50},
    "snips": {"train": 13084, "valid": 700, "test": 700, "vocab": 11241, "slots": 72,
              "intents": 7, "max_len": 36},
}

VARIANT_LABELS = {
    "model1a": "CNN/Bi-LSTM with Dense Addition (Model-1a)",
    "model1b": "CNN/Bi-LSTM with MLB Fusion (Model-1b)",
    "model2a": "Bidirectional GRU with Dense Addition (Model-2a)",
    "model2b": "Bidirectional GRU with MLB Fusion (Model-2b)",
}

# (label, ATIS intent, ATIS slot, Snips intent, Snips slot); None where not reported
_BHASIN = ("Bhasin et al. [20]", "97.42", "99.54", "98.14", "98.44")
_M1A = (VARIANT_LABELS["model1a"], "97.53", "99.47", "94.14", "98.44")
_M1B = (VARIANT_LABELS["model1b"], "97.54", "99.54", "98.14", "98.49")
_M2A = (VARIANT_LABELS["model2a"], "97.65", "99.56", "98.14", "98.44")
_M2B = (VARIANT_LABELS["model2b"], "97.76", "99.60", "98.42", "98.74")
QUOTED = {
    "table3": [_BHASIN, _M1A, _M1B],
    "table4": [_M1A, _M1B, _M2A, _M2B],
    "table5": [
        ("Goo et al. [3] (Full Attention)", "93.6", "94.8", "97.0", "88.8"),
        ("Goo et al. [3] (Intent Attention)", "94.1", "95.2", "96.8", "88.3"),
        ("Wang et al. [4]", "97.17", "97.76", None, None),
        _BHASIN,
        ("Model-2b (Best)", "97.76", "99.60", "98.42", "98.74"),
    ],
}
TABLE_VARIANTS = {
    "table3": ("model1a", "model1b"),
    "table4": ("model1a", "model1b", "model2a", "model2b"),
    "table5": ("model2b",),
}
TABLE_TITLES = {
    "table3": "Intent accuracy and slot score, Model-1 with MLB and dense addition",
    "table4": "Model-2 compared with Model-1",
    "table5": "Comparison with other published models",
}


@dataclass
class Row:
    label: str
    atis_intent: str | None
    atis_slot: str | None
    snips_intent: str | None
    snips_slot: str | None
    source: str  # "quoted" or "computed"
    atis_slot_chunk_f1: str | None = None
    snips_slot_chunk_f1: str | None = None
    provenance: dict = field(default_factory=dict)


@dataclass
class ComparisonTable:
    name: str
    title: str
    rows: list[Row]

    def render(self) -> str:
        head = ("Technique", "ATIS intent", "ATIS slot", "ATIS chunk-F1",
                "Snips intent", "Snips slot", "Snips chunk-F1", "source")
        body = [(r.label, r.atis_intent, r.atis_slot, r.atis_slot_chunk_f1, r.snips_intent,
                 r.snips_slot, r.snips_slot_chunk_f1, r.source) for r in self.rows]
        body = [tuple("-" if c is None else c for c in row) for row in body]
        widths = [max(len(str(x[i])) for x in [head, *body]) for i in range(len(head))]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines = [f"{self.name}: {self.title}", fmt.format(*head),
                 fmt.format(*("-" * w for w in widths))]
        lines += [fmt.format(*row) for row in body]
        return "\n".join(lines)


def quoted_rows(table: str) -> list[Row]:
    return [Row(*vals, source="quoted", provenance={"quoted_from": table}) for vals in QUOTED[table]]


def _pct(x: float | None) -> str | None:
    return None if x is None else f"{100 * x:.2f}"


def pick_best(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Highest test intent accuracy; ties go to token accuracy, then lower seed."""
    return max(reports, key=lambda r: (r.intent_accuracy, r.slot_token_accuracy, -r.seed))


def computed_row(label: str, by_dataset: Mapping[str, MetricsReport]) -> Row:
    atis, snips = by_dataset.get("atis"), by_dataset.get("snips")
    prov = {ds: {"seed": r.seed, "model": r.model, "split": r.split} for ds, r in by_dataset.items()}
    return Row(label,
               _pct(atis and atis.intent_accuracy), _pct(atis and atis.slot_token_accuracy),
               _pct(snips and snips.intent_accuracy), _pct(snips and snips.slot_token_accuracy),
               "computed", _pct(atis and atis.slot_chunk_f1), _pct(snips and snips.slot_chunk_f1),
               prov)


def build_tables(results: Mapping[tuple[str, str], Sequence[MetricsReport]]
                 ) -> dict[str, ComparisonTable]:
    """``results`` maps (variant, dataset) to per-seed test reports."""
    tables = {}
    for name in ("table3", "table4", "table5"):
        rows = quoted_rows(name)
        for variant in TABLE_VARIANTS[name]:
            per_ds = {ds: list(results.get((variant, ds), [])) for ds in DATASETS}
            seeds = sorted({r.seed for reps in per_ds.values() for r in reps})
            if not seeds:
                continue
            for seed in seeds:
                picked = {ds: r for ds, reps in per_ds.items() for r in reps if r.seed == seed}
                rows.append(computed_row(f"{VARIANT_LABELS[variant]} [ours, seed {seed}]", picked))
            best = {ds: pick_best(reps) for ds, reps in per_ds.items() if reps}
            rows.append(computed_row(f"{VARIANT_LABELS[variant]} [ours, best of seeds]", best))
        tables[name] = ComparisonTable(name, TABLE_TITLES[name], rows)
    return tables


def corpus_report(name: str, data: Mapping[str, Sequence]) -> dict:
    vocab, labels = build_vocab(data["train"])
    got = {split: len(data[split]) for split in ("train", "valid", "test")}
    got.update(vocab=len(vocab) - 2, slots=labels.num_tags, intents=labels.num_intents,
               max_len=max(len(u.tokens) for split in data.values() for u in split))
    return {"dataset": name, "computed": got, "published": CORPUS_STATS.get(name, {}),
            "vocab_note": "computed vocab excludes <pad>/<unk>; tokens lowercased"}


def reproduce_tables(data_roots: Mapping[str, str | Path], models: Sequence[str],
                     seeds: Sequence[int], out: str | Path,
                     embeddings: Mapping[str, str | Path | None] | None = None,
                     base_config: ModelConfig | None = None,
                     overrides: Mapping[str, object] | None = None) -> dict[str, ComparisonTable]:
    """Train every (variant, dataset, seed), score the test split, write the tables.

    Files written under ``out``: ``<dataset>/<variant>/seed<k>/{model.ckpt,metrics.json}``,
    ``tables.txt`` and ``tables.json``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    embeddings = embeddings or {}
    results: dict[tuple[str, str], list[MetricsReport]] = {}
    corpora, configs = [], {}
    for ds, root in data_roots.items():
        data = load_dataset(root) if seeds else None
        if data is not None:
            corpora.append(corpus_report(ds, data))
        for variant in models:
            for seed in seeds:
                try:
                    changes = {"variant": variant, "seed": seed,
                               "max_len": DEFAULT_MAX_LEN.get(ds, 50), **(overrides or {})}
                    cfg = (base_config or ModelConfig()).replace(**changes)
                    configs[f"{ds}/{variant}"] = cfg.to_json()
                    vocab, labels = build_vocab(data["train"])
                    table = load_embeddings(embeddings.get(ds), vocab,
                                            rng_stream(seed, STREAM_EMBED), cfg.embed_dim,
                                            cfg.embed_init_scale)
                    ckpt, _ = train(cfg, data, table, vocab, labels)
                    report = evaluate_model(ckpt.to_model(), data["test"], ds, "test")
                except Exception as exc:
                    raise RuntimeError(f"[{variant} / {ds} / seed {seed}] {exc}") from exc
                run_dir = out / ds / variant / f"seed{seed}"
                run_dir.mkdir(parents=True, exist_ok=True)
                save_checkpoint(ckpt, run_dir / "model.ckpt")
                (run_dir / "metrics.json").write_text(report.to_json(), "utf-8")
                log.info("%s %s seed %d: intent %.4f token %.4f chunk-f1 %.4f", ds, variant,
                         seed, report.intent_accuracy, report.slot_token_accuracy,
                         report.slot_chunk_f1)
                results.setdefault((variant, ds), []).append(report)
    tables = build_tables(results)
    text = "\n\n".join(t.render() for t in tables.values())
    (out / "tables.txt").write_text(text + "\n", "utf-8")
    payload = {
        "tables": {k: {"title": t.title, "rows": [asdict(r) for r in t.rows]}
                   for k, t in tables.items()},
        "runs": {f"{v}/{ds}": [asdict(r) for r in reps] for (v, ds), reps in results.items()},
        "configs": configs,
        "corpora": corpora,
        "best_of_seeds_rule": "max test intent accuracy, then token accuracy, then lower seed",
    }
    (out / "tables.json").write_text(json.dumps(payload, indent=2) + "\n", "utf-8")
    return tables
