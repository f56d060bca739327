"""Command-line entry point: ``slufuse {train,eval,predict,gradcheck,reproduce}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .datapipe import TaggedUtterance, build_vocab, load_dataset, load_embeddings
from .evaluate import evaluate_checkpoint, evaluate_model, predict
from .model import STREAM_EMBED, VARIANTS, load_config, rng_stream
from .tables import DATASETS, reproduce_tables
from .train import train
from .verify import run_suite

log = logging.getLogger("slufuse")


def _cmd_train(args) -> int:
    cfg = load_config(args.config, variant=args.model, seed=args.seed)
    data = load_dataset(args.data_dir)
    vocab, labels = build_vocab(data["train"])
    if args.embeddings is None:
        log.warning("no --embeddings given; every row is randomly initialized")
    table = load_embeddings(args.embeddings, vocab, rng_stream(cfg.seed, STREAM_EMBED),
                            cfg.embed_dim, cfg.embed_init_scale)
    ckpt, history = train(cfg, data, table, vocab, labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out / "model.ckpt")
    (out / "history.json").write_text(json.dumps(history, indent=2) + "\n", "utf-8")
    report = evaluate_model(ckpt.to_model(), data["test"], Path(args.data_dir).name, "test")
    (out / "metrics.json").write_text(report.to_json(), "utf-8")
    print(f"best epoch {ckpt.best_epoch} of {len(history)}; checkpoint {out / 'model.ckpt'}")
    print(report.pretty())
    return 0


def _cmd_eval(args) -> int:
    report = evaluate_checkpoint(args.checkpoint, args.data_dir, args.split)
    print(report.pretty())
    if args.metrics_out:
        Path(args.metrics_out).write_text(report.to_json(), "utf-8")
    return 0


def _cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    tokens = tuple(args.text.split())
    if not tokens:
        raise ValueError("empty --text")
    utt = TaggedUtterance(tokens, ("O",) * len(tokens), "")
    intents, tags = predict(model, [utt])
    print(f"intent: {intents[0]}")
    for i, tok in enumerate(tokens):
        print(f"{tok}\t{tags[0][i] if i < len(tags[0]) else 'O'}")
    return 0


def _cmd_gradcheck(args) -> int:
    reports = run_suite(seed=args.seed)
    ok = True
    for name, rep in reports.items():
        status = "PASS" if rep.passed else "FAIL"
        ok &= rep.passed
        print(f"{status}  {name:<26} max rel err {rep.overall:.3e} (tol {rep.tol:g}, h {rep.h:g})")
    return 0 if ok else 1


def _cmd_reproduce(args) -> int:
    root = Path(args.data_root or os.environ.get("SLUFUSE_DATA", "data"))
    names = DATASETS if args.dataset == "both" else (args.dataset,)
    roots = {ds: root / ds for ds in names}
    glove = {ds: args.embeddings for ds in names} if args.embeddings else None
    base = load_config(args.config) if args.config else None
    overrides = {"max_epochs": args.max_epochs} if args.max_epochs else None
    tables = reproduce_tables(roots, args.models, list(range(args.seeds)), args.out, glove,
                              base, overrides)
    for t in tables.values():
        print(t.render())
        print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slufuse",
                                     description="Joint intent and slot models with MLB fusion")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--embeddings", help="GloVe text file (optional)")
    p.add_argument("--model", choices=VARIANTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--metrics-out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="tag one utterance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gradcheck", help="run the 64-bit gradient verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("reproduce", help="train, evaluate and emit the comparison tables")
    p.add_argument("--dataset", choices=("atis", "snips", "both"), required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--data-root", help="directory holding atis/ and snips/ (default $SLUFUSE_DATA)")
    p.add_argument("--embeddings", help="GloVe text file (optional)")
    p.add_argument("--models", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    p.add_argument("--config", help="base key=value config file")
    p.add_argument("--max-epochs", type=int)
    p.set_defaults(func=_cmd_reproduce)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse has already printed usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # single-line diagnostic, no traceback
        if args.verbose:
            raise
        print(f"error: {type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return 1


cli_main = main


if __name__ == "__main__":
    sys.exit(main())
