"""Command-line surface: reproducible experiments over JSONL corpora.

Subcommands: gen-synth, build-graph, train, eval, ablate, sweep-topn,
run-seeds. Config values layer as defaults < --config file < DOCGCN_*
environment variables < flags. Exit codes: 0 success, 1 runtime error,
2 usage error, 3 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint
from .config import TrainConfig, load_config, write_config_snapshot
from .corpus import load_corpus
from .errors import ConfigError, DocgcnError
from .evaluation import (ablate, ablate_all, ablation_table, evaluate,
                         sweep_table, sweep_topn)
from .graph import CATEGORIES, build_graph, edge_statistics, fit_vocabulary
from .synth import gen_corpus, gen_kb, write_corpus
from .training import run_seeds, train

log = logging.getLogger(__name__)

_CONFIG_FLAGS = [
    ("--batch-size", "batch_size"),
    ("--learning-rate", "learning_rate"),
    ("--lr-decay", "lr_decay"),
    ("--grad-clip", "grad_clip"),
    ("--patience", "patience"),
    ("--max-epochs", "max_epochs"),
    ("--word-dim", "word_dim"),
    ("--position-dim", "position_dim"),
    ("--gcnn-dim", "gcnn_dim"),
    ("--gcnn-blocks", "gcnn_blocks"),
    ("--mil-dim", "mil_dim"),
    ("--dropout-input", "dropout_input"),
    ("--dropout-gcnn", "dropout_gcnn"),
    ("--dropout-mil", "dropout_mil"),
    ("--top-n", "top_n"),
    ("--position-clamp", "position_clamp"),
    ("--ema-decay", "ema_decay"),
    ("--activation", "activation"),
    ("--rank-pool", "rank_pool"),
    ("--mention-mode", "mention_mode"),
    ("--pair-mode", "pair_mode"),
    ("--pair-types", "pair_types"),
    ("--relations", "relations"),
    ("--edge-categories", "edge_categories"),
    ("--seed", "seed"),
    ("--seeds", "seeds"),
    ("--embeddings", "embeddings_path"),
]
_CONFIG_BOOL_FLAGS = [
    ("--residual", "residual"),
    ("--coref-clique", "coref_clique"),
    ("--merge-train-dev", "merge_train_dev"),
    ("--doc-grouped-batching", "doc_grouped_batching"),
    ("--input-projection", "input_projection"),
]


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    group = parser.add_argument_group("config overrides")
    for flag, dest in _CONFIG_FLAGS:
        group.add_argument(flag, dest=dest, default=None)
    for flag, dest in _CONFIG_BOOL_FLAGS:
        group.add_argument(flag, dest=dest, default=None,
                           action=argparse.BooleanOptionalAction)


def _config_from_args(args: argparse.Namespace) -> TrainConfig:
    overrides = {}
    for _, dest in _CONFIG_FLAGS + _CONFIG_BOOL_FLAGS:
        value = getattr(args, dest, None)
        if value is not None:
            overrides[dest] = value
    return load_config(args.config, overrides=overrides)


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required")


def _load_split(path: str, name: str):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"--{name}: no such file {path!r}")
    docs, stats = load_corpus(p)
    if stats.dropped_mentions:
        log.warning("%s: dropped %d ungrounded mentions", name, stats.dropped_mentions)
    return docs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="docgcn", description=__doc__)
    parser.add_argument("--version", action="version", version=f"docgcn {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-synth", help="generate a synthetic corpus")
    p.add_argument("--entities", type=int, default=20)
    p.add_argument("--triples", type=int, default=12)
    p.add_argument("--docs", type=int, default=50)
    p.add_argument("--pct-inter", type=float, default=0.3)
    p.add_argument("--pct-coref-only", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--exclude-reverse", action="store_true",
                   help="sample at most one direction per KB pair")
    p.add_argument("--out", required=True, help="output corpus JSONL path")
    p.add_argument("--truth-out", default=None,
                   help="sidecar ground-truth path (default: OUT.truth.json)")

    p = sub.add_parser("build-graph", help="audit graph statistics for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--top-n", type=int, default=4)
    p.add_argument("--rank-pool", choices=("all", "dep"), default="all")
    p.add_argument("--categories", default=None,
                   help="comma-separated subset of " + ",".join(CATEGORIES))
    p.add_argument("--out", default=None, help="write the JSON report here")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", dest="train_path")
    p.add_argument("--dev", dest="dev_path")
    p.add_argument("--out-dir", dest="out_dir")
    _add_config_args(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus", dest="corpus_path")
    p.add_argument("--out", default=None, help="write the JSON report here")

    p = sub.add_parser("ablate", help="measure the effect of dropping an edge category")
    p.add_argument("--train", dest="train_path")
    p.add_argument("--dev", dest="dev_path")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--category", choices=CATEGORIES + ("all",), default="all")
    p.add_argument("--eval-only", action="store_true",
                   help="re-evaluate the full model instead of retraining")
    _add_config_args(p)

    p = sub.add_parser("sweep-topn", help="train once per top-N value")
    p.add_argument("--train", dest="train_path")
    p.add_argument("--dev", dest="dev_path")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--values", default="0,2,4,6", help="comma-separated top-N values")
    _add_config_args(p)

    p = sub.add_parser("run-seeds", help="train per seed and aggregate metrics")
    p.add_argument("--train", dest="train_path")
    p.add_argument("--dev", dest="dev_path")
    p.add_argument("--eval", dest="eval_path", default=None,
                   help="corpus for the aggregate metrics (default: dev)")
    p.add_argument("--out-dir", dest="out_dir")
    _add_config_args(p)
    return parser


def _cmd_gen_synth(args) -> int:
    kb = gen_kb(args.entities, args.triples, args.seed,
                exclude_reverse=args.exclude_reverse)
    records, truth = gen_corpus(kb, args.docs, pct_inter=args.pct_inter,
                                pct_coref_only=args.pct_coref_only, seed=args.seed)
    truth["generator"] = {
        "entities": args.entities, "triples": args.triples, "docs": args.docs,
        "pct_inter": args.pct_inter, "pct_coref_only": args.pct_coref_only,
        "seed": args.seed, "exclude_reverse": args.exclude_reverse,
    }
    write_corpus(records, args.out, truth=truth, truth_path=args.truth_out)
    print(f"wrote {len(records)} documents to {args.out}")
    return 0


def _cmd_build_graph(args) -> int:
    docs = _load_split(args.corpus, "corpus")
    enabled = None
    if args.categories:
        enabled = tuple(c.strip() for c in args.categories.split(",") if c.strip())
    graphs = [build_graph(d, enabled=enabled) for d in docs]
    vocab = fit_vocabulary(graphs, args.top_n, pool=args.rank_pool)
    report = edge_statistics(graphs)
    report["per_document"] = [
        {"doc_id": d.doc_id, "by_category": g.counts_by_category()}
        for d, g in zip(docs, graphs)
    ]
    report["top_n"] = {
        "n": args.top_n,
        "pool": args.rank_pool,
        "buckets": vocab.n_buckets,
        "slots": vocab.n_slots,
        "table": [
            [t.display(), c, vocab.bucket_of(t)] for t, c in vocab.ranked
        ],
    }
    payload = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        print(f"wrote graph report to {args.out}")
    else:
        print(payload)
    return 0


def _cmd_train(args) -> int:
    _require(args, "train_path", "dev_path", "out_dir")
    config = _config_from_args(args)
    train_docs = _load_split(args.train_path, "train")
    dev_docs = _load_split(args.dev_path, "dev")
    result = train(train_docs, dev_docs, config, out_dir=args.out_dir)
    print(f"best epoch {result.best_epoch}: dev F1 {result.best_f1:.4f}"
          f" ({len(result.epochs)} epochs run)")
    print(f"checkpoint written to {Path(args.out_dir) / 'checkpoint'}")
    return 0


def _cmd_eval(args) -> int:
    _require(args, "checkpoint", "corpus_path")
    model, manifest = load_checkpoint(args.checkpoint)
    docs = _load_split(args.corpus_path, "corpus")
    report = evaluate(model, docs)
    print(report.text_table())
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_jsonable(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        print(f"wrote report to {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    _require(args, "train_path", "dev_path", "out_dir")
    config = _config_from_args(args)
    if args.eval_only:
        config = config.replace(ablation_retrain=False)
    train_docs = _load_split(args.train_path, "train")
    dev_docs = _load_split(args.dev_path, "dev")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.category == "all":
        results = ablate_all(train_docs, dev_docs, config)
    else:
        results = [ablate(train_docs, dev_docs, config, args.category)]
    print(ablation_table(results))
    payload = [r.to_jsonable() for r in results]
    (out_dir / "ablation.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_config_snapshot(config, out_dir / "config.json")
    print(f"wrote {out_dir / 'ablation.json'}")
    return 0


def _cmd_sweep_topn(args) -> int:
    _require(args, "train_path", "dev_path", "out_dir")
    config = _config_from_args(args)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values must be comma-separated integers: {args.values!r}") from exc
    train_docs = _load_split(args.train_path, "train")
    dev_docs = _load_split(args.dev_path, "dev")
    rows = sweep_topn(train_docs, dev_docs, config, values)
    print(sweep_table(rows))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.json").write_text(
        json.dumps([r.to_jsonable() for r in rows], indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    write_config_snapshot(config, out_dir / "config.json")
    print(f"wrote {out_dir / 'sweep.json'}")
    return 0


def _cmd_run_seeds(args) -> int:
    _require(args, "train_path", "dev_path", "out_dir")
    config = _config_from_args(args)
    train_docs = _load_split(args.train_path, "train")
    dev_docs = _load_split(args.dev_path, "dev")
    eval_docs = _load_split(args.eval_path, "eval") if args.eval_path else None
    report = run_seeds(train_docs, dev_docs, config, eval_docs=eval_docs)
    print(report.text_table())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "seeds.json").write_text(
        json.dumps(report.to_jsonable(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_config_snapshot(config, out_dir / "config.json")
    print(f"wrote {out_dir / 'seeds.json'}")
    return 0


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "build-graph": _cmd_build_graph,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "sweep-topn": _cmd_sweep_topn,
    "run-seeds": _cmd_run_seeds,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except DocgcnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
