"""Command-line front end for the whole pipeline.

One executable with subcommands: score graphs (smatch), generate synthetic
language families (gen-synthetic), train either trainer (train), run k-shot
evaluation (eval), build the comparison grid (compare), and convert between
graphs and token sequences (linearize / restore).

Exit codes are a stable scripting contract: 0 success, 2 for input or
configuration problems (argparse usage errors included), 3 when training or
evaluation aborts on a non-finite value.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import data as _data
from . import evaluation as _eval
from . import linearize as _lin
from . import model as _model
from . import penman as _penman
from . import smatch as _smatch
from . import training as _training
from .autodiff import NonFinite

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

log = logging.getLogger("metamr")


class InputError(Exception):
    """Anything wrong with files, formats, or configuration."""


def _load_scoring_corpus(path):
    try:
        corpus = _data.load_amr_corpus(path)
    except OSError as exc:
        raise InputError(str(exc))
    if corpus.warnings:
        raise InputError("%s: %s" % (path, "; ".join(corpus.warnings)))
    if not corpus.entries:
        raise InputError("%s: no records" % path)
    return corpus


def cmd_smatch(args) -> int:
    cand = _load_scoring_corpus(args.candidate)
    gold = _load_scoring_corpus(args.gold)
    if len(cand.entries) != len(gold.entries):
        raise InputError("record count mismatch: %d vs %d"
                         % (len(cand.entries), len(gold.entries)))
    pairs = [(c.graph, g.graph)
             for c, g in zip(cand.entries, gold.entries)]
    corpus, per_pair = _smatch.corpus_smatch_detailed(
        pairs, restarts=args.restarts, seed=args.seed, workers=args.workers)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write("index\tprecision\trecall\tf1\tmatched\t"
                     "total_left\ttotal_right\n")
            for i, s in enumerate(per_pair):
                fh.write("%d\t%.4f\t%.4f\t%.4f\t%d\t%d\t%d\n"
                         % (i, s.precision, s.recall, s.f1, s.matched,
                            s.total_left, s.total_right))
    print("%.4f %.4f %.4f" % (corpus.precision, corpus.recall, corpus.f1))
    return EXIT_OK


def _resolve_config(args, num_languages: int) -> _training.TrainConfig:
    fields = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                fields = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError("config: %s" % exc)
        if not isinstance(fields, dict):
            raise InputError("config must be a JSON object")
        unknown = set(fields) - set(_training.TrainConfig.__dataclass_fields__)
        if unknown:
            raise InputError("unknown config fields: %s"
                             % ", ".join(sorted(unknown)))
    fields.setdefault("I", num_languages)
    if args.workers is not None:
        fields["workers"] = args.workers
    if args.seed is not None:
        fields["seed"] = args.seed
    try:
        return _training.TrainConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise InputError("config: %s" % exc)


def _load_training_data(data_dir):
    train_path = os.path.join(data_dir, "train.tsv")
    dev_path = os.path.join(data_dir, "dev.tsv")
    if not os.path.exists(train_path):
        raise InputError("missing %s" % train_path)
    try:
        train_rows = _data.read_parallel_rows(train_path)
        dev_rows = _data.read_parallel_rows(dev_path) \
            if os.path.exists(dev_path) else []
    except (_data.ColumnCount, _data.EmptyField, OSError) as exc:
        raise InputError(str(exc))
    if not train_rows:
        raise InputError("%s: no rows" % train_path)

    src_path = os.path.join(data_dir, "vocab_src.txt")
    tgt_path = os.path.join(data_dir, "vocab_tgt.txt")
    if os.path.exists(src_path) and os.path.exists(tgt_path):
        try:
            vocabs = (_data.load_vocab_file(src_path),
                      _data.load_vocab_file(tgt_path))
        except (OSError, ValueError) as exc:
            raise InputError("vocab files: %s" % exc)
    else:
        vocabs = _data.build_vocab(train_rows + dev_rows)

    src_vocab, tgt_vocab = vocabs
    datasets = []
    for lang, group in _data.group_rows(train_rows).items():
        examples = tuple(_data.encode_row(r, src_vocab, tgt_vocab)
                         for r in group)
        datasets.append(_training.LanguageDataset(lang, examples))
    return datasets, dev_rows, src_vocab, tgt_vocab


def _dev_callback(dev_rows, languages, limit, src_vocab, tgt_vocab,
                  restarts, max_len, workers):
    chosen = []
    for lang in sorted(languages):
        rows = [r for r in dev_rows if r.language == lang][:limit]
        chosen.extend(rows)
    if not chosen:
        return None
    golds = [_data.gold_graph(r.target) for r in chosen]

    def dev_eval(params):
        pairs = []
        for row, gold in zip(chosen, golds):
            ids = _data.encode_source(row.language, row.source, src_vocab)
            out = _model.generate_greedy(params, ids, max_len=max_len)
            hyp = [tgt_vocab.decode(i) for i in out]
            try:
                graph = _lin.restore(hyp)
            except _lin.Unrestorable:
                graph = _penman.parse_penman(_eval.DUMMY_GRAPH_TEXT)
            pairs.append((graph, gold))
        return _smatch.corpus_smatch(pairs, restarts=restarts, seed=0,
                                     workers=workers).f1

    return dev_eval


def cmd_train(args) -> int:
    datasets, dev_rows, src_vocab, tgt_vocab = \
        _load_training_data(args.data_dir)
    config = _resolve_config(args, num_languages=len(datasets))

    train_langs = {d.language for d in datasets}
    if args.dev_languages:
        wanted = set(args.dev_languages.split(","))
        missing = wanted - {r.language for r in dev_rows}
        if missing:
            raise InputError("dev languages not in dev.tsv: %s"
                             % ", ".join(sorted(missing)))
    else:
        wanted = train_langs
    dev_eval = _dev_callback(dev_rows, wanted, args.dev_limit, src_vocab,
                             tgt_vocab, args.eval_restarts, args.max_len,
                             config.workers)

    mcfg = _model.ModelConfig(len(src_vocab), len(tgt_vocab),
                              emb_dim=args.emb_dim,
                              hidden_dim=args.hidden_dim)
    theta0 = _model.init_params(mcfg, seed=config.seed)

    os.makedirs(args.out, exist_ok=True)
    trainer = _training.maml_train if args.mode == "maml" \
        else _training.joint_train
    best, train_log = trainer(theta0, datasets, config, dev_eval=dev_eval)

    ckpt_path = os.path.join(args.out, "model.mamr")
    _model.save_checkpoint(ckpt_path, best, src_vocab, tgt_vocab)
    log_path = os.path.join(args.out, "train_log.jsonl")
    header = {"type": "header", "mode": args.mode,
              "config": json.loads(config.to_json()),
              "emb_dim": args.emb_dim, "hidden_dim": args.hidden_dim,
              "languages": sorted(train_langs),
              "dev_languages": sorted(wanted) if dev_eval else []}
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for record in train_log:
            fh.write(json.dumps({"type": "step", **record},
                                sort_keys=True) + "\n")
    print("checkpoint: %s" % ckpt_path)
    print("log: %s" % log_path)
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        params, src_vocab, tgt_vocab = _model.load_checkpoint(
            args.checkpoint)
    except (OSError, _model.CheckpointError) as exc:
        raise InputError("checkpoint: %s" % exc)
    try:
        test_rows = _data.read_parallel_rows(args.test)
    except (OSError, _data.ColumnCount, _data.EmptyField) as exc:
        raise InputError(str(exc))
    if not test_rows:
        raise InputError("%s: no rows" % args.test)

    shot_rows = []
    if args.shots:
        try:
            shot_rows = _data.read_parallel_rows(args.shots)
        except (OSError, _data.ColumnCount, _data.EmptyField) as exc:
            raise InputError(str(exc))

    reports = []
    for lang, group in _data.group_rows(test_rows).items():
        test = [(r.source, _data.gold_graph(r.target)) for r in group]
        pool = [_data.encode_row(r, src_vocab, tgt_vocab)
                for r in shot_rows if r.language == lang]
        if args.k > 0 and len(pool) < args.k:
            raise InputError("language %s: %d shots available, need %d"
                             % (lang, len(pool), args.k))
        report = _eval.evaluate_cell(
            params, src_vocab, tgt_vocab, test, lang, shots=pool,
            k=args.k, lr=args.lr, epochs=args.epochs, max_len=args.max_len,
            restarts=args.restarts, seed=args.seed, workers=args.workers)
        reports.append(report)
        s = report.smatch
        print("%s k=%d %.4f %.4f %.4f"
              % (lang, args.k, s.precision, s.recall, s.f1))
    _eval.write_reports(args.out, args.label, reports)
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    try:
        with open(args.spec, encoding="utf-8") as fh:
            spec = _data.SyntheticSpec.from_json(fh.read())
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise InputError("spec: %s" % exc)
    family = _data.generate_synthetic(spec)
    manifest = _data.write_family(family, args.out_dir)
    print("wrote %s (%d files)"
          % (os.path.join(args.out_dir, "manifest.json"),
             len(manifest["checksums"]) + 1))
    return EXIT_OK


def cmd_linearize(args) -> int:
    corpus = _load_scoring_corpus(args.infile)
    with open(args.out, "w", encoding="utf-8") as fh:
        for entry in corpus.entries:
            fh.write(_lin.preprocess(entry.graph).text + "\n")
    print("linearized %d graphs" % len(corpus.entries))
    return EXIT_OK


def cmd_restore(args) -> int:
    try:
        with open(args.infile, encoding="utf-8") as fh:
            lines = [line.strip() for line in fh]
    except OSError as exc:
        raise InputError(str(exc))
    lines = [line for line in lines if line]
    if not lines:
        raise InputError("%s: no token lines" % args.infile)
    entries = []
    for line in lines:
        try:
            graph = _lin.restore(line.split())
        except _lin.Unrestorable:
            graph = _penman.parse_penman(_eval.DUMMY_GRAPH_TEXT)
        entries.append(_data.CorpusEntry((("snt", line),), line, graph))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(_data.dump_amr_corpus(entries))
    print("restored %d graphs" % len(entries))
    return EXIT_OK


def cmd_compare(args) -> int:
    summaries = []
    for path in args.reports:
        try:
            summaries.extend(_eval.read_summaries(path))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError("%s: %s" % (path, exc))
    try:
        table = _eval.compare_runs(summaries)
    except _eval.GridMismatch as exc:
        raise InputError(str(exc))
    text = _eval.render_table(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metamr",
        description="Cross-lingual AMR toolkit: graphs, Smatch, "
                    "meta-training, k-shot evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("smatch", help="score candidate vs gold corpus")
    p.add_argument("candidate")
    p.add_argument("gold")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--report", help="write per-pair TSV here")
    p.set_defaults(func=cmd_smatch)

    p = sub.add_parser("train", help="train with either trainer")
    p.add_argument("--mode", choices=("maml", "joint"), required=True)
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override config seed")
    p.add_argument("--workers", type=int, default=None,
                   help="override config workers")
    p.add_argument("--emb-dim", type=int, default=32)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--dev-languages", default=None,
                   help="comma list; default: the training languages")
    p.add_argument("--dev-limit", type=int, default=16,
                   help="dev rows per language used for model selection")
    p.add_argument("--eval-restarts", type=int, default=2)
    p.add_argument("--max-len", type=int, default=64)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="k-shot evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True, help="parallel TSV")
    p.add_argument("--k", type=int, default=0)
    p.add_argument("--shots", help="parallel TSV shot pool")
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--label", default="model", help="model name in reports")
    p.add_argument("--out", required=True, help="report JSONL path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-synthetic", help="generate a language family")
    p.add_argument("--spec", required=True, help="JSON SyntheticSpec")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("linearize", help="corpus file to token lines")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("restore", help="token lines to corpus file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("compare", help="merge reports into the model/k grid")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("METAMR_LOG", "WARNING").
                      upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and args.k > 0 and not args.shots:
        parser.error("--k > 0 requires --shots")
    try:
        return args.func(args)
    except InputError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_INPUT
    except (_penman.PenmanError, _training.InsufficientData,
            _eval.InsufficientShots, _smatch.EmptyCorpus) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_INPUT
    except NonFinite as exc:
        print("numerical abort: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
