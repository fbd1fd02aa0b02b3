"""k-shot evaluation: clone, fine-tune, decode, restore, score.

A cell is one (model, language, k) combination. The model is copied, tuned
for a configurable number of epochs on k shot examples, then greedy-decodes
the test sentences; outputs are repaired into graphs and scored with corpus
Smatch against the references. k=0 skips tuning entirely, so two zero-shot
runs of the same checkpoint are identical by construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import model as _model
from . import penman, smatch
from .linearize import Unrestorable, restore
from .data import encode_source

DUMMY_GRAPH_TEXT = "(v0 / amr-empty)"


class InsufficientShots(Exception):
    pass


class GridMismatch(Exception):
    pass


@dataclass(frozen=True)
class SentenceRecord:
    source: tuple      # surface tokens
    hypothesis: tuple  # decoded target tokens
    restored: str      # repaired graph, serialized
    f1: float
    matched: int
    total_left: int
    total_right: int


@dataclass(frozen=True)
class EvalReport:
    language: str
    k: int
    smatch: smatch.SmatchScore
    records: tuple
    fine_tune_lr: float
    seed: int


def kshot_finetune(params, shots, k: int, lr: float,
                   rng: np.random.Generator, epochs: int = 1,
                   loss_and_grad=_model.loss_and_grad):
    """SGD-tune a copy of params on k of the shot examples.

    The k examples and their epoch order come from rng, batches cap at 8.
    k=0 returns an untouched copy.
    """
    adapted = params.with_flat(params.flat.copy())
    if k == 0:
        return adapted
    if len(shots) < k:
        raise InsufficientShots("need %d shots, pool has %d"
                                % (k, len(shots)))
    chosen = [shots[i] for i in rng.choice(len(shots), size=k,
                                           replace=False)]
    batch = min(k, 8)
    for _ in range(epochs):
        order = rng.permutation(k)
        for start in range(0, k, batch):
            picked = [chosen[i] for i in order[start:start + batch]]
            _, grad = loss_and_grad(adapted, picked)
            adapted = adapted.with_flat(adapted.flat - lr * grad)
    return adapted


def _decode_graph(params, src_vocab, tgt_vocab, language, source_tokens,
                  max_len):
    ids = encode_source(language, source_tokens, src_vocab)
    out = _model.generate_greedy(params, ids, max_len=max_len)
    hyp = tuple(tgt_vocab.decode(i) for i in out)
    try:
        graph = restore(list(hyp))
    except Unrestorable:
        graph = penman.parse_penman(DUMMY_GRAPH_TEXT)
    return hyp, graph


def evaluate(params, src_vocab, tgt_vocab, test, language: str,
             k: int = 0, fine_tune_lr: float = 0.0, max_len: int = 64,
             restarts: int = 8, seed: int = 0, workers: int = 1
             ) -> EvalReport:
    """Decode and score (source tokens, gold graph) pairs for one language.

    Every sentence contributes: unrestorable decodes score against a
    single-node placeholder graph rather than being skipped.
    """
    test = list(test)
    if not test:
        raise ValueError("empty test set")
    decoded = [_decode_graph(params, src_vocab, tgt_vocab, language, src,
                             max_len) for src, _ in test]
    pairs = [(graph, gold) for (_, graph), (_, gold)
             in zip(decoded, test)]
    corpus, per_pair = smatch.corpus_smatch_detailed(
        pairs, restarts=restarts, seed=seed, workers=workers)
    records = tuple(
        SentenceRecord(tuple(src), hyp, penman.serialize_penman(graph),
                       score.f1, score.matched, score.total_left,
                       score.total_right)
        for (src, _), (hyp, graph), score in zip(test, decoded, per_pair))
    return EvalReport(language, k, corpus, records, fine_tune_lr, seed)


def evaluate_cell(params, src_vocab, tgt_vocab, test, language: str,
                  shots=(), k: int = 0, lr: float = 1e-5, epochs: int = 1,
                  max_len: int = 64, restarts: int = 8, seed: int = 0,
                  workers: int = 1, loss_and_grad=_model.loss_and_grad
                  ) -> EvalReport:
    """Fine-tune on k shots (seeded), then evaluate. params is untouched."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(hash_lang(language),
                                                        k)))
    adapted = kshot_finetune(params, list(shots), k, lr, rng, epochs=epochs,
                             loss_and_grad=loss_and_grad)
    return evaluate(adapted, src_vocab, tgt_vocab, test, language, k=k,
                    fine_tune_lr=lr, max_len=max_len, restarts=restarts,
                    seed=seed, workers=workers)


def hash_lang(language: str) -> int:
    """Stable small integer for seeding per-language streams."""
    h = 0
    for ch in language:
        h = (h * 131 + ord(ch)) % (2 ** 31)
    return h


# -- report files and the comparison grid -------------------------------


def report_lines(label: str, report: EvalReport):
    """One summary record plus one record per sentence, as JSON strings."""
    s = report.smatch
    yield json.dumps({"type": "summary", "model": label,
                      "language": report.language, "k": report.k,
                      "precision": s.precision, "recall": s.recall,
                      "f1": s.f1, "matched": s.matched,
                      "total_left": s.total_left,
                      "total_right": s.total_right,
                      "fine_tune_lr": report.fine_tune_lr,
                      "seed": report.seed}, sort_keys=True)
    for i, rec in enumerate(report.records):
        yield json.dumps({"type": "sentence", "model": label,
                          "language": report.language, "k": report.k,
                          "index": i, "source": " ".join(rec.source),
                          "hypothesis": " ".join(rec.hypothesis),
                          "restored": rec.restored, "f1": rec.f1,
                          "matched": rec.matched,
                          "total_left": rec.total_left,
                          "total_right": rec.total_right}, sort_keys=True)


def write_reports(path, label: str, reports):
    with open(path, "w", encoding="utf-8") as fh:
        for report in reports:
            for line in report_lines(label, report):
                fh.write(line + "\n")


def read_summaries(path):
    """Summary records from a report file."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("type") == "summary":
                out.append(rec)
    return out


def compare_runs(summaries) -> dict:
    """Arrange summary records into the models x k grid.

    Rows are (model, k) sorted; columns are languages plus their unweighted
    mean. Non-baseline rows also carry per-language deltas against the
    first model at the same k. The grid must be complete and free of
    duplicates.
    """
    summaries = list(summaries)
    if not summaries:
        raise GridMismatch("no summary records")
    models = sorted({s["model"] for s in summaries})
    ks = sorted({s["k"] for s in summaries})
    languages = sorted({s["language"] for s in summaries})
    cells = {}
    for s in summaries:
        key = (s["model"], s["k"], s["language"])
        if key in cells:
            raise GridMismatch("duplicate cell %r" % (key,))
        cells[key] = s["f1"]
    missing = [(m, k, l) for m in models for k in ks for l in languages
               if (m, k, l) not in cells]
    if missing:
        raise GridMismatch("missing cells: %s" % (missing,))

    rows = []
    for model in models:
        for k in ks:
            f1 = {lang: cells[(model, k, lang)] for lang in languages}
            avg = sum(f1.values()) / len(languages)
            delta = None
            if model != models[0]:
                delta = {lang: f1[lang] - cells[(models[0], k, lang)]
                         for lang in languages}
            rows.append({"model": model, "k": k, "f1": f1, "avg": avg,
                         "delta": delta})
    return {"models": models, "ks": ks, "languages": languages,
            "rows": rows}


def render_table(table: dict) -> str:
    """TSV: one row per model x k, one value column per language plus avg.
    Delta rows follow as comments."""
    languages = table["languages"]
    lines = ["\t".join(["model", "k"] + languages + ["avg"])]
    for row in table["rows"]:
        cells = ["%.4f" % row["f1"][lang] for lang in languages]
        lines.append("\t".join([row["model"], str(row["k"])] + cells
                               + ["%.4f" % row["avg"]]))
    for row in table["rows"]:
        if row["delta"] is None:
            continue
        cells = ["%+.4f" % row["delta"][lang] for lang in languages]
        mean = sum(row["delta"].values()) / len(languages)
        lines.append("# delta\t%s@k=%d\t%s\t%+.4f"
                     % (row["model"], row["k"], "\t".join(cells), mean))
    return "\n".join(lines) + "\n"
