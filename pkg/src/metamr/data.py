"""Corpus ingestion, vocabularies, and synthetic language families.

Two on-disk formats come in: the block-structured AMR corpus format
(metadata lines, then a PENMAN graph, records separated by blank lines) and
a three-column parallel TSV (language code, source sentence, linearized
graph). The synthetic generator fabricates a family of cipher languages
over one shared base vocabulary so that cross-lingual transfer can be
studied end to end in seconds: every language expresses the same rows, the
targets are identical row for row, and surface forms differ by a bijective
token substitution (optionally plus local word-order swaps).
"""
from __future__ import annotations

import hashlib
import json
import os
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from . import penman
from .linearize import Unrestorable, restore
from .model import BOS, EOS, Example, Vocab, lang_tag
from .training import LanguageDataset


class ColumnCount(Exception):
    pass


class EmptyField(Exception):
    pass


@dataclass(frozen=True)
class CorpusEntry:
    metadata: tuple  # ((key, value), ...) in file order
    sentence: str
    graph: penman.AmrGraph

    def meta(self, key: str):
        for k, v in self.metadata:
            if k == key:
                return v
        return None


@dataclass(frozen=True)
class Corpus:
    entries: tuple
    source_path: str
    warnings: tuple


def load_amr_corpus(path) -> Corpus:
    """Parse a block-format AMR corpus file.

    Records are separated by blank lines; "# ::key value" lines carry
    metadata, other "#" lines are comments. A record needs a "snt" key and
    a graph that parses and validates; anything else is dropped with a
    warning naming its line.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    entries, warnings = [], []
    block, start = [], None
    blocks = []
    for num, line in enumerate(lines, start=1):
        if line.strip():
            if start is None:
                start = num
            block.append((num, line))
        elif block:
            blocks.append((start, block))
            block, start = [], None
    if block:
        blocks.append((start, block))

    for start, rows in blocks:
        meta, graph_lines = [], []
        for num, line in rows:
            if line.startswith("# ::"):
                body = line[4:].strip()
                key, _, value = body.partition(" ")
                meta.append((key, value.strip()))
            elif line.startswith("#"):
                continue
            else:
                graph_lines.append(line)
        if not graph_lines:
            if meta:
                warnings.append("line %d: record has no graph" % start)
            continue
        keys = dict(meta)
        if "snt" not in keys:
            warnings.append("line %d: record missing '# ::snt'" % start)
            continue
        try:
            graph = penman.parse_penman("\n".join(graph_lines))
        except penman.PenmanError as exc:
            warnings.append("line %d: %s" % (start, exc))
            continue
        problems = penman.validate(graph)
        if problems:
            warnings.append("line %d: %s" % (start, "; ".join(problems)))
            continue
        entries.append(CorpusEntry(tuple(meta), keys["snt"], graph))
    return Corpus(tuple(entries), str(path), tuple(warnings))


def dump_amr_corpus(entries) -> str:
    """Render entries back to the block format (snt first, then the rest)."""
    blocks = []
    for entry in entries:
        lines = ["# ::snt %s" % entry.sentence]
        for key, value in entry.metadata:
            if key != "snt":
                lines.append("# ::%s %s" % (key, value))
        lines.append(penman.serialize_penman(entry.graph))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


@dataclass(frozen=True)
class ParallelRow:
    language: str
    source: tuple  # surface tokens
    target: tuple  # linearized-graph tokens
    line: int = 0


def read_parallel_rows(path):
    """Read the 3-column TSV. Raises ColumnCount/EmptyField with the
    offending line number; blank lines are skipped."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for num, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ColumnCount("%s:%d: expected 3 columns, got %d"
                                  % (path, num, len(cols)))
            lang, sent, target = (c.strip() for c in cols)
            if not lang or not sent or not target:
                raise EmptyField("%s:%d: empty column" % (path, num))
            rows.append(ParallelRow(lang, tuple(sent.split()),
                                    tuple(target.split()), num))
    return rows


def build_vocab(rows, min_count: int = 1, extra_languages=()):
    """Source and target vocabularies over parallel rows.

    Tokens are ordered by descending frequency, ties broken
    lexicographically; tokens below min_count fall through to UNK.
    Language tags are always present regardless of counts.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to build a vocabulary from")
    src_counts, tgt_counts = Counter(), Counter()
    languages = set(extra_languages)
    for row in rows:
        languages.add(row.language)
        src_counts.update(row.source)
        tgt_counts.update(row.target)

    def ordered(counts):
        kept = [(tok, n) for tok, n in counts.items() if n >= min_count]
        kept.sort(key=lambda item: (-item[1], item[0]))
        return tuple(tok for tok, _ in kept)

    src = Vocab.build(ordered(src_counts), language_codes=sorted(languages))
    tgt = Vocab.build(ordered(tgt_counts))
    return src, tgt


def encode_source(language: str, tokens, vocab: Vocab):
    """Source id sequence: language tag, tokens, EOS."""
    return tuple([vocab.encode(lang_tag(language))]
                 + [vocab.encode(t) for t in tokens] + [EOS])


def encode_row(row: ParallelRow, src_vocab: Vocab,
               tgt_vocab: Vocab) -> Example:
    tgt = tuple([BOS] + [tgt_vocab.encode(t) for t in row.target] + [EOS])
    return Example(row.language, encode_source(row.language, row.source,
                                               src_vocab), tgt)


def group_rows(rows):
    """Rows grouped into per-language lists, language-sorted, file order
    kept within each language."""
    by_lang = {}
    for row in rows:
        by_lang.setdefault(row.language, []).append(row)
    return {lang: by_lang[lang] for lang in sorted(by_lang)}


def load_parallel_tsv(path, vocabs=None, min_count: int = 1):
    """Load a parallel TSV into per-language datasets.

    With vocabs=None a shared vocabulary pair is built from the file itself.
    Returns (datasets sorted by language, (src_vocab, tgt_vocab)).
    """
    rows = read_parallel_rows(path)
    if not rows:
        raise EmptyField("%s: no rows" % path)
    if vocabs is None:
        vocabs = build_vocab(rows, min_count=min_count)
    src_vocab, tgt_vocab = vocabs
    datasets = []
    for lang, group in group_rows(rows).items():
        examples = tuple(encode_row(r, src_vocab, tgt_vocab) for r in group)
        datasets.append(LanguageDataset(lang, examples))
    return datasets, (src_vocab, tgt_vocab)


# -- synthetic language families ---------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a family of cipher languages.

    num_languages counts all languages; the last heldout_languages of them
    are excluded from the train split. Language 0 keeps the identity cipher.
    Languages whose index appears in swap_languages additionally swap each
    adjacent token pair of the ciphered sentence.
    """

    seed: int = 0
    num_languages: int = 4
    heldout_languages: int = 1
    vocab_size: int = 20
    min_len: int = 2
    max_len: int = 6
    train_size: int = 128
    dev_size: int = 64
    test_size: int = 32
    swap_languages: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "swap_languages",
                           tuple(self.swap_languages))
        if self.num_languages < 1:
            raise ValueError("need at least one language")
        if not 0 <= self.heldout_languages < self.num_languages:
            raise ValueError("held-out count must be below num_languages")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("bad sentence length range")
        if min(self.train_size, self.dev_size, self.test_size) < 1:
            raise ValueError("split sizes must be positive")
        for i in self.swap_languages:
            if not 0 <= i < self.num_languages:
                raise ValueError("swap language index %r out of range" % i)

    @property
    def languages(self):
        return tuple("l%02d" % i for i in range(self.num_languages))

    @property
    def train_languages(self):
        return self.languages[:self.num_languages - self.heldout_languages]

    @property
    def heldout(self):
        return self.languages[self.num_languages - self.heldout_languages:]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("spec must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError("unknown spec fields: %s"
                             % ", ".join(sorted(extra)))
        return cls(**data)


@dataclass(frozen=True)
class SyntheticFamily:
    spec: SyntheticSpec
    src_vocab: Vocab
    tgt_vocab: Vocab
    train: tuple      # LanguageDataset per training language
    dev: tuple        # LanguageDataset per language, all of them
    test: tuple       # LanguageDataset per language, all of them
    pools: tuple      # LanguageDataset per held-out language (dev rows)
    rows: tuple       # ((split-name, ParallelRow), ...) for file output


def _word(i: int) -> str:
    return "w%02d" % i


def _concept(i: int) -> str:
    return "c%02d" % i


def chain_target(word_ids):
    """Linearize the chain graph for a pivot sentence.

    Token i becomes concept i; consecutive concepts are linked by :ARG0 and
    :ARG1 alternately, nesting to the right.
    """
    tokens = []
    for depth, wid in enumerate(word_ids):
        tokens += ["(", _concept(wid)]
        if depth + 1 < len(word_ids):
            tokens.append(":ARG0" if depth % 2 == 0 else ":ARG1")
    tokens += [")"] * len(word_ids)
    return tuple(tokens)


def _ciphers(spec: SyntheticSpec):
    """Per-language permutation of word indices; language 0 is identity."""
    perms = [np.arange(spec.vocab_size)]
    for i in range(1, spec.num_languages):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=spec.seed, spawn_key=(1, i)))
        perms.append(rng.permutation(spec.vocab_size))
    return perms


def _pivots(spec: SyntheticSpec, split_index: int, count: int):
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=spec.seed, spawn_key=(0, split_index)))
    rows = []
    for _ in range(count):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        rows.append(tuple(int(w) for w in
                          rng.integers(0, spec.vocab_size, size=n)))
    return rows


def _surface(spec: SyntheticSpec, lang_index: int, perm, pivot):
    tokens = [_word(int(perm[w])) for w in pivot]
    if lang_index in spec.swap_languages:
        for j in range(0, len(tokens) - 1, 2):
            tokens[j], tokens[j + 1] = tokens[j + 1], tokens[j]
    return tuple(tokens)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticFamily:
    """Build the full family: shared targets, per-language surfaces,
    train/dev/test splits, and dev-derived shot pools for held-out
    languages. Deterministic in the spec alone."""
    perms = _ciphers(spec)
    src_vocab = Vocab.build(tuple(_word(i) for i in range(spec.vocab_size)),
                            language_codes=spec.languages)
    tgt_vocab = Vocab.build(("(", ")", ":ARG0", ":ARG1")
                            + tuple(_concept(i)
                                    for i in range(spec.vocab_size)))

    split_sizes = (("train", spec.train_size), ("dev", spec.dev_size),
                   ("test", spec.test_size))
    all_rows = []
    datasets = {}
    for split_index, (split, count) in enumerate(split_sizes):
        pivots = _pivots(spec, split_index, count)
        langs = spec.train_languages if split == "train" else spec.languages
        for li, lang in enumerate(spec.languages):
            if lang not in langs:
                continue
            examples = []
            for pivot in pivots:
                row = ParallelRow(lang, _surface(spec, li, perms[li], pivot),
                                  chain_target(pivot))
                all_rows.append((split, row))
                examples.append(encode_row(row, src_vocab, tgt_vocab))
            datasets[(split, lang)] = LanguageDataset(lang, tuple(examples))

    train = tuple(datasets[("train", l)] for l in spec.train_languages)
    dev = tuple(datasets[("dev", l)] for l in spec.languages)
    test = tuple(datasets[("test", l)] for l in spec.languages)
    pools = tuple(datasets[("dev", l)] for l in spec.heldout)
    return SyntheticFamily(spec, src_vocab, tgt_vocab, train, dev, test,
                           pools, tuple(all_rows))


def rows_to_tsv(rows) -> str:
    lines = ["%s\t%s\t%s" % (r.language, " ".join(r.source),
                             " ".join(r.target)) for r in rows]
    return "\n".join(lines) + "\n" if lines else ""


def dump_vocab(vocab: Vocab) -> str:
    return "\n".join(vocab.tokens) + "\n"


def load_vocab_file(path) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    while tokens and tokens[-1] == "":
        tokens.pop()
    return Vocab(tuple(tokens))


def write_family(family: SyntheticFamily, out_dir) -> dict:
    """Write TSV splits, vocab files, held-out shot pools, and a manifest
    with checksums. Byte-identical for equal specs."""
    os.makedirs(out_dir, exist_ok=True)
    shots_dir = os.path.join(out_dir, "shots")
    os.makedirs(shots_dir, exist_ok=True)

    outputs = {}
    for split in ("train", "dev", "test"):
        rows = [r for s, r in family.rows if s == split]
        rows.sort(key=lambda r: r.language)
        outputs["%s.tsv" % split] = rows_to_tsv(rows)
    outputs["vocab_src.txt"] = dump_vocab(family.src_vocab)
    outputs["vocab_tgt.txt"] = dump_vocab(family.tgt_vocab)
    for pool in family.pools:
        dev_rows = [r for s, r in family.rows
                    if s == "dev" and r.language == pool.language]
        outputs[os.path.join("shots", "%s.tsv" % pool.language)] = \
            rows_to_tsv(dev_rows)

    checksums, sizes = {}, {}
    for rel, text in sorted(outputs.items()):
        full = os.path.join(out_dir, rel)
        data = text.encode("utf-8")
        with open(full, "wb") as fh:
            fh.write(data)
        checksums[rel.replace(os.sep, "/")] = \
            hashlib.sha256(data).hexdigest()
    for split, datasets_ in (("train", family.train), ("dev", family.dev),
                             ("test", family.test)):
        sizes[split] = {d.language: len(d.examples) for d in datasets_}

    manifest = {"spec": asdict(family.spec), "splits": sizes,
                "checksums": checksums}
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def gold_graph(target_tokens):
    """The reference graph a linearized target denotes (restore, with the
    single-node fallback for junk)."""
    try:
        return restore(list(target_tokens))
    except Unrestorable:
        return penman.parse_penman("(v0 / amr-empty)")
