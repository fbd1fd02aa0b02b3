"""Corpus readers, vocabularies, and the synthetic cipher families."""
import hashlib
import json
import os

import pytest

from metamr import data as D
from metamr.model import BOS, EOS, UNK, Vocab, lang_tag
from metamr.penman import parse_penman, validate


CORPUS_TEXT = "\n".join([
    "# plain comment block",          # 1: comments alone, silently skipped
    "",
    "# ::id x1",                      # 3
    "# ::snt The dog eats .",
    "(e / eat-01",
    "   :ARG0 (d / dog))",
    "",
    "# ::id x2",                      # 8: missing snt
    "(d / dog)",
    "",
    "# ::snt broken",                 # 11: graph does not parse
    "(e / eat-01",
    "",
    "# ::snt meta only",              # 14: no graph at all
    "",
    "# ::snt last",                   # 16
    "(g / go-02)",
]) + "\n"


# -- block-format corpus -------------------------------------------------

def test_load_amr_corpus_entries_and_warnings(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text(CORPUS_TEXT, encoding="utf-8")
    corpus = D.load_amr_corpus(path)
    assert corpus.source_path == str(path)
    assert [e.sentence for e in corpus.entries] == ["The dog eats .", "last"]
    first = corpus.entries[0]
    assert first.meta("id") == "x1"
    assert first.meta("missing") is None
    assert first.graph == parse_penman("(e / eat-01 :ARG0 (d / dog))")
    assert len(corpus.warnings) == 3
    assert corpus.warnings[0].startswith("line 8:")
    assert "snt" in corpus.warnings[0]
    assert corpus.warnings[1].startswith("line 11:")
    assert corpus.warnings[2] == "line 14: record has no graph"


def test_dump_amr_corpus_format():
    entry = D.CorpusEntry((("id", "7"), ("snt", "S")), "S",
                          parse_penman("(d / dog)"))
    assert D.dump_amr_corpus([entry]) == "# ::snt S\n# ::id 7\n(d / dog)\n"


def test_corpus_roundtrip(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text(CORPUS_TEXT, encoding="utf-8")
    corpus = D.load_amr_corpus(path)
    again_path = tmp_path / "again.txt"
    again_path.write_text(D.dump_amr_corpus(corpus.entries),
                          encoding="utf-8")
    again = D.load_amr_corpus(again_path)
    assert again.warnings == ()
    assert [e.sentence for e in again.entries] == \
        [e.sentence for e in corpus.entries]
    assert [e.graph for e in again.entries] == \
        [e.graph for e in corpus.entries]


# -- parallel TSV --------------------------------------------------------

def _write(tmp_path, text):
    path = tmp_path / "rows.tsv"
    path.write_text(text, encoding="utf-8")
    return path


def test_read_parallel_rows(tmp_path):
    path = _write(tmp_path, "de\tein hund\t( c01 )\n"
                            "\n"
                            "fr\tun chien\t( c01 )\n")
    rows = D.read_parallel_rows(path)
    assert [r.language for r in rows] == ["de", "fr"]
    assert rows[0].source == ("ein", "hund")
    assert rows[0].target == ("(", "c01", ")")
    assert [r.line for r in rows] == [1, 3]


def test_read_parallel_rows_column_count(tmp_path):
    path = _write(tmp_path, "de\tok\t( c01 )\nde\tonly two\n")
    with pytest.raises(D.ColumnCount, match=":2: expected 3 columns, got 2"):
        D.read_parallel_rows(path)


def test_read_parallel_rows_empty_field(tmp_path):
    path = _write(tmp_path, "de\t\t( c01 )\n")
    with pytest.raises(D.EmptyField, match=":1: empty column"):
        D.read_parallel_rows(path)


def test_build_vocab_orders_by_frequency_then_token():
    rows = [
        D.ParallelRow("de", ("b", "a", "b"), ("X", "Y")),
        D.ParallelRow("fr", ("a", "b", "c"), ("Y",)),
    ]
    src, tgt = D.build_vocab(rows)
    tags = [lang_tag("de"), lang_tag("fr")]
    assert src.tokens[4:] == tuple(tags) + ("b", "a", "c")
    assert tgt.tokens[4:] == ("Y", "X")


def test_build_vocab_min_count_falls_through_to_unk():
    rows = [D.ParallelRow("de", ("a", "a", "rare"), ("t", "t"))]
    src, _ = D.build_vocab(rows, min_count=2)
    assert src.encode("a") != UNK
    assert src.encode("rare") == UNK
    assert src.encode(lang_tag("de")) != UNK


def test_build_vocab_extra_languages():
    rows = [D.ParallelRow("de", ("a",), ("t",))]
    src, _ = D.build_vocab(rows, extra_languages=("zz",))
    assert src.encode(lang_tag("zz")) != UNK
    with pytest.raises(ValueError):
        D.build_vocab([])


def test_encode_row_shapes():
    rows = [D.ParallelRow("de", ("a", "b"), ("(", "c01", ")"))]
    src, tgt = D.build_vocab(rows)
    example = D.encode_row(rows[0], src, tgt)
    assert example.language == "de"
    assert example.src[0] == src.encode(lang_tag("de"))
    assert example.src[-1] == EOS
    assert len(example.src) == 4
    assert example.tgt[0] == BOS and example.tgt[-1] == EOS
    assert len(example.tgt) == 5


def test_load_parallel_tsv_groups_and_sorts(tmp_path):
    path = _write(tmp_path, "fr\tun\t( c01 )\n"
                            "de\tein\t( c02 )\n"
                            "fr\tdeux\t( c03 )\n")
    datasets, (src, tgt) = D.load_parallel_tsv(path)
    assert [d.language for d in datasets] == ["de", "fr"]
    assert len(datasets[1].examples) == 2
    # File order kept within each language.
    assert datasets[1].examples[0].src[1] == src.encode("un")


# -- synthetic specs -----------------------------------------------------

def test_spec_language_partitions():
    spec = D.SyntheticSpec(num_languages=5, heldout_languages=2)
    assert spec.languages == ("l00", "l01", "l02", "l03", "l04")
    assert spec.train_languages == ("l00", "l01", "l02")
    assert spec.heldout == ("l03", "l04")


@pytest.mark.parametrize("kwargs", [
    {"num_languages": 0},
    {"num_languages": 2, "heldout_languages": 2},
    {"heldout_languages": -1},
    {"vocab_size": 0},
    {"min_len": 0},
    {"min_len": 5, "max_len": 4},
    {"train_size": 0},
    {"num_languages": 2, "swap_languages": (2,)},
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        D.SyntheticSpec(**kwargs)


def test_spec_json_roundtrip():
    spec = D.SyntheticSpec(seed=3, num_languages=6, heldout_languages=2,
                           swap_languages=(1, 4))
    assert D.SyntheticSpec.from_json(spec.to_json()) == spec
    with pytest.raises(ValueError):
        D.SyntheticSpec.from_json('{"seed": 1, "order": "free"}')
    with pytest.raises(ValueError):
        D.SyntheticSpec.from_json("[]")


# -- chain targets -------------------------------------------------------

def test_chain_target_layout():
    assert D.chain_target((3, 0, 2)) == (
        "(", "c03", ":ARG0", "(", "c00", ":ARG1", "(", "c02", ")", ")", ")")
    assert D.chain_target((5,)) == ("(", "c05", ")")


def test_chain_target_restores_to_valid_graph():
    graph = D.gold_graph(D.chain_target((1, 2)))
    assert graph == parse_penman("(v0 / c01 :ARG0 (v1 / c02))")
    assert validate(graph) == []


def test_gold_graph_fallback_for_junk():
    graph = D.gold_graph(("/",))
    assert list(graph.nodes.values()) == ["amr-empty"]


# -- synthetic families --------------------------------------------------

SMALL = D.SyntheticSpec(seed=11, num_languages=3, heldout_languages=1,
                        vocab_size=8, min_len=2, max_len=4,
                        train_size=12, dev_size=6, test_size=4)


def _pivot_ids(row):
    return [int(tok[1:]) for tok in row.target if tok.startswith("c")]


def test_family_shapes_and_splits():
    family = D.generate_synthetic(SMALL)
    assert [d.language for d in family.train] == ["l00", "l01"]
    assert [d.language for d in family.dev] == ["l00", "l01", "l02"]
    assert [d.language for d in family.pools] == ["l02"]
    assert all(len(d.examples) == 12 for d in family.train)
    assert all(len(d.examples) == 6 for d in family.dev)
    assert all(len(d.examples) == 4 for d in family.test)


def test_language_zero_is_identity_cipher():
    family = D.generate_synthetic(SMALL)
    for split, row in family.rows:
        if row.language != "l00":
            continue
        assert list(row.source) == ["w%02d" % i for i in _pivot_ids(row)]


def test_targets_are_shared_across_languages():
    family = D.generate_synthetic(SMALL)
    by_split_lang = {}
    for split, row in family.rows:
        by_split_lang.setdefault((split, row.language), []).append(row)
    for split in ("train", "dev", "test"):
        langs = SMALL.train_languages if split == "train" else SMALL.languages
        reference = [r.target for r in by_split_lang[(split, langs[0])]]
        for lang in langs[1:]:
            assert [r.target
                    for r in by_split_lang[(split, lang)]] == reference


def test_ciphers_are_bijective_per_language():
    family = D.generate_synthetic(SMALL)
    mapping = {}
    for split, row in family.rows:
        if row.language != "l01":
            continue
        for pivot_id, surface in zip(_pivot_ids(row), row.source):
            assert mapping.setdefault(pivot_id, surface) == surface
    assert len(set(mapping.values())) == len(mapping)


def test_swap_languages_exchange_adjacent_tokens():
    spec = D.SyntheticSpec(seed=11, num_languages=1, heldout_languages=0,
                           vocab_size=8, min_len=2, max_len=5,
                           train_size=10, dev_size=2, test_size=2,
                           swap_languages=(0,))
    family = D.generate_synthetic(spec)
    for split, row in family.rows:
        plain = ["w%02d" % i for i in _pivot_ids(row)]
        for j in range(0, len(plain) - 1, 2):
            plain[j], plain[j + 1] = plain[j + 1], plain[j]
        assert list(row.source) == plain


def test_generation_is_deterministic():
    first = D.generate_synthetic(SMALL)
    second = D.generate_synthetic(SMALL)
    assert first.rows == second.rows
    assert first.src_vocab == second.src_vocab
    assert first.train == second.train


def test_family_restores_to_valid_graphs():
    family = D.generate_synthetic(SMALL)
    for split, row in family.rows[:20]:
        assert validate(D.gold_graph(row.target)) == []


# -- on-disk family ------------------------------------------------------

def _tree_bytes(root):
    out = {}
    for base, _, names in os.walk(root):
        for name in names:
            full = os.path.join(base, name)
            rel = os.path.relpath(full, root)
            with open(full, "rb") as fh:
                out[rel] = fh.read()
    return out


def test_write_family_checksums_match_files(tmp_path):
    family = D.generate_synthetic(SMALL)
    manifest = D.write_family(family, tmp_path / "fam")
    assert set(manifest["checksums"]) == {
        "train.tsv", "dev.tsv", "test.tsv",
        "vocab_src.txt", "vocab_tgt.txt", "shots/l02.tsv"}
    for rel, digest in manifest["checksums"].items():
        with open(tmp_path / "fam" / rel.replace("/", os.sep), "rb") as fh:
            assert hashlib.sha256(fh.read()).hexdigest() == digest
    assert manifest["splits"]["train"] == {"l00": 12, "l01": 12}
    assert manifest["splits"]["dev"] == {"l00": 6, "l01": 6, "l02": 6}
    assert D.SyntheticSpec.from_json(json.dumps(manifest["spec"])) == SMALL


def test_write_family_is_byte_identical(tmp_path):
    D.write_family(D.generate_synthetic(SMALL), tmp_path / "a")
    D.write_family(D.generate_synthetic(SMALL), tmp_path / "b")
    first, second = _tree_bytes(tmp_path / "a"), _tree_bytes(tmp_path / "b")
    assert first.keys() == second.keys()
    assert all(first[rel] == second[rel] for rel in first)


def test_written_tsv_reloads_to_the_same_datasets(tmp_path):
    family = D.generate_synthetic(SMALL)
    D.write_family(family, tmp_path / "fam")
    datasets, _ = D.load_parallel_tsv(
        tmp_path / "fam" / "train.tsv",
        vocabs=(family.src_vocab, family.tgt_vocab))
    assert tuple(datasets) == family.train


def test_vocab_file_roundtrip(tmp_path):
    family = D.generate_synthetic(SMALL)
    path = tmp_path / "vocab.txt"
    path.write_text(D.dump_vocab(family.src_vocab), encoding="utf-8")
    assert D.load_vocab_file(path) == family.src_vocab
    path.write_text(D.dump_vocab(family.src_vocab) + "\n\n",
                    encoding="utf-8")
    assert D.load_vocab_file(path) == family.src_vocab
