"""A deliberately small attention seq2seq for linearized AMR.

Single-layer GRU encoder, GRU decoder with dot-product attention over the
encoder states, output projection over [context; hidden]. All parameters
live in one flat float64 vector described by a (name, shape) registry, which
keeps SGD updates, meta-learning arithmetic, and checkpointing trivial.

Source sequences carry a language tag up front and EOS at the end; target
sequences are BOS ... EOS. Decoding is greedy, ties resolved toward the
lowest token id.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, backward


PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


class CheckpointError(Exception):
    pass


def lang_tag(code: str) -> str:
    return "<%s>" % code


@dataclass(frozen=True)
class Vocab:
    """Token <-> id bijection with pinned special ids."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.tokens[:4] != SPECIALS:
            raise ValueError("vocab must start with %r" % (SPECIALS,))
        index = {}
        for i, tok in enumerate(self.tokens):
            if tok in index:
                raise ValueError("duplicate token %r" % tok)
            index[tok] = i
        object.__setattr__(self, "_index", index)

    @classmethod
    def build(cls, regular_tokens, language_codes=()):
        """Specials, then language tags (sorted), then regular tokens."""
        tags = tuple(lang_tag(c) for c in sorted(set(language_codes)))
        rest = tuple(t for t in regular_tokens if t not in tags)
        return cls(SPECIALS + tags + rest)

    def __len__(self):
        return len(self.tokens)

    def encode(self, token: str) -> int:
        return self._index.get(token, UNK)

    def decode(self, idx: int) -> str:
        return self.tokens[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._index


@dataclass(frozen=True)
class Example:
    """One encoded sentence pair."""

    language: str
    src: tuple[int, ...]  # <lang> tok ... tok <eos>
    tgt: tuple[int, ...]  # <bos> tok ... tok <eos>


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    emb_dim: int = 32
    hidden_dim: int = 64


def registry(config: ModelConfig):
    """Ordered (name, shape) layout of the flat parameter vector."""
    e, h = config.emb_dim, config.hidden_dim
    return [
        ("src_embed", (config.src_vocab, e)),
        ("enc_in_w", (e, 3 * h)),
        ("enc_rec_w", (h, 3 * h)),
        ("enc_bias", (3 * h,)),
        ("tgt_embed", (config.tgt_vocab, e)),
        ("dec_in_w", (e, 3 * h)),
        ("dec_rec_w", (h, 3 * h)),
        ("dec_bias", (3 * h,)),
        ("attn_w", (h, h)),
        ("out_w", (2 * h, config.tgt_vocab)),
        ("out_b", (config.tgt_vocab,)),
    ]


class ModelParams:
    """Flat parameter vector plus its registry.

    ``block(name)`` returns a reshaped view into the flat vector; treat the
    storage as immutable and build updated copies via ``with_flat``.
    """

    def __init__(self, config: ModelConfig, flat: np.ndarray):
        self.config = config
        self.registry = registry(config)
        expected = sum(int(np.prod(s)) for _, s in self.registry)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (expected,):
            raise ValueError("flat vector has %r entries, registry wants %d"
                             % (flat.shape, expected))
        self.flat = flat
        self._offsets = {}
        off = 0
        for name, shape in self.registry:
            size = int(np.prod(shape))
            self._offsets[name] = (off, shape)
            off += size

    def block(self, name: str) -> np.ndarray:
        off, shape = self._offsets[name]
        return self.flat[off:off + int(np.prod(shape))].reshape(shape)

    def with_flat(self, flat: np.ndarray) -> "ModelParams":
        return ModelParams(self.config, flat)

    def clone(self) -> "ModelParams":
        return ModelParams(self.config, self.flat.copy())


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(fan_in)) weights, uniform(+-0.1) embeddings, zero
    biases. Deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in registry(config):
        if name.endswith("_embed"):
            chunks.append(rng.uniform(-0.1, 0.1, size=shape).ravel())
        elif name.endswith("_bias") or name.endswith("_b"):
            chunks.append(np.zeros(int(np.prod(shape))))
        else:
            s = 1.0 / np.sqrt(shape[0])
            chunks.append(rng.uniform(-s, s, size=shape).ravel())
    return ModelParams(config, np.concatenate(chunks))


def _leaves(tape_params: ModelParams):
    return {name: Tensor(tape_params.block(name))
            for name, _ in tape_params.registry}


def _gru_step(tape: Tape, p, prefix: str, x: Tensor, h: Tensor,
              hidden: int) -> Tensor:
    """One GRU cell update: x (B,E), h (B,H) -> new h (B,H)."""
    gx = tape.add(tape.matmul(x, p[prefix + "_in_w"]), p[prefix + "_bias"])
    gh = tape.matmul(h, p[prefix + "_rec_w"])
    z = tape.sigmoid(tape.add(tape.slice_cols(gx, 0, hidden),
                              tape.slice_cols(gh, 0, hidden)))
    r = tape.sigmoid(tape.add(tape.slice_cols(gx, hidden, 2 * hidden),
                              tape.slice_cols(gh, hidden, 2 * hidden)))
    cand = tape.tanh(tape.add(
        tape.slice_cols(gx, 2 * hidden, 3 * hidden),
        tape.multiply(r, tape.slice_cols(gh, 2 * hidden, 3 * hidden))))
    keep = tape.multiply(tape.affine(z, -1.0, 1.0), h)
    return tape.add(keep, tape.multiply(z, cand))


def _pad_batch(batch):
    """Pad a batch of Examples to rectangular id arrays.

    Returns (src (B,Ts), src_mask (B,Ts) float, tgt_in (B,Tt),
    tgt_out (B,Tt)). tgt_in drops the final token of each target, tgt_out
    drops the first, so position t of tgt_out is the label for tgt_in[:, t].
    """
    bsz = len(batch)
    ts = max(len(ex.src) for ex in batch)
    tt = max(len(ex.tgt) for ex in batch) - 1
    src = np.full((bsz, ts), PAD, dtype=np.int64)
    mask = np.zeros((bsz, ts))
    tgt_in = np.full((bsz, tt), PAD, dtype=np.int64)
    tgt_out = np.full((bsz, tt), PAD, dtype=np.int64)
    for i, ex in enumerate(batch):
        src[i, :len(ex.src)] = ex.src
        mask[i, :len(ex.src)] = 1.0
        n = len(ex.tgt) - 1
        tgt_in[i, :n] = ex.tgt[:-1]
        tgt_out[i, :n] = ex.tgt[1:]
    return src, mask, tgt_in, tgt_out


def _encode(tape: Tape, p, config: ModelConfig, src, mask):
    """Run the encoder. Returns (enc_states (B,Ts,H), final hidden (B,H))."""
    bsz, ts = src.shape
    h = Tensor(np.zeros((bsz, config.hidden_dim)))
    states = []
    for t in range(ts):
        x = tape.embedding_lookup(p["src_embed"], src[:, t])
        h_new = _gru_step(tape, p, "enc", x, h, config.hidden_dim)
        m = np.repeat(mask[:, t:t + 1], config.hidden_dim, axis=1)
        h = tape.add(tape.multiply(Tensor(m), h_new),
                     tape.multiply(Tensor(1.0 - m), h))
        states.append(h)
    return tape.stack_steps(states), h


def _decode_step(tape: Tape, p, config: ModelConfig, enc, neg_mask,
                 y_ids, h):
    """One teacher-forced decoder step. Returns (logits (B,V), new h)."""
    x = tape.embedding_lookup(p["tgt_embed"], y_ids)
    h = _gru_step(tape, p, "dec", x, h, config.hidden_dim)
    q = tape.matmul(h, p["attn_w"])
    scores = tape.add(tape.attn_scores(enc, q), neg_mask)
    weights = tape.softmax_rows(scores)
    ctx = tape.attn_context(enc, weights)
    both = tape.concat_rows(ctx, h)
    logits = tape.add(tape.matmul(both, p["out_w"]), p["out_b"])
    return logits, h


def _loss_graph(params: ModelParams, batch):
    """Build the teacher-forcing loss graph.

    Returns (scalar loss tensor, tape, leaf dict, non-PAD target count).
    """
    if not batch:
        raise ValueError("empty batch")
    tape = Tape()
    p = _leaves(params)
    src, mask, tgt_in, tgt_out = _pad_batch(batch)
    enc, h = _encode(tape, p, params.config, src, mask)
    neg_mask = Tensor((1.0 - mask) * -1e9)

    count = int((tgt_out != PAD).sum())
    total = None
    for t in range(tgt_in.shape[1]):
        logits, h = _decode_step(tape, p, params.config, enc, neg_mask,
                                 tgt_in[:, t], h)
        step = tape.cross_entropy(logits, tgt_out[:, t], ignore_id=PAD)
        total = step if total is None else tape.add(total, step)
    return tape.affine(total, 1.0 / count, 0.0), tape, p, count


def loss(params: ModelParams, batch) -> float:
    """Teacher-forced mean cross-entropy over all non-PAD target positions.

    Invariant under batch duplication: scoring [ex] and [ex, ex] gives the
    same value bit for bit.
    """
    value, _, _, _ = _loss_graph(params, batch)
    return float(value.data)


def loss_and_grad(params: ModelParams, batch) -> tuple[float, np.ndarray]:
    """Loss plus the flat gradient vector, registry order."""
    value, tape, p, _ = _loss_graph(params, batch)
    order = [name for name, _ in params.registry]
    grads = backward(tape, value, [p[name] for name in order])
    return float(value.data), np.concatenate([g.ravel() for g in grads])


def generate_greedy(params: ModelParams, src_ids, max_len: int = 64):
    """Greedily decode one source id sequence. Returns emitted ids without
    BOS/EOS; stops at EOS or after max_len tokens."""
    tape = Tape()
    p = _leaves(params)
    src = np.asarray(src_ids, dtype=np.int64)[None, :]
    mask = np.ones_like(src, dtype=np.float64)
    enc, h = _encode(tape, p, params.config, src, mask)
    neg_mask = Tensor(np.zeros((1, src.shape[1])))

    out = []
    prev = np.array([BOS], dtype=np.int64)
    for _ in range(max_len):
        logits, h = _decode_step(tape, p, params.config, enc, neg_mask,
                                 prev, h)
        nxt = int(np.argmax(logits.data[0]))
        if nxt == EOS:
            break
        out.append(nxt)
        prev = np.array([nxt], dtype=np.int64)
    return out


# -- checkpoint io -----------------------------------------------------

MAGIC = b"MAMR"
VERSION = 1


def _write_str(fh, s: str):
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n).decode("utf-8")


def save_checkpoint(path, params: ModelParams, src_vocab: Vocab,
                    tgt_vocab: Vocab):
    """Binary checkpoint: magic, version, dims, vocabs, registry, float32
    parameters. Little-endian throughout."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<II", params.config.emb_dim,
                             params.config.hidden_dim))
        for vocab in (src_vocab, tgt_vocab):
            fh.write(struct.pack("<I", len(vocab)))
            for tok in vocab.tokens:
                _write_str(fh, tok)
        fh.write(struct.pack("<I", len(params.registry)))
        for name, shape in params.registry:
            _write_str(fh, name)
            fh.write(struct.pack("<I", len(shape)))
            fh.write(struct.pack("<%dI" % len(shape), *shape))
        fh.write(params.flat.astype("<f4").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint. Returns (params, src_vocab, tgt_vocab).

    Parameters come back float64 but carry only float32 precision; saving
    again reproduces the same bytes.
    """
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError("bad magic; not a model checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError("unsupported version %d" % version)
        emb_dim, hidden_dim = struct.unpack("<II", fh.read(8))
        vocabs = []
        for _ in range(2):
            (n,) = struct.unpack("<I", fh.read(4))
            vocabs.append(Vocab(tuple(_read_str(fh) for _ in range(n))))
        src_vocab, tgt_vocab = vocabs
        config = ModelConfig(src_vocab=len(src_vocab),
                             tgt_vocab=len(tgt_vocab),
                             emb_dim=emb_dim, hidden_dim=hidden_dim)
        (nblocks,) = struct.unpack("<I", fh.read(4))
        stored = []
        for _ in range(nblocks):
            name = _read_str(fh)
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack("<%dI" % ndim, fh.read(4 * ndim))
            stored.append((name, tuple(int(d) for d in shape)))
        expected = [(n, tuple(s)) for n, s in registry(config)]
        if stored != expected:
            raise CheckpointError("registry mismatch: %r != %r"
                                  % (stored, expected))
        total = sum(int(np.prod(s)) for _, s in expected)
        raw = fh.read(4 * total)
        if len(raw) != 4 * total or fh.read(1):
            raise CheckpointError("parameter payload has the wrong size")
        flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    return ModelParams(config, flat), src_vocab, tgt_vocab
