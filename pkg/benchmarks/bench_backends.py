"""Compare the compiled and pure-Python kernel backends.

Times each kernel on shapes typical for the desk-scale model, then times a
full loss-plus-gradient pass in a subprocess per backend (the backend is
fixed at import time, so end-to-end numbers need separate interpreters).

Run:  python benchmarks/bench_backends.py [--repeat 200]
"""
import argparse
import importlib
import json
import subprocess
import sys
import time

import numpy as np

from metamr.kernels import _pykernels

B, T, E, H, V = 16, 24, 32, 64, 40


def _cases(rng):
    a = rng.normal(size=(B, E))
    w = rng.normal(size=(E, 3 * H))
    g3 = rng.normal(size=(B, 3 * H))
    h = rng.normal(size=(B, H))
    enc = rng.normal(size=(B, T, H))
    att = rng.normal(size=(B, T))
    logits = rng.normal(size=(B, V))
    probs = _pykernels.softmax_rows(logits)
    ids = rng.integers(0, V, size=B)
    table = rng.normal(size=(V, E))
    bias = rng.normal(size=3 * H)
    return [
        ("matmul", lambda k: k.matmul(a, w)),
        ("matmul_nt", lambda k: k.matmul_nt(g3, w)),
        ("matmul_tn", lambda k: k.matmul_tn(a, g3)),
        ("ewadd", lambda k: k.ewadd(g3, g3)),
        ("ewmul", lambda k: k.ewmul(g3, g3)),
        ("affine", lambda k: k.affine(h, -1.0, 1.0)),
        ("add_rowbias", lambda k: k.add_rowbias(g3, bias)),
        ("colsum", lambda k: k.colsum(g3)),
        ("tanh", lambda k: k.tanh(h)),
        ("tanh_vjp", lambda k: k.tanh_vjp(np.tanh(h), h)),
        ("sigmoid", lambda k: k.sigmoid(h)),
        ("sigmoid_vjp", lambda k: k.sigmoid_vjp(probs[:, :H] if H <= V
                                                else np.abs(h), h)),
        ("softmax_rows", lambda k: k.softmax_rows(logits)),
        ("softmax_rows_vjp", lambda k: k.softmax_rows_vjp(probs, logits)),
        ("embedding_fwd", lambda k: k.embedding_fwd(table, ids)),
        ("embedding_vjp", lambda k: k.embedding_vjp(V, E, ids, a)),
        ("attn_scores", lambda k: k.attn_scores(enc, h)),
        ("attn_scores_vjp", lambda k: k.attn_scores_vjp(enc, h, att)),
        ("attn_context", lambda k: k.attn_context(enc, att)),
        ("attn_context_vjp", lambda k: k.attn_context_vjp(enc, att, h)),
        ("cross_entropy_fwd", lambda k: k.cross_entropy_fwd(logits, ids, -1)),
        ("cross_entropy_vjp", lambda k: k.cross_entropy_vjp(probs, ids, -1,
                                                            1.0)),
    ]


def bench_kernels(repeat: int):
    try:
        ck = importlib.import_module("metamr.kernels._ckernels")
    except ImportError:
        ck = None
        print("compiled backend unavailable; timing python only\n")
    rng = np.random.default_rng(0)
    cases = _cases(rng)
    print("%-20s %12s %12s %8s" % ("kernel", "python us", "cython us",
                                   "speedup"))
    for name, fn in cases:
        fn(_pykernels)  # warm
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn(_pykernels)
        py_us = (time.perf_counter() - t0) / repeat * 1e6
        if ck is None:
            print("%-20s %12.1f %12s %8s" % (name, py_us, "-", "-"))
            continue
        fn(ck)
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn(ck)
        cy_us = (time.perf_counter() - t0) / repeat * 1e6
        print("%-20s %12.1f %12.1f %7.2fx"
              % (name, py_us, cy_us, py_us / max(cy_us, 1e-9)))


_E2E = r"""
import json, time
import numpy as np
from metamr import kernels, model as M

rng = np.random.default_rng(7)
src_v = M.Vocab.build(tuple("s%02d" % i for i in range(30)), ("aa", "bb"))
tgt_v = M.Vocab.build(tuple("t%02d" % i for i in range(30)))
cfg = M.ModelConfig(len(src_v), len(tgt_v), emb_dim=32, hidden_dim=64)
params = M.init_params(cfg, seed=1)
batch = []
for _ in range(8):
    n = int(rng.integers(4, 10))
    src = (4,) + tuple(int(x) for x in rng.integers(6, 34, size=n)) + (M.EOS,)
    tgt = (M.BOS,) + tuple(int(x) for x in rng.integers(4, 34, size=2 * n)) \
        + (M.EOS,)
    batch.append(M.Example("aa", src, tgt))
M.loss_and_grad(params, batch)
t0 = time.perf_counter()
for _ in range(30):
    M.loss_and_grad(params, batch)
ms = (time.perf_counter() - t0) / 30 * 1e3
print(json.dumps({"backend": kernels.BACKEND, "ms": ms}))
"""


def bench_end_to_end():
    print("\nloss_and_grad, batch of 8 (per call):")
    import os
    for backend in ("python", "cython"):
        env = dict(os.environ, METAMR_KERNELS=backend)
        proc = subprocess.run([sys.executable, "-c", _E2E], env=env,
                              capture_output=True, text=True)
        if proc.returncode != 0:
            print("  %-8s unavailable (%s)"
                  % (backend, proc.stderr.strip().splitlines()[-1]))
            continue
        rec = json.loads(proc.stdout.strip().splitlines()[-1])
        print("  %-8s %8.2f ms" % (rec["backend"], rec["ms"]))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_end_to_end()


if __name__ == "__main__":
    main()
