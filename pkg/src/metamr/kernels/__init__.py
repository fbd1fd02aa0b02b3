"""Dense-kernel backend selection.

Two interchangeable implementations of the same function set exist: a
compiled Cython extension (_ckernels) and a numpy fallback (_pykernels).
The compiled one is preferred when importable. Set METAMR_KERNELS=python or
METAMR_KERNELS=cython to force a choice; forcing cython raises if the
extension was not built.

The active backend is fixed for the life of the process, which keeps runs
deterministic. Results are NOT guaranteed bitwise-identical across the two
backends (summation order differs); they agree to ~1e-12.
"""
import os

_choice = os.environ.get("METAMR_KERNELS", "auto")

if _choice == "python":
    from . import _pykernels as impl
elif _choice == "cython":
    from . import _ckernels as impl  # type: ignore[no-redef]
elif _choice == "auto":
    try:
        from . import _ckernels as impl  # type: ignore[no-redef]
    except ImportError:
        from . import _pykernels as impl
else:
    raise RuntimeError("METAMR_KERNELS must be auto, python, or cython, "
                       "not %r" % _choice)

BACKEND = impl.BACKEND

matmul = impl.matmul
matmul_nt = impl.matmul_nt
matmul_tn = impl.matmul_tn
ewadd = impl.ewadd
ewmul = impl.ewmul
affine = impl.affine
add_rowbias = impl.add_rowbias
colsum = impl.colsum
tanh = impl.tanh
tanh_vjp = impl.tanh_vjp
sigmoid = impl.sigmoid
sigmoid_vjp = impl.sigmoid_vjp
softmax_rows = impl.softmax_rows
softmax_rows_vjp = impl.softmax_rows_vjp
embedding_fwd = impl.embedding_fwd
embedding_vjp = impl.embedding_vjp
attn_scores = impl.attn_scores
attn_scores_vjp = impl.attn_scores_vjp
attn_context = impl.attn_context
attn_context_vjp = impl.attn_context_vjp
cross_entropy_fwd = impl.cross_entropy_fwd
cross_entropy_vjp = impl.cross_entropy_vjp
