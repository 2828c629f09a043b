"""JIT switch and the atomic claim primitive.

Set ``TETADAPT_DISABLE_JIT=1`` to run every kernel as plain Python/NumPy.
The fallback is slow but executes exactly the same code paths, which is
what the benchmark in ``benchmarks/bench_jit.py`` compares against.
"""
import os
import threading

DISABLE_JIT = os.environ.get("TETADAPT_DISABLE_JIT", "0").lower() not in ("", "0", "false", "no")

if not DISABLE_JIT:
    try:
        import numba
    except ImportError:  # pragma: no cover
        DISABLE_JIT = True


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache`` and ``nogil`` on, or identity when disabled."""
    if DISABLE_JIT:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return numba.njit(*args, **kwargs)


if DISABLE_JIT:
    _cas_lock = threading.Lock()

    def cas(arr, idx, expected, desired):
        """Compare-and-swap ``arr[idx]``; returns the previous value."""
        with _cas_lock:
            old = arr[idx]
            if old == expected:
                arr[idx] = desired
            return old

else:
    from numba import types
    from numba.core import cgutils
    from numba.extending import intrinsic

    @intrinsic
    def _cas_intrinsic(typingctx, arr, idx, expected, desired):
        if not isinstance(arr, types.Array) or arr.ndim != 1:
            return None
        sig = arr.dtype(arr, types.intp, arr.dtype, arr.dtype)

        def codegen(context, builder, signature, args):
            aryty = signature.args[0]
            ary = context.make_array(aryty)(context, builder, args[0])
            ptr = cgutils.get_item_pointer(context, builder, aryty, ary, [args[1]])
            res = builder.cmpxchg(ptr, args[2], args[3], "seq_cst", "seq_cst")
            return builder.extract_value(res, 0)

        return sig, codegen

    @numba.njit(cache=True, nogil=True)
    def cas(arr, idx, expected, desired):
        """Compare-and-swap ``arr[idx]``; returns the previous value."""
        return _cas_intrinsic(arr, idx, expected, desired)
