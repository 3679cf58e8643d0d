"""Fused elementwise kernels for the hot attention path.

The row softmax and its backward touch length**2-sized score matrices, which
dominates wall time on long token sequences; the fused numba versions make a
single pass per array instead of one pass per numpy op.  Every kernel is
row-local, so results are bit-identical regardless of how rows are split
across threads.  Plain numpy fallbacks keep the package importable when
numba is unavailable.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.special import erf as _erf

# the default workqueue threading layer pays ~10 ms per parallel launch on
# some hosts; OpenMP launches in microseconds, but its threads must sleep
# between launches or they starve the BLAS threads on small machines
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
os.environ.setdefault("OMP_WAIT_POLICY", "PASSIVE")

try:
    import numba as _nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _nb = None
    HAVE_NUMBA = False

_SQRT1_2 = float(np.sqrt(0.5))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))

# below these sizes the parallel launch, or the jit call itself, costs more
# than it saves
_PARALLEL_MIN_SIZE = 1 << 17
_SERIAL_MIN_SIZE = 1 << 12


def _dispatch(*arrays) -> str:
    if not HAVE_NUMBA or not all(a.flags.c_contiguous for a in arrays):
        return "numpy"
    size = arrays[0].size
    if size >= _PARALLEL_MIN_SIZE:
        return "parallel"
    if size >= _SERIAL_MIN_SIZE:
        return "serial"
    return "numpy"


def _softmax_rows_np(x, out):
    np.subtract(x, x.max(axis=1, keepdims=True), out=out)
    np.exp(out, out=out)
    out /= out.sum(axis=1, keepdims=True)


def _softmax_backward_rows_np(attn, dattn, out):
    inner = np.einsum("ij,ij->i", attn, dattn)
    np.subtract(dattn, inner[:, None], out=out)
    out *= attn


def _gelu_np(x, out):
    np.multiply(x, 0.5 * (1.0 + _erf(x * _SQRT1_2)), out=out)


def _gelu_backward_np(x, dy, out):
    phi = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    np.multiply(dy, 0.5 * (1.0 + _erf(x * _SQRT1_2)) + x * phi, out=out)


if HAVE_NUMBA:
    import math

    def _softmax_rows_body(x, out):  # pragma: no cover - compiled
        n, m = x.shape
        for i in _nb.prange(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            total = x[i, 0] - x[i, 0]  # typed zero keeps f32 rows in f32
            for j in range(m):
                e = np.exp(x[i, j] - mx)
                out[i, j] = e
                total += e
            inv = 1.0 / total
            for j in range(m):
                out[i, j] *= inv

    def _softmax_backward_rows_body(attn, dattn, out):  # pragma: no cover
        n, m = attn.shape
        for i in _nb.prange(n):
            inner = attn[i, 0] - attn[i, 0]
            for j in range(m):
                inner += attn[i, j] * dattn[i, j]
            for j in range(m):
                out[i, j] = attn[i, j] * (dattn[i, j] - inner)

    def _gelu_body(x, out):  # pragma: no cover
        n = x.size
        xf = x.reshape(n)
        of = out.reshape(n)
        for i in _nb.prange(n):
            v = xf[i]
            of[i] = v * 0.5 * (1.0 + math.erf(v * _SQRT1_2))

    def _gelu_backward_body(x, dy, out):  # pragma: no cover
        n = x.size
        xf = x.reshape(n)
        df = dy.reshape(n)
        of = out.reshape(n)
        for i in _nb.prange(n):
            v = xf[i]
            phi = np.exp(-0.5 * v * v) * _INV_SQRT_2PI
            of[i] = df[i] * (0.5 * (1.0 + math.erf(v * _SQRT1_2)) + v * phi)

    def _compile_pair(body):
        return {
            "parallel": _nb.njit(parallel=True, fastmath=True, cache=True)(body),
            "serial": _nb.njit(parallel=False, fastmath=True, cache=True)(body),
        }

    _softmax_jit = _compile_pair(_softmax_rows_body)
    _softmax_backward_jit = _compile_pair(_softmax_backward_rows_body)
    _gelu_jit = _compile_pair(_gelu_body)
    _gelu_backward_jit = _compile_pair(_gelu_backward_body)

    try:
        _probe = np.zeros((2, 2))
        _softmax_jit["parallel"](_probe, np.empty_like(_probe))
    except Exception:  # requested threading layer unavailable: stay serial
        for _pair in (_softmax_jit, _softmax_backward_jit, _gelu_jit, _gelu_backward_jit):
            _pair["parallel"] = _pair["serial"]


def softmax_rows(x, out=None):
    """Row-wise softmax with max subtraction; 2-D input, returns ``out``."""
    if out is None:
        out = np.empty_like(x)
    how = _dispatch(x, out)
    if how == "numpy":
        _softmax_rows_np(x, out)
    else:
        _softmax_jit[how](x, out)
    return out


def softmax_backward_rows(attn, dattn, out=None):
    """Gradient through a row softmax: attn * (dattn - rowdot(attn, dattn))."""
    if out is None:
        out = np.empty_like(attn)
    how = _dispatch(attn, dattn, out)
    if how == "numpy":
        _softmax_backward_rows_np(attn, dattn, out)
    else:
        _softmax_backward_jit[how](attn, dattn, out)
    return out


def gelu(x, out=None):
    """Exact (erf-based) GELU."""
    if out is None:
        out = np.empty_like(x)
    how = _dispatch(x, out)
    if how == "numpy":
        _gelu_np(x, out)
    else:
        _gelu_jit[how](x, out)
    return out


def gelu_backward(x, dy, out=None):
    """dy times the GELU derivative evaluated at the pre-activation x."""
    if out is None:
        out = np.empty_like(x)
    how = _dispatch(x, dy, out)
    if how == "numpy":
        _gelu_backward_np(x, dy, out)
    else:
        _gelu_backward_jit[how](x, dy, out)
    return out
