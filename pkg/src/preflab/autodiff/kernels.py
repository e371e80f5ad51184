"""Hot numeric kernels with two interchangeable backends.

The numba backend JIT-compiles fused loops for the inner-loop-heavy
operations (causally masked softmax, layer norm, GELU, Adam updates).
The numpy backend implements the identical math with vectorized numpy
and is the reference implementation.

Backend selection, checked once at import time:
    PREFLAB_BACKEND=numba   force numba for every kernel
    PREFLAB_BACKEND=numpy   force pure numpy for every kernel
    unset / auto            per-kernel mix measured on CPU-only hosts:
                            numba where loop fusion wins (layer norm),
                            numpy where SIMD transcendentals win
                            (softmax, GELU) and for the memory-bound
                            Adam update; numpy everywhere if numba is
                            unavailable

`use_backend()` switches at runtime (used by the benchmark and the
backend-parity tests); `benchmarks/bench_kernels.py` reproduces the
measurements behind the auto mix.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

# Additive mask constant: large negative instead of -inf so that
# masked logits stay finite pre-softmax and underflow to exactly 0.0
# after exponentiation.
MASK_VALUE = -1.0e9

# GELU tanh approximation constants.
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def _np_causal_softmax_fwd(logits):
    """Row softmax of (N, T, T) logits with MASK_VALUE added above the diagonal."""
    n, t, _ = logits.shape
    masked = logits + np.triu(np.full((t, t), MASK_VALUE, dtype=logits.dtype), k=1)
    masked -= masked.max(axis=-1, keepdims=True)
    probs = np.exp(masked)
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs


def _np_causal_softmax_bwd(probs, gout):
    dot = (probs * gout).sum(axis=-1, keepdims=True)
    return probs * (gout - dot)


def _np_layernorm_fwd(x, gain, bias, eps):
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gain[None, :] + bias[None, :], mean, rstd


def _np_layernorm_bwd(x, gain, mean, rstd, gout):
    xhat = (x - mean[:, None]) * rstd[:, None]
    ggain = (gout * xhat).sum(axis=0)
    gbias = gout.sum(axis=0)
    gg = gout * gain[None, :]
    m1 = gg.mean(axis=1, keepdims=True)
    m2 = (gg * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (gg - m1 - xhat * m2)
    return gx, ggain, gbias


def _np_gelu_fwd(x):
    """Returns (gelu(x), tanh term); the tanh is cached for the backward."""
    dt = x.dtype.type
    inner = dt(_GELU_C) * (x + dt(_GELU_A) * x * x * x)
    th = np.tanh(inner)
    return dt(0.5) * x * (dt(1.0) + th), th


def _np_gelu_bwd(x, th, gout):
    dt = x.dtype.type
    dinner = dt(_GELU_C) * (dt(1.0) + dt(3.0 * _GELU_A) * x * x)
    return gout * (dt(0.5) * (dt(1.0) + th) + dt(0.5) * x * (dt(1.0) - th * th) * dinner)


def _np_adam_step(param, grad, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    if wd != 0.0:
        grad = grad + wd * param
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / bc1
    vhat = v / bc2
    param -= lr * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------------------
# numba implementations (same math, explicit loops)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_causal_softmax_fwd(logits):
    n, t, _ = logits.shape
    out = np.empty_like(logits)
    for b in range(n):
        for i in range(t):
            row_max = logits[b, i, 0]
            for j in range(1, t):
                val = logits[b, i, j]
                if j > i:
                    val += MASK_VALUE
                if val > row_max:
                    row_max = val
            total = 0.0
            for j in range(t):
                val = logits[b, i, j]
                if j > i:
                    val += MASK_VALUE
                e = np.exp(val - row_max)
                out[b, i, j] = e
                total += e
            for j in range(t):
                out[b, i, j] /= total
    return out


@njit(cache=True)
def _nb_causal_softmax_bwd(probs, gout):
    n, t, _ = probs.shape
    gin = np.empty_like(probs)
    for b in range(n):
        for i in range(t):
            dot = 0.0
            for j in range(t):
                dot += probs[b, i, j] * gout[b, i, j]
            for j in range(t):
                gin[b, i, j] = probs[b, i, j] * (gout[b, i, j] - dot)
    return gin


@njit(cache=True)
def _nb_layernorm_fwd(x, gain, bias, eps):
    n, d = x.shape
    out = np.empty_like(x)
    mean = np.empty(n, dtype=x.dtype)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        mu = s / d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mu
            var += diff * diff
        var /= d
        r = 1.0 / np.sqrt(var + eps)
        mean[i] = mu
        rstd[i] = r
        for j in range(d):
            out[i, j] = (x[i, j] - mu) * r * gain[j] + bias[j]
    return out, mean, rstd


@njit(cache=True)
def _nb_layernorm_bwd(x, gain, mean, rstd, gout):
    n, d = x.shape
    gx = np.empty_like(x)
    ggain = np.zeros(d, dtype=x.dtype)
    gbias = np.zeros(d, dtype=x.dtype)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            gg = gout[i, j] * gain[j]
            ggain[j] += gout[i, j] * xhat
            gbias[j] += gout[i, j]
            m1 += gg
            m2 += gg * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            gg = gout[i, j] * gain[j]
            gx[i, j] = rstd[i] * (gg - m1 - xhat * m2)
    return gx, ggain, gbias


@njit(cache=True)
def _nb_gelu_fwd(x):
    flat = x.ravel()
    out = np.empty_like(flat)
    ths = np.empty_like(flat)
    for i in range(flat.size):
        xi = flat[i]
        inner = _GELU_C * (xi + _GELU_A * xi * xi * xi)
        th = np.tanh(inner)
        ths[i] = th
        out[i] = 0.5 * xi * (1.0 + th)
    return out.reshape(x.shape), ths.reshape(x.shape)


@njit(cache=True)
def _nb_gelu_bwd(x, th, gout):
    flat = x.ravel()
    thflat = th.ravel()
    gflat = gout.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        xi = flat[i]
        t = thflat[i]
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * xi * xi)
        out[i] = gflat[i] * (0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * dinner)
    return out.reshape(x.shape)


@njit(cache=True)
def _nb_adam_step(param, grad, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    p = param.ravel()
    g = grad.ravel()
    mm = m.ravel()
    vv = v.ravel()
    for i in range(p.size):
        gi = g[i] + wd * p[i]
        mm[i] = beta1 * mm[i] + (1.0 - beta1) * gi
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * gi * gi
        mhat = mm[i] / bc1
        vhat = vv[i] / bc2
        p[i] -= lr * mhat / (np.sqrt(vhat) + eps)


_BACKENDS = {
    "numpy": {
        "causal_softmax_fwd": _np_causal_softmax_fwd,
        "causal_softmax_bwd": _np_causal_softmax_bwd,
        "layernorm_fwd": _np_layernorm_fwd,
        "layernorm_bwd": _np_layernorm_bwd,
        "gelu_fwd": _np_gelu_fwd,
        "gelu_bwd": _np_gelu_bwd,
        "adam_step": _np_adam_step,
    },
}

if HAVE_NUMBA:
    _BACKENDS["numba"] = {
        "causal_softmax_fwd": _nb_causal_softmax_fwd,
        "causal_softmax_bwd": _nb_causal_softmax_bwd,
        "layernorm_fwd": _nb_layernorm_fwd,
        "layernorm_bwd": _nb_layernorm_bwd,
        "gelu_fwd": _nb_gelu_fwd,
        "gelu_bwd": _nb_gelu_bwd,
        "adam_step": _nb_adam_step,
    }

# Kernels where the numba loop beats vectorized numpy on a plain CPU
# (no SVML): fusion removes the temporaries that dominate layer norm.
_AUTO_NUMBA_KERNELS = ("layernorm_fwd", "layernorm_bwd")

_active_name = None
_active = None


def use_backend(name: str) -> None:
    """Select the kernel backend: 'numba', 'numpy', or the measured 'auto' mix."""
    global _active_name, _active
    if name == "auto":
        if HAVE_NUMBA:
            table = dict(_BACKENDS["numpy"])
            for key in _AUTO_NUMBA_KERNELS:
                table[key] = _BACKENDS["numba"][key]
            _active_name = "auto"
            _active = table
            return
        name = "numpy"
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {sorted(_BACKENDS)}")
    _active_name = name
    _active = _BACKENDS[name]


def backend_name() -> str:
    return _active_name


def backend_table() -> dict:
    """Implementation module ('numpy'/'numba') currently behind each kernel."""
    table = {}
    for key, fn in _active.items():
        table[key] = "numba" if HAVE_NUMBA and fn is _BACKENDS.get("numba", {}).get(key) else "numpy"
    return table


def available_backends() -> list:
    return sorted(_BACKENDS)


use_backend(os.environ.get("PREFLAB_BACKEND", "auto"))


def causal_softmax_fwd(logits):
    return _active["causal_softmax_fwd"](logits)


def causal_softmax_bwd(probs, gout):
    return _active["causal_softmax_bwd"](probs, gout)


def layernorm_fwd(x, gain, bias, eps):
    return _active["layernorm_fwd"](x, gain, bias, eps)


def layernorm_bwd(x, gain, mean, rstd, gout):
    return _active["layernorm_bwd"](x, gain, mean, rstd, gout)


def gelu_fwd(x):
    return _active["gelu_fwd"](x)


def gelu_bwd(x, th, gout):
    return _active["gelu_bwd"](x, th, gout)


def adam_step(param, grad, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    return _active["adam_step"](param, grad, m, v, lr, beta1, beta2, eps, wd, bc1, bc2)
