"""Central-difference verification of the engine's gradient rules."""

import numpy as np
import pytest

from preflab import autodiff as ad
from preflab.autodiff import tensor as tz


def test_linear_map_passes():
    rng = np.random.default_rng(0)
    w = ad.parameter(rng.normal(scale=0.02, size=(4, 3)), dtype=np.float64)
    b = ad.parameter(np.zeros(3), dtype=np.float64)
    x = ad.Tensor(rng.normal(size=(5, 4)), dtype=np.float64)

    def f():
        return ad.sum_all(ad.add_bias(ad.matmul(x, w), b))

    report = ad.grad_check(f, {"w": w, "b": b}, step=1e-5, tol=1e-4)
    assert report.passed, report.summary()


def test_two_layer_composition_passes():
    rng = np.random.default_rng(1)
    w1 = ad.parameter(rng.normal(scale=0.02, size=(6, 8)), dtype=np.float64)
    b1 = ad.parameter(np.zeros(8), dtype=np.float64)
    w2 = ad.parameter(rng.normal(scale=0.02, size=(8, 1)), dtype=np.float64)
    gain = ad.parameter(np.ones(8), dtype=np.float64)
    bias = ad.parameter(np.zeros(8), dtype=np.float64)
    x = ad.Tensor(rng.normal(size=(7, 6)), dtype=np.float64)

    def f():
        h = ad.gelu(ad.add_bias(ad.matmul(x, w1), b1))
        h = ad.layer_norm(h, gain, bias)
        return ad.sum_all(ad.mul(ad.matmul(h, w2), ad.matmul(h, w2)))

    params = {"w1": w1, "b1": b1, "w2": w2, "gain": gain, "bias": bias}
    report = ad.grad_check(f, params, step=1e-5, tol=1e-4)
    assert report.passed, report.summary()


def test_attention_path_passes():
    rng = np.random.default_rng(2)
    wq = ad.parameter(rng.normal(scale=0.02, size=(5, 4)), dtype=np.float64)
    wk = ad.parameter(rng.normal(scale=0.02, size=(5, 4)), dtype=np.float64)
    wv = ad.parameter(rng.normal(scale=0.02, size=(5, 4)), dtype=np.float64)
    x = ad.Tensor(rng.normal(size=(6, 5)), dtype=np.float64)

    def f():
        q, k, v = ad.matmul(x, wq), ad.matmul(x, wk), ad.matmul(x, wv)
        scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 0.5)
        return ad.sum_all(ad.mul(ad.matmul(ad.masked_softmax(scores), v), ad.matmul(ad.masked_softmax(scores), v)))

    report = ad.grad_check(f, {"wq": wq, "wk": wk, "wv": wv}, step=1e-5, tol=1e-4)
    assert report.passed, report.summary()


def test_corrupted_gradient_rule_is_flagged():
    w = ad.parameter(np.array([[0.3]]), dtype=np.float64)
    x = ad.Tensor(np.array([[2.0]]), dtype=np.float64)

    def bad_mul(a, b):
        # Deliberately wrong vjp: reports dL/da = g instead of g * b.
        def vjp(g):
            tz._accum(a, g)
            tz._accum(b, g * a.data)

        return tz._result(a.data * b.data, (a, b), vjp)

    def f():
        return ad.sum_all(bad_mul(w, ad.mul(x, x)))

    report = ad.grad_check(f, {"w": w}, step=1e-5, tol=1e-4)
    assert not report.passed
    assert report.entries[0].max_rel_err > 1e-2


def test_float32_params_rejected():
    w = ad.parameter(np.ones((2, 2)), dtype=np.float32)
    with pytest.raises(ad.ContractError):
        ad.grad_check(lambda: ad.sum_all(ad.mul(w, w)), {"w": w})
