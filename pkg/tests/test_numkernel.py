#!/usr/bin/env python
import math

import numpy as np
import pytest

from massl import errors
from massl import numkernel


def _fd_grad(f, x, eps=1e-5):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        plus = x.copy()
        minus = x.copy()
        plus[idx] += eps
        minus[idx] -= eps
        grad[idx] = (f(plus) - f(minus)) / (2 * eps)
    return grad


def _rel_err(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return np.max(np.abs(a - b)) / scale


@pytest.mark.parametrize(
    "vector, expected",
    [((3.0, 4.0), (0.6, 0.8)), ((0.0, 1.0, 0.0), (0.0, 1.0, 0.0))],
)
def test_l2_normalize(vector, expected):
    assert np.allclose(numkernel.l2_normalize(vector), expected, atol=1e-15)


def test_l2_normalize_rejects_zero():
    with pytest.raises(errors.NearZeroNorm):
        numkernel.l2_normalize((0.0, 0.0))


def test_l2_normalize_rows():
    out = numkernel.l2_normalize([[3.0, 4.0], [0.0, 2.0]])
    assert np.allclose(out, [[0.6, 0.8], [0.0, 1.0]])


def test_cosine_scores_examples():
    block = np.eye(3)
    assert numkernel.cosine_scores(block[0], block)[0] == 1.0
    assert numkernel.cosine_scores(block[0], block)[1] == 0.0
    assert numkernel.cosine_scores(-block[2], block)[2] == -1.0


def test_cosine_scores_dim_mismatch():
    with pytest.raises(errors.DimMismatch):
        numkernel.cosine_scores(np.ones(2), np.eye(3))


def test_cosine_scores_bounded(rng):
    for _ in range(100):
        z = numkernel.l2_normalize(rng.standard_normal(8))
        block = numkernel.l2_normalize(rng.standard_normal((16, 8)))
        scores = numkernel.cosine_scores(z, block)
        assert np.all(scores >= -1 - 1e-9)
        assert np.all(scores <= 1 + 1e-9)


@pytest.mark.parametrize("tau", [0.04, 1.0, 7.0])
def test_tempered_softmax_uniform(tau):
    assert np.allclose(numkernel.tempered_softmax(np.full(5, 0.3), tau), 0.2)


def test_tempered_softmax_analytic():
    out = numkernel.tempered_softmax([0.0, math.log(3.0)], 1.0)
    assert out == pytest.approx([0.25, 0.75], abs=1e-15)


def test_tempered_softmax_against_direct_formula():
    logits = [0.2, -0.1, 0.5]
    tau = 0.1
    exps = [math.exp(v / tau) for v in logits]
    total = math.fsum(exps)
    expected = [e / total for e in exps]
    assert numkernel.tempered_softmax(logits, tau) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("tau", [0.0, -0.5])
def test_tempered_softmax_rejects_temperature(tau):
    with pytest.raises(errors.NonPositiveTemperature):
        numkernel.tempered_softmax([0.0, 1.0], tau)


def test_tempered_softmax_small_temperature_is_finite():
    out = numkernel.tempered_softmax([1.0, -1.0, 0.999], 0.001)
    assert np.all(np.isfinite(out))
    assert out.sum() == pytest.approx(1.0, abs=1e-12)


def test_tempered_softmax_properties(rng):
    for _ in range(200):
        logits = rng.standard_normal(rng.integers(2, 40)) * 3
        tau = rng.uniform(0.02, 2.0)
        p = numkernel.tempered_softmax(logits, tau)
        assert abs(p.sum() - 1.0) <= 1e-12
        shifted = numkernel.tempered_softmax(logits + rng.normal() * 10, tau)
        assert np.argmax(shifted) == np.argmax(p)
        assert np.allclose(shifted, p, atol=1e-12)


def test_cross_entropy_uniform():
    n = 7
    p = np.full(n, 1.0 / n)
    assert numkernel.cross_entropy(p, np.log(p)) == pytest.approx(math.log(n), abs=1e-12)


def test_cross_entropy_one_hot():
    pred_log = numkernel.log_softmax([0.3, 1.2, -0.4], 1.0)
    target = np.array([0.0, 1.0, 0.0])
    assert numkernel.cross_entropy(target, pred_log) == pytest.approx(-pred_log[1], abs=1e-15)


def test_cross_entropy_direct_formula():
    pred_log = numkernel.log_softmax([0.0, math.log(3.0)], 1.0)
    expected = -(0.25 * math.log(0.25) + 0.75 * math.log(0.75))
    value = numkernel.cross_entropy([0.25, 0.75], pred_log)
    assert value == pytest.approx(expected, abs=1e-14)


def test_cross_entropy_ignores_zero_target_weight():
    with np.errstate(all="raise"):
        value = numkernel.cross_entropy([1.0, 0.0], [math.log(1.0), -np.inf])
    assert value == 0.0


def test_cross_entropy_equals_entropy_on_itself(rng):
    for _ in range(1000):
        p = rng.dirichlet(np.ones(rng.integers(2, 20)))
        diff = numkernel.cross_entropy(p, np.log(p)) - numkernel.entropy(p)
        assert abs(diff) <= 1e-12


def test_ce_softmax_grad_zero_at_fixed_point():
    logits = np.array([0.4, -1.0, 2.0])
    target = numkernel.tempered_softmax(logits, 0.5)
    assert np.allclose(numkernel.ce_softmax_grad(logits, target, 0.5), 0.0, atol=1e-15)


def test_ce_softmax_grad_matches_finite_differences(rng):
    for _ in range(100):
        n = int(rng.integers(2, 65))
        logits = rng.standard_normal(n)
        target = rng.dirichlet(np.ones(n))
        tau = rng.uniform(0.5, 2.0)
        grad = numkernel.ce_softmax_grad(logits, target, tau)
        assert abs(grad.sum()) <= 1e-12

        def loss(x, target=target, tau=tau):
            return numkernel.cross_entropy(target, numkernel.log_softmax(x, tau))

        assert _rel_err(grad, _fd_grad(loss, logits)) <= 1e-6
