"""Backend parity: the compiled extension must match the numpy fallback."""

from __future__ import annotations

import math

import numpy as np
import pytest

from qtune import _kernels
from qtune._kernels import available_backends, backend_name, pure


def random_net(rng, sizes):
    weights = [
        np.ascontiguousarray(rng.normal(size=(o, i)))
        for i, o in zip(sizes, sizes[1:])
    ]
    biases = [np.ascontiguousarray(rng.normal(size=o)) for o in sizes[1:]]
    return weights, biases


def test_backend_selected():
    assert backend_name() in ("pure", "compiled")
    assert "pure" in available_backends()


def test_pure_nonfinite_abort():
    weights = [np.array([[1e200, 1e200]])]
    biases = [np.zeros(1)]
    with np.errstate(over="ignore", invalid="ignore"):
        loss, applied = pure.train_step(
            weights, biases, np.array([1e200, 1e200]), 0, 0.0, 0.1
        )
    assert not applied and not math.isfinite(loss)
    assert weights[0][0, 0] == 1e200


compiled = available_backends().get("compiled")
needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")


@needs_compiled
def test_forward_parity():
    rng = np.random.default_rng(0)
    for _ in range(30):
        sizes = [int(rng.integers(1, 9)) for _ in range(int(rng.integers(2, 5)))]
        ws, bs = random_net(rng, sizes)
        x = rng.normal(size=sizes[0])
        assert np.allclose(
            pure.forward(ws, bs, x), compiled.forward(ws, bs, x), atol=1e-12
        )


@needs_compiled
def test_grads_parity():
    rng = np.random.default_rng(1)
    for _ in range(30):
        sizes = [int(rng.integers(1, 9)) for _ in range(int(rng.integers(2, 5)))]
        ws, bs = random_net(rng, sizes)
        x = rng.normal(size=sizes[0])
        action = int(rng.integers(sizes[-1]))
        target = float(rng.normal())
        l1, gw1, gb1 = pure.loss_and_grads(ws, bs, x, action, target)
        l2, gw2, gb2 = compiled.loss_and_grads(ws, bs, x, action, target)
        assert l1 == pytest.approx(l2, abs=1e-12)
        for a, b in zip(gw1 + gb1, gw2 + gb2):
            assert np.allclose(a, b, atol=1e-12)


@needs_compiled
def test_train_step_parity():
    rng = np.random.default_rng(2)
    for _ in range(30):
        sizes = [int(rng.integers(1, 9)) for _ in range(int(rng.integers(2, 5)))]
        ws, bs = random_net(rng, sizes)
        ws2 = [w.copy() for w in ws]
        bs2 = [b.copy() for b in bs]
        x = rng.normal(size=sizes[0])
        action = int(rng.integers(sizes[-1]))
        target = float(rng.normal())
        l1, ok1 = pure.train_step(ws, bs, x, action, target, 0.05)
        l2, ok2 = compiled.train_step(ws2, bs2, x, action, target, 0.05)
        assert ok1 and ok2 and l1 == pytest.approx(l2, abs=1e-12)
        for a, b in zip(ws + bs, ws2 + bs2):
            assert np.allclose(a, b, atol=1e-12)


@needs_compiled
def test_compiled_nonfinite_abort():
    weights = [np.array([[1e200, 1e200]])]
    biases = [np.zeros(1)]
    loss, applied = compiled.train_step(
        weights, biases, np.array([1e200, 1e200]), 0, 0.0, 0.1
    )
    assert not applied and not math.isfinite(loss)
    assert weights[0][0, 0] == 1e200


@needs_compiled
def test_update_bias_flag_parity():
    rng = np.random.default_rng(3)
    ws, bs = random_net(rng, [3, 2])
    ws2 = [w.copy() for w in ws]
    bs2 = [b.copy() for b in bs]
    x = rng.normal(size=3)
    pure.train_step(ws, bs, x, 1, 0.7, 0.1, False)
    compiled.train_step(ws2, bs2, x, 1, 0.7, 0.1, False)
    assert np.array_equal(bs[0], bs2[0])  # biases untouched by both
    assert np.allclose(ws[0], ws2[0], atol=1e-12)


def test_env_override_selects_pure(monkeypatch):
    import importlib

    monkeypatch.setenv("QTUNE_PURE_PYTHON", "1")
    mod = importlib.reload(_kernels)
    try:
        assert mod.backend_name() == "pure"
    finally:
        monkeypatch.delenv("QTUNE_PURE_PYTHON")
        importlib.reload(_kernels)
