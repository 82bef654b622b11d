"""Pure numpy MLP kernels (fallback when the compiled extension is absent).

Both backends implement the same three functions over float64 arrays:
ReLU hidden layers, identity output, squared-error loss on a single output
component against a constant target.
"""

from __future__ import annotations

import math

import numpy as np

NAME = "pure"


def _forward_acts(weights, biases, x):
    a = np.asarray(x, dtype=np.float64)
    last = len(weights) - 1
    acts = [a]
    for i, (w, b) in enumerate(zip(weights, biases)):
        a = w @ a + b
        if i < last:
            np.maximum(a, 0.0, out=a)
        acts.append(a)
    return acts


def forward(weights, biases, x):
    """Forward pass; returns the output vector."""
    return _forward_acts(weights, biases, x)[len(weights)]


def _backprop(weights, biases, acts, action, delta):
    grad_ws = [np.zeros_like(w) for w in weights]
    grad_bs = [np.zeros_like(b) for b in biases]
    # Output-layer error is nonzero only at the trained component.
    err = np.zeros_like(acts[len(weights)])
    err[action] = delta
    for i in range(len(weights) - 1, -1, -1):
        grad_ws[i][:] = np.outer(err, acts[i])
        grad_bs[i][:] = err
        if i > 0:
            err = weights[i].T @ err
            err[acts[i] <= 0.0] = 0.0
    return grad_ws, grad_bs


def loss_and_grads(weights, biases, x, action, target):
    """Loss 0.5*(q[action] - target)^2 and its parameter gradients.

    The target is treated as a constant (no gradient flows through it).
    Returns (loss, grad_weights, grad_biases).
    """
    acts = _forward_acts(weights, biases, x)
    delta = acts[len(weights)][action] - target
    loss = 0.5 * delta * delta
    grad_ws, grad_bs = _backprop(weights, biases, acts, action, delta)
    return loss, grad_ws, grad_bs


def train_step(weights, biases, x, action, target, lr, update_bias=True):
    """One in-place SGD step on the TD loss.

    Aborts (parameters untouched) when the loss is non-finite; returns
    (loss, applied).
    """
    acts = _forward_acts(weights, biases, x)
    delta = acts[len(weights)][action] - target
    loss = 0.5 * delta * delta
    if not math.isfinite(loss):
        return loss, False
    grad_ws, grad_bs = _backprop(weights, biases, acts, action, delta)
    for w, gw in zip(weights, grad_ws):
        w -= lr * gw
    if update_bias:
        for b, gb in zip(biases, grad_bs):
            b -= lr * gb
    return loss, True
