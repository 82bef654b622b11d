# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled MLP kernels. Semantics match pure.py exactly; see its docstrings."""

from libc.math cimport isfinite

import numpy as np

NAME = "compiled"


cdef void _layer_forward(double[:, ::1] w, double[::1] b, double[::1] a,
                         double[::1] out, bint relu) noexcept nogil:
    cdef Py_ssize_t rows = w.shape[0]
    cdef Py_ssize_t cols = w.shape[1]
    cdef Py_ssize_t r, c
    cdef double acc
    for r in range(rows):
        acc = b[r]
        for c in range(cols):
            acc += w[r, c] * a[c]
        if relu and acc < 0.0:
            acc = 0.0
        out[r] = acc


cdef void _backprop_err(double[:, ::1] w, double[::1] err, double[::1] act_in,
                        double[::1] out) noexcept nogil:
    # out = w.T @ err, masked by the ReLU derivative of the layer input.
    cdef Py_ssize_t rows = w.shape[0]
    cdef Py_ssize_t cols = w.shape[1]
    cdef Py_ssize_t r, c
    cdef double acc
    for c in range(cols):
        if act_in[c] <= 0.0:
            out[c] = 0.0
            continue
        acc = 0.0
        for r in range(rows):
            acc += w[r, c] * err[r]
        out[c] = acc


cdef void _accumulate_grads(double[:, ::1] gw, double[::1] gb,
                            double[::1] err, double[::1] act_in) noexcept nogil:
    cdef Py_ssize_t rows = gw.shape[0]
    cdef Py_ssize_t cols = gw.shape[1]
    cdef Py_ssize_t r, c
    cdef double e
    for r in range(rows):
        e = err[r]
        gb[r] = e
        for c in range(cols):
            gw[r, c] = e * act_in[c]


cdef void _apply_sgd(double[:, ::1] w, double[::1] b, double[::1] err,
                     double[::1] act_in, double lr, bint update_bias) noexcept nogil:
    cdef Py_ssize_t rows = w.shape[0]
    cdef Py_ssize_t cols = w.shape[1]
    cdef Py_ssize_t r, c
    cdef double e
    for r in range(rows):
        e = err[r]
        if update_bias:
            b[r] -= lr * e
        for c in range(cols):
            w[r, c] -= lr * e * act_in[c]


def _forward_acts(list weights, list biases, x):
    cdef int last = len(weights) - 1
    cdef int i
    a = np.ascontiguousarray(x, dtype=np.float64)
    acts = [a]
    for i in range(last + 1):
        out = np.empty(weights[i].shape[0], dtype=np.float64)
        _layer_forward(weights[i], biases[i], a, out, i < last)
        acts.append(out)
        a = out
    return acts


def forward(list weights, list biases, x):
    acts = _forward_acts(weights, biases, x)
    return acts[len(weights)]


def loss_and_grads(list weights, list biases, x, int action, double target):
    cdef int last = len(weights) - 1
    cdef int i
    acts = _forward_acts(weights, biases, x)
    q = acts[last + 1]
    cdef double delta = q[action] - target
    cdef double loss = 0.5 * delta * delta

    grad_ws = [np.zeros_like(w) for w in weights]
    grad_bs = [np.zeros_like(b) for b in biases]
    err = np.zeros(q.shape[0], dtype=np.float64)
    err[action] = delta
    for i in range(last, -1, -1):
        _accumulate_grads(grad_ws[i], grad_bs[i], err, acts[i])
        if i > 0:
            prev = np.empty(weights[i].shape[1], dtype=np.float64)
            _backprop_err(weights[i], err, acts[i], prev)
            err = prev
    return loss, grad_ws, grad_bs


def train_step(list weights, list biases, x, int action, double target,
               double lr, bint update_bias=True):
    cdef int last = len(weights) - 1
    cdef int i
    acts = _forward_acts(weights, biases, x)
    q = acts[last + 1]
    cdef double delta = q[action] - target
    cdef double loss = 0.5 * delta * delta
    if not isfinite(loss):
        return loss, False

    err = np.zeros(q.shape[0], dtype=np.float64)
    err[action] = delta
    for i in range(last, -1, -1):
        prev = None
        if i > 0:
            prev = np.empty(weights[i].shape[1], dtype=np.float64)
            _backprop_err(weights[i], err, acts[i], prev)
        _apply_sgd(weights[i], biases[i], err, acts[i], lr, update_bias)
        if i > 0:
            err = prev
    return loss, True
