"""Shared numerical oracles for the test suite."""

import numpy as np


def rel_err(a, b, floor=1e-8):
    """Elementwise |a - b| / max(|a|, |b|, floor)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(f, arr, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (in place)."""
    g = np.zeros_like(arr)
    flat, gf = arr.reshape(-1), g.reshape(-1)
    for n in range(flat.size):
        old = flat[n]
        flat[n] = old + h
        up = f()
        flat[n] = old - h
        down = f()
        flat[n] = old
        gf[n] = (up - down) / (2 * h)
    return g


def check_grads(params, build_loss, h=1e-5, floor=1e-8):
    """Max relative error between tape gradients and central differences.

    ``build_loss(tape)`` must record the loss on ``tape`` using ``params``.
    """
    from alignnd import nn

    for p in params:
        p.zero_grad()
    tape = nn.Tape()
    tape.backward(build_loss(tape))
    worst = 0.0
    for p in params:
        num = numeric_grad(lambda: float(build_loss(nn.Tape()).value), p.value, h)
        worst = max(worst, float(rel_err(p.grad, num, floor).max(initial=0.0)))
    return worst
