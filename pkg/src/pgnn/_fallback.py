"""Pure NumPy implementation of the training and rollout kernels.

Same call signatures as the compiled ``_kernels`` module.
"""

from __future__ import annotations

import numpy as np

from .network import NetParams, forward, loss_and_grad, pack, unpack
from .systems import InjectionTerm

NAME = "python"


def adam_update(theta, m, v, g, step, lr, beta1, beta2, eps):
    """In-place bias-corrected ADAM update of flat arrays at step ``step`` (>= 1)."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


def train_epoch(params: NetParams, theta, m, v, step, X, Y, F, order, batch_size,
                lr, beta1, beta2, eps):
    """Run one epoch of minibatch ADAM over ``order``, updating ``theta``, ``m``, ``v`` in place.

    Returns ``(loss_sum, n_batches, step, ok)``; ``ok`` is False when a batch
    produced a non-finite loss or gradient, in which case that batch is not applied.
    """
    net = unpack(params, theta)
    loss_sum = 0.0
    n_batches = 0
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        Fb = None if F is None else F[idx]
        try:
            loss, grads = loss_and_grad(net, X[idx], Y[idx], Fb)
        except ArithmeticError:
            return loss_sum, n_batches, step, False
        g = pack(grads)
        if not (np.isfinite(loss) and np.all(np.isfinite(g))):
            return loss_sum, n_batches, step, False
        step += 1
        adam_update(theta, m, v, g, step, lr, beta1, beta2, eps)
        loss_sum += loss
        n_batches += 1
    return loss_sum, n_batches, step, True


def rollout(params: NetParams, term: InjectionTerm | None, x0, h, n_steps, limit):
    """Forward-Euler rollout of the network from ``x0``.

    Returns ``(states, diverged_at)``: ``states`` holds every state that passed
    the guard (including ``x0``), ``diverged_at`` is the index of the first
    state that failed it, or -1.
    """
    x = np.array(x0, dtype=float)
    out = np.empty((n_steps + 1, x.size))
    out[0] = x
    inject = params.injection.layer > 0
    for k in range(n_steps):
        feat = term(x)[None] if inject else None
        try:
            x = x + h * forward(params, x, feat)
        except ArithmeticError:
            return out[: k + 1], k + 1
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > limit:
            return out[: k + 1], k + 1
        out[k + 1] = x
    return out, -1
