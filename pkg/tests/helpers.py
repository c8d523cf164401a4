"""Shared oracles for the test suite."""

import numpy as np

from pgnn.network import features_for, init_params, loss_and_grad, pack, standard_sizes, unpack

FD_STEP = 1e-6
# denominators are floored here so coordinates whose gradient is at rounding
# level (|g| below 1e-7) are judged on absolute error instead
REL_FLOOR = 1e-7


def random_problem(dim, injection, seed, batch=16, activation="tanh"):
    """A full-sized net with perturbed biases and a random regression batch."""
    rng = np.random.default_rng(seed)
    net = init_params(standard_sizes(dim), activation, injection, seed)
    theta = pack(net)
    theta += 0.1 * rng.normal(size=theta.size)
    net = unpack(net, theta)
    X = rng.uniform(-1.5, 1.5, size=(batch, dim))
    Y = rng.normal(size=(batch, dim))
    return net, theta, X, Y, features_for(net, X)


def fd_gradient_error(net, theta, X, Y, F, n_coords, seed):
    """Max relative error of reverse-mode gradients against central differences."""
    _, g = loss_and_grad(net, X, Y, F)
    grad = pack(g)
    rng = np.random.default_rng(seed)
    coords = rng.choice(theta.size, size=min(n_coords, theta.size), replace=False)
    worst = 0.0
    for i in coords:
        old = theta[i]
        theta[i] = old + FD_STEP
        lp, _ = loss_and_grad(net, X, Y, F)
        theta[i] = old - FD_STEP
        lm, _ = loss_and_grad(net, X, Y, F)
        theta[i] = old
        fd = (lp - lm) / (2 * FD_STEP)
        denom = max(abs(fd), abs(grad[i]), REL_FLOOR)
        worst = max(worst, abs(fd - grad[i]) / denom)
    return worst
