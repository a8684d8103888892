"""Numpy implementation of the training kernels (fallback backend)."""

import numpy as np

BACKEND = "numpy"


def branch_forward(x, w1, b1, w2, b2, w3, b3):
    """Two tanh hidden layers and a linear output; returns (a1, a2, out)."""
    a1 = np.tanh(x @ w1 + b1)
    a2 = np.tanh(a1 @ w2 + b2)
    out = a2 @ w3 + b3
    return a1, a2, out


def branch_backward(x, a1, a2, dout, w2, w3):
    """Gradients for branch_forward given d(loss)/d(out).

    Returns (gw1, gb1, gw2, gb2, gw3, gb3).
    """
    gw3 = a2.T @ dout
    gb3 = dout.sum(axis=0)
    da2 = dout @ w3.T
    dz2 = da2 * (1.0 - a2 * a2)
    gw2 = a1.T @ dz2
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ w2.T
    dz1 = da1 * (1.0 - a1 * a1)
    gw1 = x.T @ dz1
    gb1 = dz1.sum(axis=0)
    return gw1, gb1, gw2, gb2, gw3, gb3


def adam_update(params, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """In-place Adam step with bias correction; `step` is the new step count.

    weight_decay is added to the gradient before the moment updates.
    """
    g = grad + weight_decay * params if weight_decay != 0.0 else grad
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)
