"""Pure numpy implementation of the dense-network kernels.

Mirrors ``_native.pyx`` operation for operation; used when the compiled
extension is unavailable or ``XSECBENCH_PURE=1`` is set.
"""

import numpy as np

IDENTITY, RELU, SIGMOID, TANH, SOFTMAX = 0, 1, 2, 3, 4


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, code):
    if code == IDENTITY:
        return z.copy()
    if code == RELU:
        return np.where(z > 0.0, z, 0.0)
    if code == SIGMOID:
        return _sigmoid(z)
    if code == TANH:
        return np.tanh(z)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _activation_vjp(z, a, g, code):
    if code == IDENTITY:
        return g
    if code == RELU:
        return np.where(z > 0.0, g, 0.0)
    if code == SIGMOID:
        return g * a * (1.0 - a)
    if code == TANH:
        return g * (1.0 - a * a)
    return a * (g - (g * a).sum(axis=1, keepdims=True))


def _run(weights, biases, acts, x, apply_last):
    zs, activations = [], [x]
    a = x
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        if k < last or apply_last:
            a = _activate(z, acts[k])
        else:
            a = z
        zs.append(z)
        activations.append(a)
    return zs, activations


def forward_batch(weights, biases, acts, x, apply_last):
    """Outputs of the network for each row of ``x``.

    With ``apply_last`` false the final layer's activation is skipped and the
    pre-activation values are returned.
    """
    _, activations = _run(weights, biases, acts, x, apply_last)
    return np.ascontiguousarray(activations[-1])


def vjp_batch(weights, biases, acts, x, cotangent, apply_last):
    """Row-wise vector-Jacobian product of the network output w.r.t. its input.

    Returns ``(outputs, grad_x)`` where ``grad_x[n] = cotangent[n] @ d out[n] / d x[n]``.
    """
    zs, activations = _run(weights, biases, acts, x, apply_last)
    g = cotangent
    last = len(weights) - 1
    for k in range(last, -1, -1):
        if k < last or apply_last:
            g = _activation_vjp(zs[k], activations[k + 1], g, acts[k])
        g = g @ weights[k]
    return np.ascontiguousarray(activations[-1]), np.ascontiguousarray(g)
