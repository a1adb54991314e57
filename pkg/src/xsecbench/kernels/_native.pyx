# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense-network kernels: batched forward pass and input VJP.

Matrix products go through BLAS ``dgemm`` (via scipy's Cython bindings);
activations and their derivatives are fused C loops. Arrays are C-contiguous
float64, weights stored row-major as ``(out_dim, in_dim)``.
"""

import numpy as np
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cdef enum:
    IDENTITY = 0
    RELU = 1
    SIGMOID = 2
    TANH = 3
    SOFTMAX = 4


cdef void _affine(const double[:, ::1] a, const double[:, ::1] w, const double[::1] b,
                  double[:, ::1] z) noexcept nogil:
    # z = a @ w.T + b, written as column-major z.T = w @ a.T
    cdef int n = a.shape[0], k = a.shape[1], m = w.shape[0]
    cdef int i, j
    cdef double one = 1.0
    cdef char ta = b'T'
    cdef char tb = b'N'
    for i in range(n):
        for j in range(m):
            z[i, j] = b[j]
    if n == 0 or m == 0 or k == 0:
        return
    dgemm(&ta, &tb, &m, &n, &k, &one, <double *> &w[0, 0], &k, <double *> &a[0, 0], &k,
          &one, &z[0, 0], &m)


cdef void _backprop_matmul(double[:, ::1] g, const double[:, ::1] w, double[:, ::1] out) noexcept nogil:
    # out = g @ w, written as column-major out.T = w.T @ g.T
    cdef int n = g.shape[0], m = w.shape[0], k = w.shape[1]
    cdef double one = 1.0, zero = 0.0
    cdef char t = b'N'
    if n == 0 or k == 0:
        return
    if m == 0:
        out[:, :] = 0.0
        return
    dgemm(&t, &t, &k, &n, &m, &one, <double *> &w[0, 0], &k, &g[0, 0], &m, &zero, &out[0, 0], &k)


cdef void _activate(double[:, ::1] z, double[:, ::1] a, int code) noexcept nogil:
    cdef Py_ssize_t i, j, n = z.shape[0], m = z.shape[1]
    cdef double v, mx, s
    if code == SOFTMAX:
        for i in range(n):
            mx = z[i, 0]
            for j in range(1, m):
                if z[i, j] > mx:
                    mx = z[i, j]
            s = 0.0
            for j in range(m):
                a[i, j] = exp(z[i, j] - mx)
                s += a[i, j]
            for j in range(m):
                a[i, j] = a[i, j] / s
    elif code == IDENTITY:
        a[:, :] = z
    elif code == RELU:
        for i in range(n):
            for j in range(m):
                v = z[i, j]
                a[i, j] = v if v > 0.0 else 0.0
    elif code == SIGMOID:
        for i in range(n):
            for j in range(m):
                v = z[i, j]
                if v >= 0.0:
                    a[i, j] = 1.0 / (1.0 + exp(-v))
                else:
                    s = exp(v)
                    a[i, j] = s / (1.0 + s)
    else:
        with gil:
            # numpy's vectorised tanh is several times faster than scalar libm calls
            np.tanh(np.asarray(z), out=np.asarray(a))


cdef void _activation_vjp(double[:, ::1] z, double[:, ::1] a, double[:, ::1] g, int code) noexcept nogil:
    # in place: g <- g * act'(z); softmax uses the full Jacobian
    cdef Py_ssize_t i, j, n = z.shape[0], m = z.shape[1]
    cdef double dot
    if code == IDENTITY:
        return
    if code == SOFTMAX:
        for i in range(n):
            dot = 0.0
            for j in range(m):
                dot += g[i, j] * a[i, j]
            for j in range(m):
                g[i, j] = a[i, j] * (g[i, j] - dot)
        return
    for i in range(n):
        for j in range(m):
            if code == RELU:
                if not z[i, j] > 0.0:
                    g[i, j] = 0.0
            elif code == SIGMOID:
                g[i, j] = g[i, j] * a[i, j] * (1.0 - a[i, j])
            else:
                g[i, j] = g[i, j] * (1.0 - a[i, j] * a[i, j])


cdef tuple _run(list weights, list biases, const long[::1] acts, const double[:, ::1] x, bint apply_last):
    cdef Py_ssize_t n_layers = len(weights), k
    cdef Py_ssize_t n = x.shape[0]
    cdef const double[:, ::1] a = x
    cdef double[:, ::1] z
    cdef double[:, ::1] out
    cdef const double[:, ::1] w
    zs = []
    activations = [np.asarray(x)]
    for k in range(n_layers):
        w = weights[k]
        z_arr = np.empty((n, w.shape[0]), dtype=np.float64)
        z = z_arr
        _affine(a, w, biases[k], z)
        if k < n_layers - 1 or apply_last:
            a_arr = np.empty_like(z_arr)
            out = a_arr
            _activate(z, out, acts[k])
            a = out
        else:
            a_arr = z_arr
            a = z
        zs.append(z_arr)
        activations.append(a_arr)
    return zs, activations


def forward_batch(list weights, list biases, const long[::1] acts, const double[:, ::1] x, bint apply_last):
    """Outputs of the network for each row of ``x`` (final activation skipped unless ``apply_last``)."""
    _, activations = _run(weights, biases, acts, x, apply_last)
    return activations[len(activations) - 1]


def vjp_batch(list weights, list biases, const long[::1] acts, const double[:, ::1] x,
              const double[:, ::1] cotangent, bint apply_last):
    """Return ``(outputs, grad_x)`` with ``grad_x[n] = cotangent[n] @ d out[n] / d x[n]``."""
    cdef Py_ssize_t n_layers = len(weights), k
    cdef Py_ssize_t n = x.shape[0]
    cdef double[:, ::1] g
    cdef double[:, ::1] g_prev
    cdef const double[:, ::1] w
    zs, activations = _run(weights, biases, acts, x, apply_last)
    g_arr = np.array(cotangent, dtype=np.float64, copy=True)
    g = g_arr
    for k in range(n_layers - 1, -1, -1):
        w = weights[k]
        if k < n_layers - 1 or apply_last:
            _activation_vjp(zs[k], activations[k + 1], g, acts[k])
        g_prev_arr = np.empty((n, w.shape[1]), dtype=np.float64)
        g_prev = g_prev_arr
        _backprop_matmul(g, w, g_prev)
        g_arr = g_prev_arr
        g = g_prev
    return activations[n_layers], g_arr
